#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "posebench/eval_poses.hpp"
#include "posebench/refine.hpp"
#include "posebench/synth.hpp"

namespace posebench {

// --- strict JSON configuration -------------------------------------------
// Field names mirror the owning structs exactly; unknown keys are errors.

RefineConfig refine_config_from_json(const nlohmann::json& j);
nlohmann::json refine_config_to_json(const RefineConfig& cfg);

SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json synth_config_to_json(const SynthConfig& cfg);

struct SceneSpec {
  std::string name;
  std::filesystem::path model_dir;
  std::filesystem::path features_dir;
  std::filesystem::path gt_dir;  // empty: no ground truth
};

struct EvalThresholds {
  double rot_thresh_deg = 1.0;
  std::vector<double> pos_thresholds = {0.05};
};

struct BenchConfig {
  std::string label = "default";
  RefineConfig refine;
  EvalThresholds eval;
  std::vector<SceneSpec> scenes;
};

BenchConfig bench_config_from_json(const nlohmann::json& j);
nlohmann::json bench_config_to_json(const BenchConfig& cfg);
nlohmann::json load_json_file(const std::filesystem::path& path);

// --- bench driver ----------------------------------------------------------

struct SceneOutcome {
  std::string scene;
  StageTimings timings;  // a failed stage is recorded as 0 seconds
  bool failed = false;
  std::string failed_stage;
  std::map<std::string, double> metrics;
  std::optional<PoseErrorReport> pose_report;
};

struct BenchRun {
  std::string label;
  EvalThresholds eval;
  std::vector<SceneOutcome> scenes;
};

// Model directory loader that accepts either format (binary preferred).
SparseModel read_model_auto(const std::filesystem::path& directory);

// Runs refinement + evaluation per scene. jobs > 1 processes scenes in
// parallel; per-scene timings stay wall-clock either way.
BenchRun run_bench(const BenchConfig& cfg, int jobs = 1);

// runtimes.csv, metrics.csv, accuracy.csv and config.json under out_dir.
void write_bench_outputs(const BenchRun& run, const BenchConfig& cfg,
                         const std::filesystem::path& out_dir);

// --- CSV schemas, each round-trippable by its own reader --------------------

struct RuntimeRow {
  std::string scene;
  std::string stage;
  double seconds = 0.0;
};
void write_runtimes_csv(const std::vector<RuntimeRow>& rows,
                        const std::filesystem::path& path);
std::vector<RuntimeRow> read_runtimes_csv(const std::filesystem::path& path);

struct ScalarMetricRow {
  std::string scene;
  std::string metric;
  double value = 0.0;
};
void write_metrics_csv(const std::vector<ScalarMetricRow>& rows,
                       const std::filesystem::path& path);
std::vector<ScalarMetricRow> read_metrics_csv(const std::filesystem::path& path);

struct AccuracyRow {
  double rot_thresh_deg = 0.0;
  double pos_thresh = 0.0;
  double percentage = 0.0;
};
void write_accuracy_csv(const std::vector<AccuracyRow>& rows,
                        const std::filesystem::path& path);
std::vector<AccuracyRow> read_accuracy_csv(const std::filesystem::path& path);

struct TradeoffRow {
  std::string config_label;
  double total_seconds_mean = 0.0;
  double metric_value = 0.0;
};
// One row per run: the scene-average total reconstruction time (failed
// stages contribute 0 seconds) against the scene-average of `metric`
// (scenes without the metric contribute 0, the dummy-value penalization).
std::vector<TradeoffRow> emit_tradeoff_table(std::span<const BenchRun> runs,
                                             const std::string& metric);
void write_tradeoff_csv(const std::vector<TradeoffRow>& rows,
                        const std::filesystem::path& path);
std::vector<TradeoffRow> read_tradeoff_csv(const std::filesystem::path& path);

}  // namespace posebench
