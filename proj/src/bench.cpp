#include "posebench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "posebench/error.hpp"
#include "posebench/model_io.hpp"

namespace posebench {

namespace {

using nlohmann::json;

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& context) {
  if (!j.is_object()) throw Error(context + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw Error("unknown key '" + key + "' in " + context);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string format_real(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

double parse_real(const std::string& token, const std::string& context) {
  try {
    size_t pos = 0;
    const double value = std::stod(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw IoError("malformed real '" + token + "' in " + context);
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw IoError("bad CSV header in " + path.string() + ": expected '" +
                  header + "', got '" + line + "'");
  }
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream stream(line);
    std::string field;
    while (std::getline(stream, field, ',')) fields.push_back(field);
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::ofstream open_csv(const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header << '\n';
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

RefineConfig refine_config_from_json(const json& j) {
  require_keys(j,
               {"k_nearest", "max_ray_angle_deg", "feature_budget",
                "verify_threshold_px", "matching", "thresholds", "ba",
                "max_outer_iters", "min_change_fraction"},
               "refine config");
  RefineConfig cfg;
  read_field(j, "k_nearest", cfg.k_nearest);
  read_field(j, "max_ray_angle_deg", cfg.max_ray_angle_deg);
  read_field(j, "feature_budget", cfg.feature_budget);
  read_field(j, "verify_threshold_px", cfg.verify_threshold_px);
  read_field(j, "max_outer_iters", cfg.max_outer_iters);
  read_field(j, "min_change_fraction", cfg.min_change_fraction);
  if (j.contains("matching")) {
    const json& m = j.at("matching");
    require_keys(m, {"max_distance", "ratio"}, "matching options");
    if (m.contains("max_distance")) {
      cfg.matching.max_distance = m.at("max_distance").get<float>();
    }
    if (m.contains("ratio")) cfg.matching.ratio = m.at("ratio").get<float>();
  }
  if (j.contains("thresholds")) {
    const json& t = j.at("thresholds");
    require_keys(t, {"max_reproj_px", "min_tri_angle_deg", "min_track_len"},
                 "triangulation thresholds");
    read_field(t, "max_reproj_px", cfg.thresholds.max_reproj_px);
    read_field(t, "min_tri_angle_deg", cfg.thresholds.min_tri_angle_deg);
    read_field(t, "min_track_len", cfg.thresholds.min_track_len);
    if (!(cfg.thresholds.max_reproj_px > 0.0) ||
        !(cfg.thresholds.min_tri_angle_deg > 0.0) ||
        cfg.thresholds.min_track_len <= 0) {
      throw Error("triangulation thresholds must be positive");
    }
  }
  if (j.contains("ba")) {
    const json& b = j.at("ba");
    require_keys(b,
                 {"max_iterations", "rel_cost_tol", "robust_loss",
                  "huber_delta_px", "refine_flags", "damping_init"},
                 "ba options");
    read_field(b, "max_iterations", cfg.ba.max_iterations);
    read_field(b, "rel_cost_tol", cfg.ba.rel_cost_tol);
    read_field(b, "huber_delta_px", cfg.ba.huber_delta_px);
    read_field(b, "damping_init", cfg.ba.damping_init);
    if (b.contains("robust_loss")) {
      const std::string loss = b.at("robust_loss").get<std::string>();
      if (loss == "none") {
        cfg.ba.loss = RobustLoss::kNone;
      } else if (loss == "huber") {
        cfg.ba.loss = RobustLoss::kHuber;
      } else {
        throw Error("unknown robust_loss '" + loss + "'");
      }
    }
    if (b.contains("refine_flags")) {
      const json& f = b.at("refine_flags");
      require_keys(f, {"poses", "points", "focal", "principal_point", "distortion"},
                   "refine_flags");
      read_field(f, "poses", cfg.ba.refine_poses);
      read_field(f, "points", cfg.ba.refine_points);
      read_field(f, "focal", cfg.ba.refine_focal);
      read_field(f, "principal_point", cfg.ba.refine_principal_point);
      read_field(f, "distortion", cfg.ba.refine_distortion);
    }
  }
  return cfg;
}

json refine_config_to_json(const RefineConfig& cfg) {
  json j;
  j["k_nearest"] = cfg.k_nearest;
  j["max_ray_angle_deg"] = cfg.max_ray_angle_deg;
  j["feature_budget"] = cfg.feature_budget;
  j["verify_threshold_px"] = cfg.verify_threshold_px;
  json m = json::object();
  if (cfg.matching.max_distance) m["max_distance"] = *cfg.matching.max_distance;
  if (cfg.matching.ratio) m["ratio"] = *cfg.matching.ratio;
  j["matching"] = m;
  j["thresholds"] = {{"max_reproj_px", cfg.thresholds.max_reproj_px},
                     {"min_tri_angle_deg", cfg.thresholds.min_tri_angle_deg},
                     {"min_track_len", cfg.thresholds.min_track_len}};
  j["ba"] = {{"max_iterations", cfg.ba.max_iterations},
             {"rel_cost_tol", cfg.ba.rel_cost_tol},
             {"robust_loss", cfg.ba.loss == RobustLoss::kHuber ? "huber" : "none"},
             {"huber_delta_px", cfg.ba.huber_delta_px},
             {"refine_flags",
              {{"poses", cfg.ba.refine_poses},
               {"points", cfg.ba.refine_points},
               {"focal", cfg.ba.refine_focal},
               {"principal_point", cfg.ba.refine_principal_point},
               {"distortion", cfg.ba.refine_distortion}}},
             {"damping_init", cfg.ba.damping_init}};
  j["max_outer_iters"] = cfg.max_outer_iters;
  j["min_change_fraction"] = cfg.min_change_fraction;
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  require_keys(j,
               {"n_cameras", "n_points", "layout", "scene_radius",
                "camera_distance", "camera_model", "focal_px", "image_size",
                "distortion_params", "pixel_noise_sigma", "rot_noise_deg",
                "pos_noise_frac", "outlier_fraction", "seed", "descriptor_dim",
                "descriptor_noise"},
               "synth config");
  SynthConfig cfg;
  read_field(j, "n_cameras", cfg.n_cameras);
  read_field(j, "n_points", cfg.n_points);
  if (j.contains("layout")) {
    const std::string layout = j.at("layout").get<std::string>();
    if (layout == "ring") {
      cfg.layout = SceneLayout::kRing;
    } else if (layout == "line") {
      cfg.layout = SceneLayout::kLine;
    } else if (layout == "grid") {
      cfg.layout = SceneLayout::kGrid;
    } else {
      throw Error("unknown layout '" + layout + "'");
    }
  }
  read_field(j, "scene_radius", cfg.scene_radius);
  read_field(j, "camera_distance", cfg.camera_distance);
  if (j.contains("camera_model")) {
    cfg.camera_model =
        camera_model_from_name(j.at("camera_model").get<std::string>());
  }
  read_field(j, "focal_px", cfg.focal_px);
  read_field(j, "image_size", cfg.image_size);
  if (j.contains("distortion_params")) {
    cfg.distortion_params = j.at("distortion_params").get<std::vector<double>>();
  }
  read_field(j, "pixel_noise_sigma", cfg.pixel_noise_sigma);
  read_field(j, "rot_noise_deg", cfg.rot_noise_deg);
  read_field(j, "pos_noise_frac", cfg.pos_noise_frac);
  read_field(j, "outlier_fraction", cfg.outlier_fraction);
  read_field(j, "seed", cfg.seed);
  read_field(j, "descriptor_dim", cfg.descriptor_dim);
  read_field(j, "descriptor_noise", cfg.descriptor_noise);
  return cfg;
}

json synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["n_cameras"] = cfg.n_cameras;
  j["n_points"] = cfg.n_points;
  j["layout"] = cfg.layout == SceneLayout::kRing   ? "ring"
                : cfg.layout == SceneLayout::kLine ? "line"
                                                   : "grid";
  j["scene_radius"] = cfg.scene_radius;
  j["camera_distance"] = cfg.camera_distance;
  j["camera_model"] = std::string(camera_model_name(cfg.camera_model));
  j["focal_px"] = cfg.focal_px;
  j["image_size"] = cfg.image_size;
  j["distortion_params"] = cfg.distortion_params;
  j["pixel_noise_sigma"] = cfg.pixel_noise_sigma;
  j["rot_noise_deg"] = cfg.rot_noise_deg;
  j["pos_noise_frac"] = cfg.pos_noise_frac;
  j["outlier_fraction"] = cfg.outlier_fraction;
  j["seed"] = cfg.seed;
  j["descriptor_dim"] = cfg.descriptor_dim;
  j["descriptor_noise"] = cfg.descriptor_noise;
  return j;
}

BenchConfig bench_config_from_json(const json& j) {
  require_keys(j, {"label", "refine", "eval", "scenes"}, "bench config");
  BenchConfig cfg;
  read_field(j, "label", cfg.label);
  if (j.contains("refine")) cfg.refine = refine_config_from_json(j.at("refine"));
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    require_keys(e, {"rot_thresh_deg", "pos_thresholds"}, "eval thresholds");
    read_field(e, "rot_thresh_deg", cfg.eval.rot_thresh_deg);
    if (e.contains("pos_thresholds")) {
      cfg.eval.pos_thresholds = e.at("pos_thresholds").get<std::vector<double>>();
    }
  }
  if (!j.contains("scenes")) throw Error("bench config needs a 'scenes' list");
  for (const json& s : j.at("scenes")) {
    require_keys(s, {"name", "model", "features", "gt"}, "scene spec");
    SceneSpec spec;
    spec.name = s.at("name").get<std::string>();
    spec.model_dir = s.at("model").get<std::string>();
    spec.features_dir = s.at("features").get<std::string>();
    if (s.contains("gt")) spec.gt_dir = s.at("gt").get<std::string>();
    cfg.scenes.push_back(std::move(spec));
  }
  std::set<std::string> names;
  for (const SceneSpec& s : cfg.scenes) {
    if (!names.insert(s.name).second) {
      throw Error("duplicate scene name '" + s.name + "' in bench config");
    }
  }
  return cfg;
}

json bench_config_to_json(const BenchConfig& cfg) {
  json j;
  j["label"] = cfg.label;
  j["refine"] = refine_config_to_json(cfg.refine);
  j["eval"] = {{"rot_thresh_deg", cfg.eval.rot_thresh_deg},
               {"pos_thresholds", cfg.eval.pos_thresholds}};
  json scenes = json::array();
  for (const SceneSpec& s : cfg.scenes) {
    json scene;
    scene["name"] = s.name;
    scene["model"] = s.model_dir.string();
    scene["features"] = s.features_dir.string();
    if (!s.gt_dir.empty()) scene["gt"] = s.gt_dir.string();
    scenes.push_back(scene);
  }
  j["scenes"] = scenes;
  return j;
}

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

SparseModel read_model_auto(const std::filesystem::path& directory) {
  if (std::filesystem::exists(directory / "cameras.bin")) {
    return read_model(directory, ModelFormat::kBinary);
  }
  if (std::filesystem::exists(directory / "cameras.txt")) {
    return read_model(directory, ModelFormat::kText);
  }
  throw IoError("no cameras.bin or cameras.txt in " + directory.string());
}

namespace {

SceneOutcome run_scene(const SceneSpec& spec, const BenchConfig& cfg) {
  SceneOutcome outcome;
  outcome.scene = spec.name;

  SparseModel gt;
  const bool has_gt = !spec.gt_dir.empty();
  if (has_gt) gt = read_model_auto(spec.gt_dir);

  RefineResult refined;
  try {
    const SparseModel initial = read_model_auto(spec.model_dir);
    const auto features = read_feature_directory(spec.features_dir);
    refined = run_refinement(initial, features, cfg.refine);
    outcome.timings = refined.timings;
  } catch (const RefineError& e) {
    outcome.failed = true;
    outcome.failed_stage = e.stage();
    outcome.timings = e.partial_timings();
  }
  // Domain/I/O errors outside the staged pipeline surface to the caller.

  outcome.metrics["failed"] = outcome.failed ? 1.0 : 0.0;
  if (!outcome.failed) {
    outcome.metrics["num_points"] =
        static_cast<double>(refined.model.points.size());
    size_t obs = 0;
    for (const auto& [id, p] : refined.model.points) obs += p.track.size();
    outcome.metrics["num_observations"] = static_cast<double>(obs);
    outcome.metrics["mean_reproj_px"] = ba_mean_reprojection_px(refined.model);
    outcome.metrics["total_seconds"] = outcome.timings.total;
  }

  if (has_gt) {
    PoseErrorReport report;
    if (outcome.failed) {
      for (const auto& [id, image] : gt.images) {
        report.unregistered.push_back(image.name);
      }
    } else {
      try {
        report = align_and_evaluate(refined.model, gt);
      } catch (const Error&) {
        // Alignment impossible: every ground-truth view is penalized.
        report = PoseErrorReport{};
        for (const auto& [id, image] : gt.images) {
          report.unregistered.push_back(image.name);
        }
      }
      std::vector<double> rot, pos;
      for (const ViewError& v : report.registered) {
        rot.push_back(v.rotation_error_deg);
        pos.push_back(v.position_error);
      }
      outcome.metrics["median_rot_err_deg"] = median(rot);
      outcome.metrics["median_pos_err"] = median(pos);
      outcome.metrics["registered_fraction"] =
          report.total_views() == 0
              ? 0.0
              : static_cast<double>(report.registered.size()) /
                    static_cast<double>(report.total_views());
    }
    outcome.pose_report = std::move(report);
  }
  return outcome;
}

}  // namespace

BenchRun run_bench(const BenchConfig& cfg, int jobs) {
  BenchRun run;
  run.label = cfg.label;
  run.eval = cfg.eval;
  run.scenes.resize(cfg.scenes.size());

  if (jobs <= 1 || cfg.scenes.size() <= 1) {
    for (size_t i = 0; i < cfg.scenes.size(); ++i) {
      run.scenes[i] = run_scene(cfg.scenes[i], cfg);
    }
    return run;
  }

  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(cfg.scenes.size());
  const int n_workers = std::min<int>(jobs, static_cast<int>(cfg.scenes.size()));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= cfg.scenes.size()) break;
        try {
          run.scenes[i] = run_scene(cfg.scenes[i], cfg);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : workers) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return run;
}

void write_bench_outputs(const BenchRun& run, const BenchConfig& cfg,
                         const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);

  std::vector<RuntimeRow> runtimes;
  for (const SceneOutcome& scene : run.scenes) {
    for (const auto& [stage, seconds] : scene.timings.stages) {
      runtimes.push_back({scene.scene, stage, seconds});
    }
    runtimes.push_back({scene.scene, "total", scene.timings.total});
  }
  write_runtimes_csv(runtimes, out_dir / "runtimes.csv");

  std::vector<ScalarMetricRow> metrics;
  for (const SceneOutcome& scene : run.scenes) {
    for (const auto& [metric, value] : scene.metrics) {
      metrics.push_back({scene.scene, metric, value});
    }
  }
  write_metrics_csv(metrics, out_dir / "metrics.csv");

  std::vector<PoseErrorReport> reports;
  for (const SceneOutcome& scene : run.scenes) {
    if (scene.pose_report) reports.push_back(*scene.pose_report);
  }
  std::vector<AccuracyRow> accuracy;
  if (!reports.empty()) {
    for (const double pos : run.eval.pos_thresholds) {
      accuracy.push_back(
          {run.eval.rot_thresh_deg, pos,
           accuracy_at(reports, run.eval.rot_thresh_deg, pos)});
    }
  }
  write_accuracy_csv(accuracy, out_dir / "accuracy.csv");

  std::ofstream config(out_dir / "config.json");
  if (!config) throw IoError("cannot write config snapshot");
  config << bench_config_to_json(cfg).dump(2) << '\n';
}

void write_runtimes_csv(const std::vector<RuntimeRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out = open_csv(path, "scene,stage,seconds");
  for (const RuntimeRow& r : rows) {
    out << r.scene << ',' << r.stage << ',' << format_real(r.seconds) << '\n';
  }
}

std::vector<RuntimeRow> read_runtimes_csv(const std::filesystem::path& path) {
  std::vector<RuntimeRow> rows;
  for (const auto& fields : read_csv(path, "scene,stage,seconds")) {
    if (fields.size() != 3) throw IoError("malformed row in " + path.string());
    rows.push_back({fields[0], fields[1], parse_real(fields[2], path.string())});
  }
  return rows;
}

void write_metrics_csv(const std::vector<ScalarMetricRow>& rows,
                       const std::filesystem::path& path) {
  std::ofstream out = open_csv(path, "scene,metric,value");
  for (const ScalarMetricRow& r : rows) {
    out << r.scene << ',' << r.metric << ',' << format_real(r.value) << '\n';
  }
}

std::vector<ScalarMetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::vector<ScalarMetricRow> rows;
  for (const auto& fields : read_csv(path, "scene,metric,value")) {
    if (fields.size() != 3) throw IoError("malformed row in " + path.string());
    rows.push_back({fields[0], fields[1], parse_real(fields[2], path.string())});
  }
  return rows;
}

void write_accuracy_csv(const std::vector<AccuracyRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out = open_csv(path, "rot_thresh_deg,pos_thresh,percentage");
  for (const AccuracyRow& r : rows) {
    out << format_real(r.rot_thresh_deg) << ',' << format_real(r.pos_thresh)
        << ',' << format_real(r.percentage) << '\n';
  }
}

std::vector<AccuracyRow> read_accuracy_csv(const std::filesystem::path& path) {
  std::vector<AccuracyRow> rows;
  for (const auto& fields : read_csv(path, "rot_thresh_deg,pos_thresh,percentage")) {
    if (fields.size() != 3) throw IoError("malformed row in " + path.string());
    rows.push_back({parse_real(fields[0], path.string()),
                    parse_real(fields[1], path.string()),
                    parse_real(fields[2], path.string())});
  }
  return rows;
}

std::vector<TradeoffRow> emit_tradeoff_table(std::span<const BenchRun> runs,
                                             const std::string& metric) {
  if (runs.empty()) throw Error("tradeoff table needs at least one run");
  std::vector<TradeoffRow> rows;
  for (const BenchRun& run : runs) {
    TradeoffRow row;
    row.config_label = run.label;
    double time_sum = 0.0;
    double metric_sum = 0.0;
    for (const SceneOutcome& scene : run.scenes) {
      time_sum += scene.timings.total;  // failed stages already zero-filled
      const auto it = scene.metrics.find(metric);
      metric_sum += it == scene.metrics.end() ? 0.0 : it->second;
    }
    const double n = std::max<double>(1.0, static_cast<double>(run.scenes.size()));
    row.total_seconds_mean = time_sum / n;
    row.metric_value = metric_sum / n;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_tradeoff_csv(const std::vector<TradeoffRow>& rows,
                        const std::filesystem::path& path) {
  std::ofstream out = open_csv(path, "config_label,total_seconds_mean,metric_value");
  for (const TradeoffRow& r : rows) {
    out << r.config_label << ',' << format_real(r.total_seconds_mean) << ','
        << format_real(r.metric_value) << '\n';
  }
}

std::vector<TradeoffRow> read_tradeoff_csv(const std::filesystem::path& path) {
  std::vector<TradeoffRow> rows;
  for (const auto& fields :
       read_csv(path, "config_label,total_seconds_mean,metric_value")) {
    if (fields.size() != 3) throw IoError("malformed row in " + path.string());
    rows.push_back({fields[0], parse_real(fields[1], path.string()),
                    parse_real(fields[2], path.string())});
  }
  return rows;
}

}  // namespace posebench
