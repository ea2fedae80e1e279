#pragma once

#include <map>
#include <string>
#include <vector>

#include "posebench/bundle.hpp"
#include "posebench/error.hpp"
#include "posebench/mapping.hpp"
#include "posebench/matching.hpp"
#include "posebench/pairing.hpp"
#include "posebench/types.hpp"

namespace posebench {

struct RefineConfig {
  int k_nearest = 50;
  double max_ray_angle_deg = 60.0;
  // Informational: features arrive pre-extracted with this budget.
  int feature_budget = 8192;
  double verify_threshold_px = 8.0;
  MatchOptions matching;
  TriangulationThresholds thresholds;
  BAOptions ba;
  int max_outer_iters = 5;
  double min_change_fraction = 0.001;
};

// Wall-clock seconds per pipeline stage, in execution order. `total` is
// the sum of the stages.
struct StageTimings {
  std::vector<std::pair<std::string, double>> stages;
  double total = 0.0;
};

inline constexpr const char* kStagePairSelection = "pair_selection";
inline constexpr const char* kStageMatching = "matching";
inline constexpr const char* kStageVerification = "verification";
inline constexpr const char* kStageTriangulation = "triangulation";
inline constexpr const char* kStageBaLoop = "ba_loop";

struct RefineIterationTrace {
  int iteration = 0;
  int merged = 0;
  int added = 0;
  int filtered = 0;
  double ba_final_cost = 0.0;
  double mean_reproj_px = 0.0;
};

struct RefineResult {
  SparseModel model;
  StageTimings timings;
  std::vector<RefineIterationTrace> trace;
  int num_pairs = 0;
  size_t num_matches = 0;
  size_t num_verified = 0;
};

// Stage failure carrying the wall-clock of the stages that did complete;
// the failed and unreached stages are recorded as zero seconds.
class RefineError : public StageError {
 public:
  RefineError(const std::string& stage, const std::string& message,
              StageTimings partial)
      : StageError(stage, message), partial_timings_(std::move(partial)) {}
  const StageTimings& partial_timings() const { return partial_timings_; }

 private:
  StageTimings partial_timings_;
};

// Full feed-forward refinement: pose-guided pair selection, MNN matching,
// epipolar verification against the initial poses, track triangulation,
// then alternating bundle adjustment and merge/complete/filter until the
// change drops below min_change_fraction of the observation count or
// max_outer_iters is reached. Prior points in the initial model are
// discarded; triangulation restarts from the matches.
// Failures abort with a RefineError naming the stage.
RefineResult run_refinement(const SparseModel& initial_model,
                            const std::map<std::string, FeatureSet>& features,
                            const RefineConfig& cfg);

}  // namespace posebench
