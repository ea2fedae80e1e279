#include "posebench/refine.hpp"

#include <chrono>

#include "posebench/error.hpp"
#include "posebench/threads.hpp"

namespace posebench {

namespace {

class StageClock {
 public:
  using clock = std::chrono::steady_clock;

  void start() { begin_ = clock::now(); }

  double stop() {
    const auto end = clock::now();
    return std::chrono::duration<double>(end - begin_).count();
  }

 private:
  clock::time_point begin_;
};

size_t count_linked_observations(const SparseModel& model) {
  size_t count = 0;
  for (const auto& [id, point] : model.points) count += point.track.size();
  return count;
}

StageTimings assemble_timings(
    const std::vector<std::pair<std::string, double>>& completed) {
  StageTimings timings;
  const char* order[] = {kStagePairSelection, kStageMatching, kStageVerification,
                         kStageTriangulation, kStageBaLoop};
  for (const char* stage : order) {
    double seconds = 0.0;
    for (const auto& [name, value] : completed) {
      if (name == stage) seconds = value;
    }
    timings.stages.emplace_back(stage, seconds);
    timings.total += seconds;
  }
  return timings;
}

}  // namespace

RefineResult run_refinement(const SparseModel& initial_model,
                            const std::map<std::string, FeatureSet>& features,
                            const RefineConfig& cfg) {
  std::vector<std::pair<std::string, double>> completed;
  const auto stage_error = [&](const char* stage, const std::string& message) {
    return RefineError(stage, message, assemble_timings(completed));
  };

  if (cfg.max_outer_iters <= 0) {
    throw stage_error(kStageBaLoop, "max_outer_iters must be positive");
  }
  if (!(cfg.min_change_fraction > 0.0 && cfg.min_change_fraction < 1.0)) {
    throw stage_error(kStageBaLoop, "min_change_fraction must be in (0, 1)");
  }

  RefineResult result;
  result.model = initial_model;

  // Triangulation restarts from the matches: drop prior points and seed
  // the observations from the feature keypoints (keypoint index ==
  // observation index).
  result.model.points.clear();
  for (auto& [id, image] : result.model.images) {
    const auto fit = features.find(image.name);
    if (fit == features.end()) {
      throw stage_error(kStageMatching, "no feature set for posed image '" + image.name + "'");
    }
    image.observations.clear();
    image.observations.reserve(fit->second.keypoints.size());
    for (const Eigen::Vector2d& kp : fit->second.keypoints) {
      image.observations.push_back({kp.x(), kp.y(), kNoPoint3D});
    }
  }

  StageClock clock;

  // Stage 1: pose-guided pair selection.
  clock.start();
  PairList pair_list;
  try {
    PairSelectionOptions options;
    options.k_nearest = cfg.k_nearest;
    options.max_ray_angle_deg = cfg.max_ray_angle_deg;
    pair_list = select_pairs(poses_from_model(result.model), options);
  } catch (const Error& e) {
    throw stage_error(kStagePairSelection, e.what());
  }
  const double pair_seconds = clock.stop();
  if (pair_list.pairs.empty()) {
    // The stage failed; per the timing protocol it contributes 0 seconds.
    throw stage_error(kStagePairSelection, "no pairs selected");
  }
  completed.emplace_back(kStagePairSelection, pair_seconds);
  result.num_pairs = static_cast<int>(pair_list.pairs.size());

  // Stage 2: MNN matching over the selected pairs.
  clock.start();
  const int num_pairs = static_cast<int>(pair_list.pairs.size());
  std::vector<std::vector<Match>> raw_matches(num_pairs);
  {
    const int num_threads = max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads) \
    if (num_threads > 1)
    for (int i = 0; i < num_pairs; ++i) {
      const auto& [id_a, id_b] = pair_list.pairs[i];
      const FeatureSet& fa = features.at(result.model.images.at(id_a).name);
      const FeatureSet& fb = features.at(result.model.images.at(id_b).name);
      raw_matches[i] = match_mnn(fa, fb, cfg.matching);
    }
  }
  completed.emplace_back(kStageMatching, clock.stop());
  for (const auto& matches : raw_matches) result.num_matches += matches.size();

  // Stage 3: epipolar verification with the initial poses.
  clock.start();
  MatchGraph graph;
  {
    std::vector<std::vector<Match>> verified(num_pairs);
    const int num_threads = max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads) \
    if (num_threads > 1)
    for (int i = 0; i < num_pairs; ++i) {
      const auto& [id_a, id_b] = pair_list.pairs[i];
      const ImageRecord& image_a = result.model.images.at(id_a);
      const ImageRecord& image_b = result.model.images.at(id_b);
      const FeatureSet& fa = features.at(image_a.name);
      const FeatureSet& fb = features.at(image_b.name);
      const EpipolarResult epi = verify_epipolar(
          raw_matches[i], fa.keypoints, fb.keypoints,
          CameraModel::from_record(result.model.cameras.at(image_a.camera_id)),
          CameraModel::from_record(result.model.cameras.at(image_b.camera_id)),
          Pose::from_image(image_a), Pose::from_image(image_b),
          cfg.verify_threshold_px);
      verified[i] = std::move(epi.inliers);
    }
    for (int i = 0; i < num_pairs; ++i) {
      if (verified[i].empty()) continue;
      result.num_verified += verified[i].size();
      graph.insert(pair_list.pairs[i].first, pair_list.pairs[i].second,
                   std::move(verified[i]));
    }
  }
  completed.emplace_back(kStageVerification, clock.stop());

  // Stage 4: track building + triangulation.
  clock.start();
  std::vector<Track> tracks = build_tracks(graph);
  const TriangulateTracksStats tri_stats =
      triangulate_tracks(result.model, tracks, cfg.thresholds);
  const double triangulation_seconds = clock.stop();
  if (tri_stats.accepted == 0) {
    throw stage_error(kStageTriangulation, "no tracks survived triangulation");
  }
  completed.emplace_back(kStageTriangulation, triangulation_seconds);

  // Stage 5: alternating bundle adjustment and merge/complete/filter.
  clock.start();
  try {
    for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
      RefineIterationTrace trace;
      trace.iteration = iter;

      const BAReport report = ba_solve(result.model, cfg.ba);
      trace.ba_final_cost = report.final_cost;

      trace.merged = merge_points(result.model, graph, cfg.thresholds);
      trace.added = complete_points(result.model, graph, cfg.thresholds);
      trace.filtered = filter_points(result.model, cfg.thresholds);
      trace.mean_reproj_px = ba_mean_reprojection_px(result.model);
      result.trace.push_back(trace);

      const size_t total_obs = count_linked_observations(result.model);
      const double change = static_cast<double>(trace.merged + trace.added);
      if (change < cfg.min_change_fraction * static_cast<double>(total_obs)) {
        break;
      }
    }
  } catch (const Error& e) {
    throw stage_error(kStageBaLoop, e.what());
  }
  completed.emplace_back(kStageBaLoop, clock.stop());

  result.timings = assemble_timings(completed);
  return result;
}

}  // namespace posebench
