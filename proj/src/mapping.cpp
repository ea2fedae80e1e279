#include "posebench/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "posebench/error.hpp"
#include "posebench/geometry.hpp"
#include "posebench/threads.hpp"

namespace posebench {

namespace {

struct KeypointNode {
  image_id_t image_id;
  uint32_t obs_index;
  bool operator<(const KeypointNode& other) const {
    if (image_id != other.image_id) return image_id < other.image_id;
    return obs_index < other.obs_index;
  }
  bool operator==(const KeypointNode& other) const {
    return image_id == other.image_id && obs_index == other.obs_index;
  }
};

// Union-find with per-root image occupancy, refusing conflicting unions.
class TrackBuilder {
 public:
  int node_index(const KeypointNode& node) {
    auto [it, inserted] = index_.emplace(node, static_cast<int>(nodes_.size()));
    if (inserted) {
      nodes_.push_back(node);
      parent_.push_back(it->second);
      size_.push_back(1);
      images_.push_back({{node.image_id, node.obs_index}});
    }
    return it->second;
  }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // Returns false when the union would place two keypoints of one image
  // into a single component.
  bool unite(int a, int b) {
    int ra = find(a);
    int rb = find(b);
    if (ra == rb) return true;
    if (size_[ra] < size_[rb]) std::swap(ra, rb);
    for (const auto& [image_id, obs_index] : images_[rb]) {
      const auto it = images_[ra].find(image_id);
      if (it != images_[ra].end() && it->second != obs_index) return false;
    }
    parent_[rb] = ra;
    size_[ra] += size_[rb];
    images_[ra].insert(images_[rb].begin(), images_[rb].end());
    images_[rb].clear();
    return true;
  }

  std::vector<Track> tracks() {
    std::map<int, std::vector<KeypointNode>> components;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      components[find(static_cast<int>(i))].push_back(nodes_[i]);
    }
    std::vector<Track> result;
    for (auto& [root, members] : components) {
      if (members.size() < 2) continue;
      std::sort(members.begin(), members.end());
      Track track;
      for (const KeypointNode& node : members) {
        track.elements.push_back({node.image_id, node.obs_index});
      }
      result.push_back(std::move(track));
    }
    std::sort(result.begin(), result.end(), [](const Track& a, const Track& b) {
      const TrackElement& ea = a.elements.front();
      const TrackElement& eb = b.elements.front();
      if (ea.image_id != eb.image_id) return ea.image_id < eb.image_id;
      return ea.obs_index < eb.obs_index;
    });
    return result;
  }

 private:
  std::map<KeypointNode, int> index_;
  std::vector<KeypointNode> nodes_;
  std::vector<int> parent_;
  std::vector<int> size_;
  std::vector<std::map<image_id_t, uint32_t>> images_;
};

// Cached per-image pose + camera for repeated projection.
struct ViewCache {
  std::unordered_map<image_id_t, Pose> poses;
  std::unordered_map<camera_id_t, CameraModel> cameras;
  std::unordered_map<image_id_t, camera_id_t> image_camera;

  explicit ViewCache(const SparseModel& model) {
    for (const auto& [id, camera] : model.cameras) {
      cameras.emplace(id, CameraModel::from_record(camera));
    }
    for (const auto& [id, image] : model.images) {
      poses.emplace(id, Pose::from_image(image));
      image_camera.emplace(id, image.camera_id);
    }
  }

  const Pose& pose(image_id_t id) const { return poses.at(id); }
  const CameraModel& camera_of_image(image_id_t id) const {
    return cameras.at(image_camera.at(id));
  }
};

Eigen::Vector2d observation_pixel(const SparseModel& model, image_id_t image_id,
                                  uint32_t obs_index) {
  const auto it = model.images.find(image_id);
  if (it == model.images.end()) {
    throw Error("track references unposed image " + std::to_string(image_id));
  }
  if (obs_index >= it->second.observations.size()) {
    throw Error("track references out-of-range observation " +
                std::to_string(obs_index) + " of image " +
                std::to_string(image_id));
  }
  const Observation2D& obs = it->second.observations[obs_index];
  return {obs.x, obs.y};
}

struct RobustTriangulation {
  bool accepted = false;
  std::string reject_reason;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double mean_reproj_px = 0.0;
  double best_angle_deg = 0.0;
  std::vector<TrackElement> inliers;
};

// Triangulate, drop per-element outliers, re-triangulate until stable,
// then apply the acceptance thresholds.
RobustTriangulation robust_triangulate(const SparseModel& model,
                                       const ViewCache& cache,
                                       std::span<const TrackElement> elements,
                                       const TriangulationThresholds& th);

// A track whose elements disagree under the current poses splits into
// several consistent sub-points instead of discarding the leftovers; the
// merge operator reunites them once bundle adjustment has fixed the
// poses.
std::vector<RobustTriangulation> triangulate_with_remainder(
    const SparseModel& model, const ViewCache& cache,
    std::vector<TrackElement> elements, const TriangulationThresholds& th) {
  std::vector<RobustTriangulation> accepted;
  while (static_cast<int>(elements.size()) >= std::max(th.min_track_len, 2)) {
    RobustTriangulation tri = robust_triangulate(model, cache, elements, th);
    if (!tri.accepted) {
      if (accepted.empty()) accepted.push_back(std::move(tri));  // keep reason
      break;
    }
    std::vector<TrackElement> remainder;
    size_t inlier_pos = 0;
    for (const TrackElement& el : elements) {
      if (inlier_pos < tri.inliers.size() &&
          tri.inliers[inlier_pos].image_id == el.image_id &&
          tri.inliers[inlier_pos].obs_index == el.obs_index) {
        ++inlier_pos;
      } else {
        remainder.push_back(el);
      }
    }
    accepted.push_back(std::move(tri));
    elements = std::move(remainder);
  }
  return accepted;
}

RobustTriangulation robust_triangulate(const SparseModel& model,
                                       const ViewCache& cache,
                                       std::span<const TrackElement> elements,
                                       const TriangulationThresholds& th) {
  RobustTriangulation result;
  std::vector<TrackElement> active(elements.begin(), elements.end());

  while (true) {
    if (static_cast<int>(active.size()) < std::max(th.min_track_len, 2)) {
      result.reject_reason = "too few inlier observations";
      return result;
    }
    std::vector<Observation> observations;
    observations.reserve(active.size());
    for (const TrackElement& el : active) {
      Observation obs;
      obs.image_id = el.image_id;
      obs.pose = cache.pose(el.image_id);
      obs.camera = cache.camera_of_image(el.image_id);
      obs.pixel = observation_pixel(model, el.image_id, el.obs_index);
      observations.push_back(std::move(obs));
    }

    TriangulationResult tri;
    try {
      tri = triangulate(observations);
    } catch (const DegenerateGeometryError& e) {
      result.reject_reason = std::string("degenerate: ") + e.what();
      return result;
    }

    double error_sum = 0.0;
    double worst_error = 0.0;
    size_t worst_index = 0;
    for (size_t i = 0; i < active.size(); ++i) {
      const double err = reprojection_error_px(
          observations[i].camera, observations[i].pose, tri.point,
          observations[i].pixel);
      error_sum += std::isfinite(err) ? err : 1e8;
      if (err > worst_error) {
        worst_error = err;
        worst_index = i;
      }
    }
    if (worst_error <= th.max_reproj_px) {
      result.point = tri.point;
      result.mean_reproj_px = active.empty() ? 0.0 : error_sum / active.size();
      result.best_angle_deg = tri.best_angle_deg;
      result.inliers = std::move(active);
      break;
    }
    // Drop only the worst element per round; dropping everything beyond
    // the threshold at once can erase a whole track whose DLT compromise
    // point fits nobody.
    active.erase(active.begin() + static_cast<long>(worst_index));
  }

  if (static_cast<int>(result.inliers.size()) < th.min_track_len) {
    result.reject_reason = "too few inlier observations";
    return result;
  }
  if (result.mean_reproj_px > th.max_reproj_px) {
    result.reject_reason = "mean reprojection above threshold";
    return result;
  }
  if (result.best_angle_deg < th.min_tri_angle_deg) {
    result.reject_reason = "triangulation angle below threshold";
    return result;
  }
  result.accepted = true;
  return result;
}

point3d_id_t next_point_id(const SparseModel& model) {
  return model.points.empty() ? 1 : model.points.rbegin()->first + 1;
}

void insert_point(SparseModel& model, point3d_id_t id,
                  const RobustTriangulation& tri) {
  Point3DRecord point;
  point.point3d_id = id;
  point.xyz = tri.point;
  point.rgb = {128, 128, 128};
  point.error = tri.mean_reproj_px;
  point.track = tri.inliers;
  for (const TrackElement& el : tri.inliers) {
    model.images.at(el.image_id).observations[el.obs_index].point3d_id = id;
  }
  model.points.emplace(id, std::move(point));
}

void detach_point(SparseModel& model, point3d_id_t id) {
  const Point3DRecord& point = model.points.at(id);
  for (const TrackElement& el : point.track) {
    model.images.at(el.image_id).observations[el.obs_index].point3d_id =
        kNoPoint3D;
  }
  model.points.erase(id);
}

double point_mean_reproj(const SparseModel& model, const ViewCache& cache,
                         const Point3DRecord& point) {
  if (point.track.empty()) return 0.0;
  double sum = 0.0;
  for (const TrackElement& el : point.track) {
    const double err = reprojection_error_px(
        cache.camera_of_image(el.image_id), cache.pose(el.image_id), point.xyz,
        observation_pixel(model, el.image_id, el.obs_index));
    sum += std::isfinite(err) ? err : 1e8;
  }
  return sum / static_cast<double>(point.track.size());
}

// Merge acceptance: the united track must pass the thresholds as a whole.
// No element dropping here; a union that only fits after discarding one
// side is not a valid merge.
RobustTriangulation strict_triangulate(const SparseModel& model,
                                       const ViewCache& cache,
                                       std::span<const TrackElement> elements,
                                       const TriangulationThresholds& th) {
  RobustTriangulation result;
  if (static_cast<int>(elements.size()) < std::max(th.min_track_len, 2)) {
    result.reject_reason = "too few observations";
    return result;
  }
  std::vector<Observation> observations;
  observations.reserve(elements.size());
  for (const TrackElement& el : elements) {
    Observation obs;
    obs.image_id = el.image_id;
    obs.pose = cache.pose(el.image_id);
    obs.camera = cache.camera_of_image(el.image_id);
    obs.pixel = observation_pixel(model, el.image_id, el.obs_index);
    observations.push_back(std::move(obs));
  }
  TriangulationResult tri;
  try {
    tri = triangulate(observations);
  } catch (const DegenerateGeometryError& e) {
    result.reject_reason = std::string("degenerate: ") + e.what();
    return result;
  }
  if (tri.mean_reproj_px > th.max_reproj_px) {
    result.reject_reason = "mean reprojection above threshold";
    return result;
  }
  if (tri.best_angle_deg < th.min_tri_angle_deg) {
    result.reject_reason = "triangulation angle below threshold";
    return result;
  }
  result.accepted = true;
  result.point = tri.point;
  result.mean_reproj_px = tri.mean_reproj_px;
  result.best_angle_deg = tri.best_angle_deg;
  result.inliers.assign(elements.begin(), elements.end());
  return result;
}

double point_best_angle_deg(const ViewCache& cache, const Point3DRecord& point) {
  double best = 0.0;
  for (size_t i = 0; i < point.track.size(); ++i) {
    const Eigen::Vector3d ci = cache.pose(point.track[i].image_id).center();
    const Eigen::Vector3d di = point.xyz - ci;
    if (di.norm() < 1e-14) continue;
    for (size_t j = i + 1; j < point.track.size(); ++j) {
      const Eigen::Vector3d cj = cache.pose(point.track[j].image_id).center();
      const Eigen::Vector3d dj = point.xyz - cj;
      if (dj.norm() < 1e-14) continue;
      const double c = std::clamp(di.normalized().dot(dj.normalized()), -1.0, 1.0);
      best = std::max(best, std::acos(c) * 180.0 / M_PI);
    }
  }
  return best;
}

}  // namespace

std::vector<Track> build_tracks(const MatchGraph& graph) {
  TrackBuilder builder;
  for (const auto& [pair, matches] : graph.pairs) {
    for (const Match& match : matches) {
      const int a = builder.node_index({pair.first, match.idx_a});
      const int b = builder.node_index({pair.second, match.idx_b});
      builder.unite(a, b);
    }
  }
  return builder.tracks();
}

TriangulateTracksStats triangulate_tracks(SparseModel& model,
                                          std::span<Track> tracks,
                                          const TriangulationThresholds& th) {
  const ViewCache cache(model);

  // Elements whose observation already carries a 3D link cannot be
  // re-assigned; drop them from the candidate track up front.
  std::vector<std::vector<TrackElement>> candidates(tracks.size());
  for (size_t t = 0; t < tracks.size(); ++t) {
    for (const TrackElement& el : tracks[t].elements) {
      const auto it = model.images.find(el.image_id);
      if (it == model.images.end()) {
        throw Error("track references unposed image " +
                    std::to_string(el.image_id));
      }
      if (el.obs_index >= it->second.observations.size()) {
        throw Error("track references out-of-range observation of image " +
                    std::to_string(el.image_id));
      }
      if (it->second.observations[el.obs_index].point3d_id != kNoPoint3D) continue;
      candidates[t].push_back(el);
    }
  }

  std::vector<std::vector<RobustTriangulation>> results(tracks.size());
  const int num_threads = max_threads();
  const int n = static_cast<int>(tracks.size());
#pragma omp parallel for schedule(dynamic, 16) num_threads(num_threads) \
    if (num_threads > 1)
  for (int t = 0; t < n; ++t) {
    results[t] = triangulate_with_remainder(model, cache, candidates[t], th);
  }

  TriangulateTracksStats stats;
  for (int t = 0; t < n; ++t) {
    bool any_accepted = false;
    for (const RobustTriangulation& tri : results[t]) {
      if (!tri.accepted) continue;
      const point3d_id_t id = next_point_id(model);
      insert_point(model, id, tri);
      if (!any_accepted) tracks[t].point3d_id = id;
      any_accepted = true;
    }
    if (any_accepted) {
      tracks[t].status = TrackStatus::kTriangulated;
      ++stats.accepted;
    } else {
      tracks[t].status = TrackStatus::kRejected;
      tracks[t].reject_reason =
          results[t].empty() ? "too few inlier observations"
                             : results[t].front().reject_reason;
      ++stats.rejected;
    }
  }
  return stats;
}

int merge_points(SparseModel& model, const MatchGraph& graph,
                 const TriangulationThresholds& th) {
  int merged_total = 0;

  while (true) {
    const ViewCache cache(model);

    // Candidate pairs: two distinct points linked by a verified match.
    std::set<std::pair<point3d_id_t, point3d_id_t>> candidates;
    for (const auto& [pair, matches] : graph.pairs) {
      const auto image_a = model.images.find(pair.first);
      const auto image_b = model.images.find(pair.second);
      if (image_a == model.images.end() || image_b == model.images.end()) continue;
      for (const Match& match : matches) {
        if (match.idx_a >= image_a->second.observations.size()) continue;
        if (match.idx_b >= image_b->second.observations.size()) continue;
        const point3d_id_t pa =
            image_a->second.observations[match.idx_a].point3d_id;
        const point3d_id_t pb =
            image_b->second.observations[match.idx_b].point3d_id;
        if (pa == kNoPoint3D || pb == kNoPoint3D || pa == pb) continue;
        candidates.insert({std::min(pa, pb), std::max(pa, pb)});
      }
    }

    int merged_round = 0;
    for (const auto& [pa, pb] : candidates) {
      const auto it_a = model.points.find(pa);
      const auto it_b = model.points.find(pb);
      if (it_a == model.points.end() || it_b == model.points.end()) continue;

      // United track; a same-image conflict keeps the element of the
      // longer track (ties: the smaller point id).
      const bool keep_a = it_a->second.track.size() >= it_b->second.track.size();
      const auto& primary = keep_a ? it_a->second.track : it_b->second.track;
      const auto& secondary = keep_a ? it_b->second.track : it_a->second.track;
      std::map<image_id_t, TrackElement> by_image;
      for (const TrackElement& el : primary) by_image.emplace(el.image_id, el);
      for (const TrackElement& el : secondary) by_image.emplace(el.image_id, el);
      std::vector<TrackElement> united;
      united.reserve(by_image.size());
      for (const auto& [image_id, el] : by_image) united.push_back(el);

      const RobustTriangulation tri = strict_triangulate(model, cache, united, th);
      if (!tri.accepted) continue;

      detach_point(model, pa);
      detach_point(model, pb);
      insert_point(model, next_point_id(model), tri);
      ++merged_round;
      ++merged_total;
    }
    if (merged_round == 0) break;
  }
  return merged_total;
}

int complete_points(SparseModel& model, const MatchGraph& graph,
                    const TriangulationThresholds& th) {
  const ViewCache cache(model);
  int added_total = 0;

  const auto try_add = [&](point3d_id_t point_id, image_id_t image_id,
                           uint32_t obs_index) -> bool {
    ImageRecord& image = model.images.at(image_id);
    Point3DRecord& point = model.points.at(point_id);
    for (const TrackElement& el : point.track) {
      if (el.image_id == image_id) return false;  // image already observes it
    }
    if (image.observations[obs_index].point3d_id != kNoPoint3D) return false;
    const double err = reprojection_error_px(
        cache.camera_of_image(image_id), cache.pose(image_id), point.xyz,
        {image.observations[obs_index].x, image.observations[obs_index].y});
    if (!(err <= th.max_reproj_px)) return false;
    image.observations[obs_index].point3d_id = point_id;
    point.track.push_back({image_id, obs_index});
    return true;
  };

  while (true) {
    int added_round = 0;
    for (const auto& [pair, matches] : graph.pairs) {
      const auto image_a = model.images.find(pair.first);
      const auto image_b = model.images.find(pair.second);
      if (image_a == model.images.end() || image_b == model.images.end()) continue;
      for (const Match& match : matches) {
        if (match.idx_a >= image_a->second.observations.size()) continue;
        if (match.idx_b >= image_b->second.observations.size()) continue;
        const point3d_id_t pa =
            image_a->second.observations[match.idx_a].point3d_id;
        const point3d_id_t pb =
            image_b->second.observations[match.idx_b].point3d_id;
        if (pa != kNoPoint3D && pb == kNoPoint3D) {
          if (try_add(pa, pair.second, match.idx_b)) ++added_round;
        } else if (pb != kNoPoint3D && pa == kNoPoint3D) {
          if (try_add(pb, pair.first, match.idx_a)) ++added_round;
        }
      }
    }
    added_total += added_round;
    if (added_round == 0) break;
  }

  for (auto& [id, point] : model.points) {
    point.error = point_mean_reproj(model, cache, point);
  }
  return added_total;
}

int filter_points(SparseModel& model, const TriangulationThresholds& th) {
  const ViewCache cache(model);
  int removed_points = 0;

  std::vector<point3d_id_t> ids;
  ids.reserve(model.points.size());
  for (const auto& [id, point] : model.points) ids.push_back(id);

  for (const point3d_id_t id : ids) {
    Point3DRecord& point = model.points.at(id);
    std::vector<TrackElement> kept;
    kept.reserve(point.track.size());
    double error_sum = 0.0;
    for (const TrackElement& el : point.track) {
      const double err = reprojection_error_px(
          cache.camera_of_image(el.image_id), cache.pose(el.image_id), point.xyz,
          observation_pixel(model, el.image_id, el.obs_index));
      if (err > th.max_reproj_px) {
        model.images.at(el.image_id).observations[el.obs_index].point3d_id =
            kNoPoint3D;
      } else {
        kept.push_back(el);
        error_sum += err;
      }
    }
    point.track = std::move(kept);

    const bool too_short =
        static_cast<int>(point.track.size()) < th.min_track_len;
    if (too_short || point_best_angle_deg(cache, point) < th.min_tri_angle_deg) {
      detach_point(model, id);
      ++removed_points;
      continue;
    }
    point.error = error_sum / static_cast<double>(point.track.size());
  }
  return removed_points;
}

}  // namespace posebench
