#include "posebench/pairing.hpp"

#include <algorithm>
#include <set>

#include "posebench/error.hpp"

namespace posebench {

std::map<image_id_t, Pose> poses_from_model(const SparseModel& model) {
  std::map<image_id_t, Pose> poses;
  for (const auto& [id, image] : model.images) {
    poses.emplace(id, Pose::from_image(image));
  }
  return poses;
}

PairList select_pairs(const std::map<image_id_t, Pose>& poses,
                      const PairSelectionOptions& options) {
  if (poses.size() < 2) {
    throw Error("pair selection needs at least 2 posed images, got " +
                std::to_string(poses.size()));
  }

  std::vector<image_id_t> ids;
  std::vector<Eigen::Vector3d> centers;
  ids.reserve(poses.size());
  for (const auto& [id, pose] : poses) {
    if (!pose.translation.allFinite()) {
      throw Error("non-finite pose for image " + std::to_string(id));
    }
    ids.push_back(id);
    centers.push_back(pose.center());
  }
  const int n = static_cast<int>(ids.size());
  const int k = std::min(options.k_nearest, n - 1);

  // Exact k-nearest per image; distance ties broken by smaller image id.
  std::vector<std::set<int>> candidates(n);
  std::vector<std::pair<double, int>> order(n - 1);
  for (int i = 0; i < n; ++i) {
    int m = 0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      order[m++] = {(centers[i] - centers[j]).squaredNorm(), j};
    }
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return ids[a.second] < ids[b.second];
    });
    for (int j = 0; j < k; ++j) candidates[i].insert(order[j].second);
  }

  PairList result;
  result.options = options;
  const auto id_of = [&](int idx) { return ids[idx]; };
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool forward = candidates[i].count(j) > 0;
      const bool backward = candidates[j].count(i) > 0;
      const bool related = options.mutual_only ? (forward && backward)
                                               : (forward || backward);
      if (!related) continue;
      const double angle =
          viewing_ray_angle_deg(poses.at(id_of(i)), poses.at(id_of(j)));
      if (angle < options.max_ray_angle_deg) {
        result.pairs.emplace_back(std::min(id_of(i), id_of(j)),
                                  std::max(id_of(i), id_of(j)));
      }
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end());
  result.pairs.erase(std::unique(result.pairs.begin(), result.pairs.end()),
                     result.pairs.end());
  return result;
}

}  // namespace posebench
