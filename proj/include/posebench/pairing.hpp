#pragma once

#include <map>
#include <utility>
#include <vector>

#include "posebench/geometry.hpp"
#include "posebench/types.hpp"

namespace posebench {

struct PairSelectionOptions {
  int k_nearest = 50;
  double max_ray_angle_deg = 60.0;
  // Union semantics by default: (i,j) is kept when either image has the
  // other among its k nearest. Mutual mode requires both directions.
  bool mutual_only = false;
};

struct PairList {
  // Each pair has first < second; sorted lexicographically, no duplicates.
  std::vector<std::pair<image_id_t, image_id_t>> pairs;
  PairSelectionOptions options;
};

// Pose-guided pair selection: per image, the k nearest images by camera
// center distance (ties by smaller id) filtered by viewing-ray angle.
// Throws on fewer than 2 posed images.
PairList select_pairs(const std::map<image_id_t, Pose>& poses,
                      const PairSelectionOptions& options = {});

std::map<image_id_t, Pose> poses_from_model(const SparseModel& model);

}  // namespace posebench
