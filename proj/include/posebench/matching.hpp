#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "posebench/geometry.hpp"
#include "posebench/types.hpp"

namespace posebench {

struct Match {
  uint32_t idx_a = 0;
  uint32_t idx_b = 0;
  float distance = 0.0f;  // descriptor L2 distance
};

struct MatchOptions {
  std::optional<float> max_distance;
  // Lowe ratio d1/d2, applied in both directions so the output stays
  // symmetric under argument swap.
  std::optional<float> ratio;
};

// Mutual nearest neighbors over L2 descriptor distances. Ties broken by
// smaller index; output sorted by idx_a. Throws on descriptor dim mismatch.
std::vector<Match> match_mnn(const FeatureSet& a, const FeatureSet& b,
                             const MatchOptions& options = {});

// Straightforward double-loop implementation kept as the validation
// reference for the blocked kernel above.
std::vector<Match> match_mnn_reference(const FeatureSet& a, const FeatureSet& b,
                                       const MatchOptions& options = {});

// Squared-distance matrix kernel (rows = a, cols = b), blocked GEMM,
// OpenMP-parallel over row blocks when num_threads > 1.
Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
descriptor_sq_distances(
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& b,
    int num_threads);

struct EpipolarResult {
  std::vector<Match> inliers;  // input order preserved
  double inlier_ratio = 0.0;
  // Baseline below 1e-12 of the pose scale: verification skipped, all
  // matches passed through.
  bool zero_baseline = false;
};

// Pose-guided verification: Sampson distance to the essential matrix
// derived from the two known poses, computed in normalized coordinates
// and scaled to pixels by the geometric mean of the two focal lengths.
EpipolarResult verify_epipolar(std::span<const Match> matches,
                               std::span<const Eigen::Vector2d> keypoints_a,
                               std::span<const Eigen::Vector2d> keypoints_b,
                               const CameraModel& camera_a,
                               const CameraModel& camera_b, const Pose& pose_a,
                               const Pose& pose_b, double threshold_px = 8.0);

// Verified correspondences per image pair, first id < second id. Pairs are
// inserted only for entries of the selected PairList.
struct MatchGraph {
  std::map<std::pair<image_id_t, image_id_t>, std::vector<Match>> pairs;

  // Inserts with normalized key order, swapping match indices if needed.
  void insert(image_id_t a, image_id_t b, std::vector<Match> matches);
};

// Text dump: blocks of "name_a name_b" followed by "idx_a idx_b" lines,
// blank-line separated.
void write_match_dump(
    const std::vector<std::pair<std::pair<std::string, std::string>,
                                std::vector<Match>>>& blocks,
    const std::filesystem::path& file);
std::vector<std::pair<std::pair<std::string, std::string>, std::vector<Match>>>
read_match_dump(const std::filesystem::path& file);

}  // namespace posebench
