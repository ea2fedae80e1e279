#pragma once

#include <span>
#include <string>
#include <vector>

#include "posebench/geometry.hpp"
#include "posebench/types.hpp"

namespace posebench {

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const {
    return scale * (rotation * x) + translation;
  }
  SimilarityTransform inverse() const;
  // Composition: result.apply(x) == a.apply(b.apply(x)).
  static SimilarityTransform compose(const SimilarityTransform& a,
                                     const SimilarityTransform& b);
};

// Closed-form least-squares similarity est -> gt (Umeyama): SVD of the
// cross-covariance with determinant-sign correction, so the rotation is
// always proper even for reflected inputs. Throws on < 3 correspondences
// or rank < 2 covariance (collinear points).
SimilarityTransform align_umeyama(std::span<const Eigen::Vector3d> est,
                                  std::span<const Eigen::Vector3d> gt,
                                  bool with_scale = true);

// RANSAC wrapper for grossly wrong estimates: 3-point minimal samples,
// inlier = position residual below inlier_threshold, final fit on the
// best inlier set. Off by default in every pipeline; deterministic in
// seed.
SimilarityTransform align_umeyama_ransac(std::span<const Eigen::Vector3d> est,
                                         std::span<const Eigen::Vector3d> gt,
                                         double inlier_threshold,
                                         bool with_scale = true,
                                         int iterations = 256,
                                         uint64_t seed = 0);

struct ViewError {
  std::string name;
  double rotation_error_deg = 0.0;
  double position_error = 0.0;  // ground-truth scene units
};

struct PoseErrorReport {
  std::vector<ViewError> registered;
  std::vector<std::string> unregistered;  // GT views with no estimate
  size_t total_views() const { return registered.size() + unregistered.size(); }
};

// Per-view errors after applying `transform` to the estimate. Views
// correspond by image name; GT views absent from the estimate are listed
// as unregistered. Throws on zero name overlap.
PoseErrorReport pose_errors(const SparseModel& est, const SparseModel& gt,
                            const SimilarityTransform& transform);

// Convenience: Umeyama-align camera centers (with scale) then evaluate.
PoseErrorReport align_and_evaluate(const SparseModel& est, const SparseModel& gt);

enum class AccuracyPooling {
  // Numerator and denominator pooled over all scenes' views; unregistered
  // views count in the denominator only.
  kPooledViews,
  // Mean of per-scene percentages, for comparison.
  kSceneMean,
};

// Percentage of views with rotation error < rot_thresh_deg AND position
// error < pos_thresh. Strict comparisons.
double accuracy_at(std::span<const PoseErrorReport> reports, double rot_thresh_deg,
                   double pos_thresh,
                   AccuracyPooling pooling = AccuracyPooling::kPooledViews);

std::vector<std::pair<double, double>> accuracy_curve(
    std::span<const PoseErrorReport> reports, double rot_thresh_deg,
    std::span<const double> pos_thresholds,
    AccuracyPooling pooling = AccuracyPooling::kPooledViews);

}  // namespace posebench
