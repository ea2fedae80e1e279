#include "posebench/eval_poses.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <map>

#include "posebench/error.hpp"
#include "posebench/rng.hpp"

namespace posebench {

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.scale = 1.0 / scale;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.scale * (inv.rotation * translation));
  return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& a,
                                                 const SimilarityTransform& b) {
  SimilarityTransform out;
  out.scale = a.scale * b.scale;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  return out;
}

SimilarityTransform align_umeyama(std::span<const Eigen::Vector3d> est,
                                  std::span<const Eigen::Vector3d> gt,
                                  bool with_scale) {
  const size_t n = est.size();
  if (n != gt.size()) throw Error("alignment point counts differ");
  if (n < 3) {
    throw Error("alignment needs at least 3 correspondences, got " +
                std::to_string(n));
  }

  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_gt = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    mean_est += est[i];
    mean_gt += gt[i];
  }
  mean_est /= static_cast<double>(n);
  mean_gt /= static_cast<double>(n);

  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  double est_variance = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d de = est[i] - mean_est;
    const Eigen::Vector3d dg = gt[i] - mean_gt;
    covariance += dg * de.transpose();
    est_variance += de.squaredNorm();
  }
  covariance /= static_cast<double>(n);
  est_variance /= static_cast<double>(n);

  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d singular = svd.singularValues();
  if (singular(1) < 1e-12 * std::max(singular(0), 1e-300)) {
    throw DegenerateGeometryError(
        "alignment covariance has rank < 2 (collinear points)");
  }

  Eigen::Vector3d signs = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    signs(2) = -1.0;  // reflection corrected to a proper rotation
  }
  const Eigen::Matrix3d rotation =
      svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();

  SimilarityTransform transform;
  transform.rotation = Eigen::Quaterniond(rotation).normalized();
  if (transform.rotation.w() < 0.0) {
    transform.rotation.coeffs() = -transform.rotation.coeffs();
  }
  transform.scale =
      with_scale ? singular.dot(signs) / std::max(est_variance, 1e-300) : 1.0;
  if (!(transform.scale > 0.0)) {
    throw DegenerateGeometryError("alignment produced non-positive scale");
  }
  transform.translation =
      mean_gt - transform.scale * (transform.rotation * mean_est);
  return transform;
}

SimilarityTransform align_umeyama_ransac(std::span<const Eigen::Vector3d> est,
                                         std::span<const Eigen::Vector3d> gt,
                                         double inlier_threshold,
                                         bool with_scale, int iterations,
                                         uint64_t seed) {
  const size_t n = est.size();
  if (n != gt.size()) throw Error("alignment point counts differ");
  if (n < 3) throw Error("alignment needs at least 3 correspondences");

  SplitMix64 rng(seed ^ 0x5DEECE66DULL);
  std::vector<size_t> best_inliers;
  for (int it = 0; it < iterations; ++it) {
    size_t i0 = rng.uniform_index(n);
    size_t i1 = rng.uniform_index(n);
    size_t i2 = rng.uniform_index(n);
    if (i0 == i1 || i1 == i2 || i0 == i2) continue;
    const std::vector<Eigen::Vector3d> se{est[i0], est[i1], est[i2]};
    const std::vector<Eigen::Vector3d> sg{gt[i0], gt[i1], gt[i2]};
    SimilarityTransform candidate;
    try {
      candidate = align_umeyama(se, sg, with_scale);
    } catch (const Error&) {
      continue;
    }
    std::vector<size_t> inliers;
    for (size_t i = 0; i < n; ++i) {
      if ((candidate.apply(est[i]) - gt[i]).norm() < inlier_threshold) {
        inliers.push_back(i);
      }
    }
    if (inliers.size() > best_inliers.size()) best_inliers = std::move(inliers);
  }
  if (best_inliers.size() < 3) {
    throw DegenerateGeometryError("robust alignment found no 3-point consensus");
  }
  std::vector<Eigen::Vector3d> se, sg;
  for (const size_t i : best_inliers) {
    se.push_back(est[i]);
    sg.push_back(gt[i]);
  }
  return align_umeyama(se, sg, with_scale);
}

PoseErrorReport pose_errors(const SparseModel& est, const SparseModel& gt,
                            const SimilarityTransform& transform) {
  std::map<std::string, const ImageRecord*> est_by_name;
  for (const auto& [id, image] : est.images) est_by_name[image.name] = &image;

  PoseErrorReport report;
  size_t overlap = 0;
  for (const auto& [id, gt_image] : gt.images) {
    const auto it = est_by_name.find(gt_image.name);
    if (it == est_by_name.end()) {
      report.unregistered.push_back(gt_image.name);
      continue;
    }
    ++overlap;
    const Pose est_pose = Pose::from_image(*it->second);
    const Pose gt_pose = Pose::from_image(gt_image);

    ViewError error;
    error.name = gt_image.name;
    error.position_error =
        (transform.apply(est_pose.center()) - gt_pose.center()).norm();
    // Rotation mapping GT-world directions to the camera frame:
    // R_est * R_align^T, compared against the GT rotation.
    const Eigen::Quaterniond aligned =
        est_pose.rotation * transform.rotation.conjugate();
    error.rotation_error_deg = rotation_error_deg(aligned, gt_pose.rotation);
    report.registered.push_back(std::move(error));
  }
  if (overlap == 0) {
    throw Error("no image names shared between estimate and ground truth");
  }
  return report;
}

PoseErrorReport align_and_evaluate(const SparseModel& est, const SparseModel& gt) {
  std::vector<Eigen::Vector3d> est_centers, gt_centers;
  std::map<std::string, Eigen::Vector3d> est_by_name;
  for (const auto& [id, image] : est.images) {
    est_by_name[image.name] = Pose::from_image(image).center();
  }
  for (const auto& [id, image] : gt.images) {
    const auto it = est_by_name.find(image.name);
    if (it == est_by_name.end()) continue;
    est_centers.push_back(it->second);
    gt_centers.push_back(Pose::from_image(image).center());
  }
  const SimilarityTransform transform =
      align_umeyama(est_centers, gt_centers, /*with_scale=*/true);
  return pose_errors(est, gt, transform);
}

double accuracy_at(std::span<const PoseErrorReport> reports, double rot_thresh_deg,
                   double pos_thresh, AccuracyPooling pooling) {
  if (rot_thresh_deg < 0.0 || pos_thresh < 0.0) {
    throw Error("accuracy thresholds must be non-negative");
  }
  size_t total_views = 0;
  for (const PoseErrorReport& report : reports) total_views += report.total_views();
  if (total_views == 0) throw Error("accuracy_at needs at least one view");

  const auto scene_counts =
      [&](const PoseErrorReport& report) -> std::pair<size_t, size_t> {
    size_t passing = 0;
    for (const ViewError& view : report.registered) {
      if (view.rotation_error_deg < rot_thresh_deg &&
          view.position_error < pos_thresh) {
        ++passing;
      }
    }
    return {passing, report.total_views()};
  };

  if (pooling == AccuracyPooling::kPooledViews) {
    size_t passing = 0;
    for (const PoseErrorReport& report : reports) {
      passing += scene_counts(report).first;
    }
    return 100.0 * static_cast<double>(passing) /
           static_cast<double>(total_views);
  }
  double sum = 0.0;
  size_t scenes = 0;
  for (const PoseErrorReport& report : reports) {
    const auto [passing, views] = scene_counts(report);
    if (views == 0) continue;
    sum += 100.0 * static_cast<double>(passing) / static_cast<double>(views);
    ++scenes;
  }
  return scenes == 0 ? 0.0 : sum / static_cast<double>(scenes);
}

std::vector<std::pair<double, double>> accuracy_curve(
    std::span<const PoseErrorReport> reports, double rot_thresh_deg,
    std::span<const double> pos_thresholds, AccuracyPooling pooling) {
  if (pos_thresholds.empty()) throw Error("accuracy_curve needs thresholds");
  std::vector<std::pair<double, double>> curve;
  curve.reserve(pos_thresholds.size());
  for (const double pos : pos_thresholds) {
    curve.emplace_back(pos, accuracy_at(reports, rot_thresh_deg, pos, pooling));
  }
  return curve;
}

}  // namespace posebench
