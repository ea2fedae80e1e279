#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

#include "posebench/types.hpp"

namespace posebench {

// World-to-camera rigid transform. Construction normalizes the quaternion
// and canonicalizes its sign to w >= 0 so equal rotations compare equal.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Pose() = default;
  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);

  static Pose from_image(const ImageRecord& image);

  Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
  // C = -R^T t
  Eigen::Vector3d center() const;
  // Optical axis direction in world coordinates, R^T (0,0,1).
  Eigen::Vector3d view_direction() const;
};

// Camera intrinsics + distortion, a value-type view of CameraRecord.
struct CameraModel {
  CameraModelKind kind = CameraModelKind::kSimplePinhole;
  uint64_t width = 0;
  uint64_t height = 0;
  std::vector<double> params;

  static CameraModel from_record(const CameraRecord& record);

  double focal_x() const;
  double focal_y() const;
  // Geometric mean of the focal lengths, used to express normalized-space
  // thresholds in pixels.
  double mean_focal() const;
  Eigen::Vector2d principal_point() const;

  // Normalized (z=1 plane) coordinates -> distorted normalized coordinates.
  Eigen::Vector2d distort(const Eigen::Vector2d& n) const;
  // Inverse of distort by damped Newton iteration (<= 10 iterations,
  // tolerance 1e-10 in normalized units).
  Eigen::Vector2d undistort(const Eigen::Vector2d& d) const;
  // d(distorted)/d(normalized), analytic except for the fisheye model
  // which uses central differences.
  Eigen::Matrix2d distort_jacobian(const Eigen::Vector2d& n) const;

  Eigen::Vector2d normalized_to_pixel(const Eigen::Vector2d& n) const;
  Eigen::Vector2d pixel_to_normalized(const Eigen::Vector2d& px) const;
};

struct Projection {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  // Depth <= 0: the pixel field is undefined.
  bool behind = false;
};

Projection project(const CameraModel& camera, const Pose& pose,
                   const Eigen::Vector3d& point);

// arccos(clamp((trace(Ra^T Rb) - 1)/2, -1, 1)) in degrees; symmetric, in
// [0, 180].
double rotation_error_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

Eigen::Vector3d camera_center(const Pose& pose);

// Angle between the two optical axes in degrees, in [0, 180].
double viewing_ray_angle_deg(const Pose& a, const Pose& b);

struct Observation {
  image_id_t image_id = 0;
  Pose pose;
  CameraModel camera;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

struct TriangulationResult {
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double mean_reproj_px = 0.0;
  // Largest pairwise angle between the rays from the camera centers to the
  // point: the track's best-conditioned pair.
  double best_angle_deg = 0.0;
};

// Homogeneous DLT over normalized (undistorted) rays, no iterative
// polishing. Throws DegenerateGeometryError when no observation pair has
// both a non-zero baseline and non-parallel rays (1e-8 rad).
TriangulationResult triangulate(std::span<const Observation> observations,
                                int min_count = 2);

// Reprojection distance in pixels; +inf for behind-camera points.
double reprojection_error_px(const CameraModel& camera, const Pose& pose,
                             const Eigen::Vector3d& point,
                             const Eigen::Vector2d& observed);

}  // namespace posebench
