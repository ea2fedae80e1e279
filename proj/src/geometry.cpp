#include "posebench/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>

#include "posebench/error.hpp"

namespace posebench {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

Eigen::Quaterniond canonicalized(const Eigen::Quaterniond& q) {
  Eigen::Quaterniond out = q.normalized();
  if (out.w() < 0.0) out.coeffs() = -out.coeffs();
  return out;
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
    : rotation(canonicalized(q)), translation(t) {}

Pose Pose::from_image(const ImageRecord& image) {
  return Pose(image.rotation, image.translation);
}

Eigen::Vector3d Pose::center() const {
  return -(rotation.conjugate() * translation);
}

Eigen::Vector3d Pose::view_direction() const {
  return rotation.conjugate() * Eigen::Vector3d::UnitZ();
}

CameraModel CameraModel::from_record(const CameraRecord& record) {
  CameraModel model;
  model.kind = record.model;
  model.width = record.width;
  model.height = record.height;
  model.params = record.params;
  if (static_cast<int>(model.params.size()) != camera_model_num_params(model.kind)) {
    throw ValidationError("camera parameter count does not match model kind");
  }
  return model;
}

double CameraModel::focal_x() const { return params[0]; }

double CameraModel::focal_y() const {
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
    case CameraModelKind::kSimpleRadial:
    case CameraModelKind::kRadial:
      return params[0];
    default:
      return params[1];
  }
}

double CameraModel::mean_focal() const {
  return std::sqrt(focal_x() * focal_y());
}

Eigen::Vector2d CameraModel::principal_point() const {
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
    case CameraModelKind::kSimpleRadial:
    case CameraModelKind::kRadial:
      return {params[1], params[2]};
    default:
      return {params[2], params[3]};
  }
}

Eigen::Vector2d CameraModel::distort(const Eigen::Vector2d& n) const {
  const double u = n.x();
  const double v = n.y();
  const double r2 = u * u + v * v;
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
    case CameraModelKind::kPinhole:
      return n;
    case CameraModelKind::kSimpleRadial: {
      const double d = 1.0 + params[3] * r2;
      return {u * d, v * d};
    }
    case CameraModelKind::kRadial: {
      const double d = 1.0 + params[3] * r2 + params[4] * r2 * r2;
      return {u * d, v * d};
    }
    case CameraModelKind::kOpenCV: {
      const double k1 = params[4], k2 = params[5], p1 = params[6], p2 = params[7];
      const double d = 1.0 + k1 * r2 + k2 * r2 * r2;
      return {u * d + 2.0 * p1 * u * v + p2 * (r2 + 2.0 * u * u),
              v * d + p1 * (r2 + 2.0 * v * v) + 2.0 * p2 * u * v};
    }
    case CameraModelKind::kOpenCVFisheye: {
      const double k1 = params[4], k2 = params[5], k3 = params[6], k4 = params[7];
      const double r = std::sqrt(r2);
      if (r < 1e-12) return n;
      const double theta = std::atan(r);
      const double t2 = theta * theta;
      const double theta_d =
          theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))));
      const double scale = theta_d / r;
      return {u * scale, v * scale};
    }
  }
  throw ValidationError("unknown camera model kind");
}

Eigen::Matrix2d CameraModel::distort_jacobian(const Eigen::Vector2d& n) const {
  const double u = n.x();
  const double v = n.y();
  const double r2 = u * u + v * v;
  Eigen::Matrix2d jac = Eigen::Matrix2d::Identity();
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
    case CameraModelKind::kPinhole:
      return jac;
    case CameraModelKind::kSimpleRadial: {
      const double k = params[3];
      jac(0, 0) = 1.0 + k * (3.0 * u * u + v * v);
      jac(0, 1) = 2.0 * k * u * v;
      jac(1, 0) = 2.0 * k * u * v;
      jac(1, 1) = 1.0 + k * (u * u + 3.0 * v * v);
      return jac;
    }
    case CameraModelKind::kRadial:
    case CameraModelKind::kOpenCV: {
      const double k1 = params[kind == CameraModelKind::kRadial ? 3 : 4];
      const double k2 = params[kind == CameraModelKind::kRadial ? 4 : 5];
      const double d = 1.0 + k1 * r2 + k2 * r2 * r2;
      const double dd_dr2 = k1 + 2.0 * k2 * r2;
      jac(0, 0) = d + 2.0 * u * u * dd_dr2;
      jac(0, 1) = 2.0 * u * v * dd_dr2;
      jac(1, 0) = 2.0 * u * v * dd_dr2;
      jac(1, 1) = d + 2.0 * v * v * dd_dr2;
      if (kind == CameraModelKind::kOpenCV) {
        const double p1 = params[6], p2 = params[7];
        jac(0, 0) += 2.0 * p1 * v + 6.0 * p2 * u;
        jac(0, 1) += 2.0 * p1 * u + 2.0 * p2 * v;
        jac(1, 0) += 2.0 * p1 * u + 2.0 * p2 * v;
        jac(1, 1) += 6.0 * p1 * v + 2.0 * p2 * u;
      }
      return jac;
    }
    case CameraModelKind::kOpenCVFisheye: {
      // No analytic fisheye derivative tower; central differences are
      // accurate enough for the pose/point blocks that still use them.
      const double step = 1e-7;
      for (int c = 0; c < 2; ++c) {
        Eigen::Vector2d lo = n, hi = n;
        lo[c] -= step;
        hi[c] += step;
        jac.col(c) = (distort(hi) - distort(lo)) / (2.0 * step);
      }
      return jac;
    }
  }
  throw ValidationError("unknown camera model kind");
}

Eigen::Vector2d CameraModel::undistort(const Eigen::Vector2d& d) const {
  if (kind == CameraModelKind::kSimplePinhole || kind == CameraModelKind::kPinhole) {
    return d;
  }
  Eigen::Vector2d n = d;
  for (int it = 0; it < 10; ++it) {
    const Eigen::Vector2d residual = distort(n) - d;
    if (residual.norm() < 1e-10) break;
    Eigen::Matrix2d jac = distort_jacobian(n);
    // Damped to survive locally flat distortion profiles.
    jac.diagonal().array() += 1e-12;
    n -= jac.inverse() * residual;
  }
  return n;
}

Eigen::Vector2d CameraModel::normalized_to_pixel(const Eigen::Vector2d& n) const {
  const Eigen::Vector2d d = distort(n);
  const Eigen::Vector2d pp = principal_point();
  return {focal_x() * d.x() + pp.x(), focal_y() * d.y() + pp.y()};
}

Eigen::Vector2d CameraModel::pixel_to_normalized(const Eigen::Vector2d& px) const {
  const Eigen::Vector2d pp = principal_point();
  const Eigen::Vector2d d((px.x() - pp.x()) / focal_x(),
                          (px.y() - pp.y()) / focal_y());
  return undistort(d);
}

Projection project(const CameraModel& camera, const Pose& pose,
                   const Eigen::Vector3d& point) {
  const Eigen::Vector3d cam = pose.rotation * point + pose.translation;
  Projection result;
  result.depth = cam.z();
  if (cam.z() <= 0.0) {
    result.behind = true;
    return result;
  }
  const Eigen::Vector2d n(cam.x() / cam.z(), cam.y() / cam.z());
  result.pixel = camera.normalized_to_pixel(n);
  return result;
}

double rotation_error_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  // Same value as arccos((trace(Ra^T Rb) - 1) / 2) but evaluated through
  // the relative quaternion: atan2 keeps full precision for angles near 0
  // where the arccos form loses everything below ~1e-8 rad.
  const Eigen::Quaterniond rel = a.normalized().conjugate() * b.normalized();
  const double angle =
      2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
  return angle * kRadToDeg;
}

Eigen::Vector3d camera_center(const Pose& pose) { return pose.center(); }

double viewing_ray_angle_deg(const Pose& a, const Pose& b) {
  const Eigen::Vector3d da = a.view_direction();
  const Eigen::Vector3d db = b.view_direction();
  const double c = std::clamp(da.dot(db), -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

double reprojection_error_px(const CameraModel& camera, const Pose& pose,
                             const Eigen::Vector3d& point,
                             const Eigen::Vector2d& observed) {
  const Projection proj = project(camera, pose, point);
  if (proj.behind) return std::numeric_limits<double>::infinity();
  return (proj.pixel - observed).norm();
}

TriangulationResult triangulate(std::span<const Observation> observations,
                                int min_count) {
  const int n = static_cast<int>(observations.size());
  if (n < min_count || n < 2) {
    throw DegenerateGeometryError("triangulation needs at least " +
                                  std::to_string(std::max(min_count, 2)) +
                                  " observations, got " + std::to_string(n));
  }

  std::vector<Eigen::Vector3d> centers(n);
  std::vector<Eigen::Vector3d> rays(n);  // unit observation rays, world frame
  for (int i = 0; i < n; ++i) {
    const Observation& obs = observations[i];
    centers[i] = obs.pose.center();
    const Eigen::Vector2d nrm = obs.camera.pixel_to_normalized(obs.pixel);
    const Eigen::Vector3d dir_cam(nrm.x(), nrm.y(), 1.0);
    rays[i] = (obs.pose.rotation.conjugate() * dir_cam).normalized();
  }

  double scale = 1.0;
  for (const Eigen::Vector3d& c : centers) scale = std::max(scale, c.norm());

  bool usable_pair = false;
  for (int i = 0; i < n && !usable_pair; ++i) {
    for (int j = i + 1; j < n && !usable_pair; ++j) {
      const bool distinct_centers =
          (centers[i] - centers[j]).norm() > 1e-12 * scale;
      const double cross = rays[i].cross(rays[j]).norm();
      const bool non_parallel = cross > 1e-8;
      usable_pair = distinct_centers && non_parallel;
    }
  }
  if (!usable_pair) {
    throw DegenerateGeometryError(
        "all observation pairs are degenerate (coincident centers or "
        "parallel rays)");
  }

  // DLT: stack u*(p3.X) - p1.X and v*(p3.X) - p2.X per view with
  // P = [R | t] in normalized coordinates.
  Eigen::MatrixXd a(2 * n, 4);
  for (int i = 0; i < n; ++i) {
    const Observation& obs = observations[i];
    const Eigen::Vector2d nrm = obs.camera.pixel_to_normalized(obs.pixel);
    Eigen::Matrix<double, 3, 4> p;
    p.leftCols<3>() = obs.pose.rotation_matrix();
    p.col(3) = obs.pose.translation;
    a.row(2 * i) = nrm.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = nrm.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14 * h.head<3>().norm()) {
    throw DegenerateGeometryError("triangulated point at infinity");
  }

  TriangulationResult result;
  result.point = h.head<3>() / h(3);

  double reproj_sum = 0.0;
  for (const Observation& obs : observations) {
    const double err =
        reprojection_error_px(obs.camera, obs.pose, result.point, obs.pixel);
    reproj_sum += std::isfinite(err) ? err : 1e8;
  }
  result.mean_reproj_px = reproj_sum / n;

  double best_angle = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d di = result.point - centers[i];
    if (di.norm() < 1e-14) continue;
    for (int j = i + 1; j < n; ++j) {
      const Eigen::Vector3d dj = result.point - centers[j];
      if (dj.norm() < 1e-14) continue;
      const double c =
          std::clamp(di.normalized().dot(dj.normalized()), -1.0, 1.0);
      best_angle = std::max(best_angle, std::acos(c) * kRadToDeg);
    }
  }
  result.best_angle_deg = best_angle;
  return result;
}

}  // namespace posebench
