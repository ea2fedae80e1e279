#pragma once

#include <Eigen/Core>

#include <unordered_map>
#include <vector>

#include "posebench/geometry.hpp"
#include "posebench/types.hpp"

namespace posebench {

enum class RobustLoss { kNone, kHuber };

struct BAOptions {
  int max_iterations = 50;
  double rel_cost_tol = 1e-6;
  RobustLoss loss = RobustLoss::kHuber;
  double huber_delta_px = 1.0;
  bool refine_poses = true;
  bool refine_points = true;
  bool refine_focal = true;
  bool refine_principal_point = false;
  bool refine_distortion = true;
  double damping_init = 1e-4;
};

enum class BATermination { kConverged, kMaxIterations, kStalled };

struct BAReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted LM steps
  BATermination termination = BATermination::kConverged;
  double mean_reproj_before_px = 0.0;
  double mean_reproj_after_px = 0.0;
  // Cost after each accepted step; strictly decreasing.
  std::vector<double> cost_trace;
};

// Reprojection residual (projected - observed) in pixels. Behind-camera
// observations return the fixed sentinel (1e4, 1e4).
struct ResidualEval {
  Eigen::Vector2d residual = Eigen::Vector2d::Zero();
  bool behind = false;
};
ResidualEval ba_residual(const Eigen::Vector2d& observed, const Pose& pose,
                         const CameraModel& camera, const Eigen::Vector3d& point);

// Analytic derivative blocks of the residual. The pose increment is the
// local 6-vector [omega; dt] applied as R <- exp([omega]x) R, t <- t + dt.
// The intrinsics block covers every parameter of the camera model in
// storage order (zero for OPENCV_FISHEYE, whose intrinsics stay frozen).
// Behind-camera configurations return zero blocks with the flag set.
struct JacobianBlocks {
  Eigen::Matrix<double, 2, 6> pose = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> point = Eigen::Matrix<double, 2, 3>::Zero();
  Eigen::Matrix<double, 2, Eigen::Dynamic> intrinsics;
  bool behind = false;
};
JacobianBlocks ba_jacobians(const Pose& pose, const CameraModel& camera,
                            const Eigen::Vector3d& point);

// rho(s) and rho'(s) for s = |r|^2 in px^2.
double robust_cost(double sq_norm_px2, const BAOptions& options);
double robust_weight(double sq_norm_px2, const BAOptions& options);

// Sum of rho(|r|^2) over all linked observations.
double ba_cost(const SparseModel& model, const BAOptions& options);
// Unweighted mean pixel reprojection distance over linked observations
// (behind-camera sentinel included).
double ba_mean_reprojection_px(const SparseModel& model);

// Column layout of the reduced camera system. The gauge is fixed by
// freezing the full pose of the image with the most linked observations
// and one translation coordinate of the runner-up (the component with the
// largest scale sensitivity), which pins exactly the 7-DOF similarity
// gauge. Ties break to the smaller id.
struct PoseParamBlock {
  image_id_t image_id = 0;
  int col = -1;            // -1: fully frozen (gauge anchor)
  int num_params = 0;      // 6, or 5 when one translation coordinate is frozen
  int frozen_t_coord = -1; // 0..2 for the scale anchor, else -1
};
struct IntrinsicParamBlock {
  camera_id_t camera_id = 0;
  int col = -1;
  std::vector<int> param_indices;  // subset of CameraRecord::params
};
struct BALayout {
  std::vector<PoseParamBlock> poses;            // ascending image id
  std::vector<IntrinsicParamBlock> intrinsics;  // ascending camera id
  std::vector<point3d_id_t> point_ids;          // ascending; empty if points frozen
  int num_camera_cols = 0;
  image_id_t anchor_image = 0;
  image_id_t scale_anchor_image = 0;
  std::unordered_map<image_id_t, int> pose_index;
  std::unordered_map<camera_id_t, int> intr_index;
  std::unordered_map<point3d_id_t, int> point_index;
};
BALayout ba_layout(const SparseModel& model, const BAOptions& options);

// One damped step: solves (H + lambda * max(diag(H), 1e-6)) delta = -g by
// point-block Schur elimination with a dense Cholesky on the reduced
// camera system. `solvable` is false when the reduced system is not
// positive definite at this damping.
struct BAStep {
  Eigen::VectorXd camera;  // layout.num_camera_cols
  Eigen::VectorXd points;  // 3 * point count
  bool solvable = false;
};
BAStep ba_schur_step(const SparseModel& model, const BAOptions& options,
                     const BALayout& layout, double lambda);

// Diagonal floor used in the damping term above; published so the dense
// full-system oracle can reproduce the augmented system exactly.
inline constexpr double kBaDampingDiagFloor = 1e-6;

void ba_apply_step(SparseModel& model, const BALayout& layout, const BAStep& step);

// Levenberg-Marquardt with point-block Schur elimination. Accepted steps
// strictly decrease the robust cost; stalls (damping beyond 1e10) return
// the best model reached.
BAReport ba_solve(SparseModel& model, const BAOptions& options);

}  // namespace posebench
