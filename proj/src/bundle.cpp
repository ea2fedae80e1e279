#include "posebench/bundle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "posebench/error.hpp"
#include "posebench/threads.hpp"

namespace posebench {

namespace {

constexpr double kBehindResidual = 1e4;
// Fixed chunk size for parallel accumulation; partial sums are reduced in
// chunk order, so results do not depend on the thread count.
constexpr int kPointChunk = 64;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

// Indices of the focal / principal point / distortion parameters within
// CameraRecord::params, per model kind.
void intrinsic_param_groups(CameraModelKind kind, std::vector<int>& focal,
                            std::vector<int>& principal,
                            std::vector<int>& distortion) {
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
      focal = {0};
      principal = {1, 2};
      distortion = {};
      return;
    case CameraModelKind::kPinhole:
      focal = {0, 1};
      principal = {2, 3};
      distortion = {};
      return;
    case CameraModelKind::kSimpleRadial:
      focal = {0};
      principal = {1, 2};
      distortion = {3};
      return;
    case CameraModelKind::kRadial:
      focal = {0};
      principal = {1, 2};
      distortion = {3, 4};
      return;
    case CameraModelKind::kOpenCV:
      focal = {0, 1};
      principal = {2, 3};
      distortion = {4, 5, 6, 7};
      return;
    case CameraModelKind::kOpenCVFisheye:
      // Intrinsics frozen: no derivative tower for the fisheye model.
      focal = {};
      principal = {};
      distortion = {};
      return;
  }
  throw ValidationError("unknown camera model kind");
}

struct ObsRef {
  int point_index = -1;   // -1 when points are frozen
  point3d_id_t point_id = 0;
  image_id_t image_id = 0;
  int pose_block = -1;
  int intr_block = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

// Linked observations in canonical order: ascending point id, then track
// order. This is the accumulation order for all normal-equation sums.
std::vector<ObsRef> enumerate_observations(const SparseModel& model,
                                           const BALayout& layout) {
  std::vector<ObsRef> refs;
  for (const auto& [point_id, point] : model.points) {
    for (const TrackElement& el : point.track) {
      ObsRef ref;
      ref.point_id = point_id;
      const auto pit = layout.point_index.find(point_id);
      ref.point_index = pit == layout.point_index.end() ? -1 : pit->second;
      ref.image_id = el.image_id;
      const ImageRecord& image = model.images.at(el.image_id);
      const Observation2D& obs = image.observations.at(el.obs_index);
      ref.pixel = {obs.x, obs.y};
      const auto bit = layout.pose_index.find(el.image_id);
      if (bit != layout.pose_index.end()) {
        ref.pose_block = layout.poses[bit->second].col >= 0 ? bit->second : -1;
      }
      const auto iit = layout.intr_index.find(image.camera_id);
      if (iit != layout.intr_index.end()) ref.intr_block = iit->second;
      refs.push_back(ref);
    }
  }
  return refs;
}

struct EvalContext {
  std::unordered_map<image_id_t, Pose> poses;
  std::unordered_map<image_id_t, CameraModel> cameras;  // per image
  std::unordered_map<point3d_id_t, Eigen::Vector3d> points;

  explicit EvalContext(const SparseModel& model) {
    std::unordered_map<camera_id_t, CameraModel> by_camera;
    for (const auto& [id, camera] : model.cameras) {
      by_camera.emplace(id, CameraModel::from_record(camera));
    }
    for (const auto& [id, image] : model.images) {
      poses.emplace(id, Pose::from_image(image));
      cameras.emplace(id, by_camera.at(image.camera_id));
    }
    for (const auto& [id, point] : model.points) points.emplace(id, point.xyz);
  }
};

}  // namespace

ResidualEval ba_residual(const Eigen::Vector2d& observed, const Pose& pose,
                         const CameraModel& camera, const Eigen::Vector3d& point) {
  ResidualEval eval;
  const Projection proj = project(camera, pose, point);
  if (proj.behind) {
    eval.behind = true;
    eval.residual = Eigen::Vector2d(kBehindResidual, kBehindResidual);
    return eval;
  }
  eval.residual = proj.pixel - observed;
  return eval;
}

JacobianBlocks ba_jacobians(const Pose& pose, const CameraModel& camera,
                            const Eigen::Vector3d& point) {
  JacobianBlocks blocks;
  blocks.intrinsics.resize(2, static_cast<Eigen::Index>(camera.params.size()));
  blocks.intrinsics.setZero();

  const Eigen::Matrix3d rot = pose.rotation_matrix();
  const Eigen::Vector3d cam = rot * point + pose.translation;
  if (cam.z() <= 0.0) {
    blocks.behind = true;
    return blocks;
  }

  const double inv_z = 1.0 / cam.z();
  const Eigen::Vector2d n(cam.x() * inv_z, cam.y() * inv_z);

  // d(normalized)/d(camera-frame point)
  Eigen::Matrix<double, 2, 3> dn_dcam;
  dn_dcam << inv_z, 0.0, -cam.x() * inv_z * inv_z,
             0.0, inv_z, -cam.y() * inv_z * inv_z;

  const Eigen::Matrix2d ddist = camera.distort_jacobian(n);
  const double fx = camera.focal_x();
  const double fy = camera.focal_y();
  Eigen::Matrix2d focal_scale;
  focal_scale << fx, 0.0, 0.0, fy;

  const Eigen::Matrix<double, 2, 3> dpix_dcam = focal_scale * ddist * dn_dcam;

  // exp([omega]x) perturbation: d(R X)/d(omega) = -[R X]x.
  blocks.pose.leftCols<3>() = dpix_dcam * (-skew(rot * point));
  blocks.pose.rightCols<3>() = dpix_dcam;
  blocks.point = dpix_dcam * rot;

  const Eigen::Vector2d d = camera.distort(n);
  const double u = n.x();
  const double v = n.y();
  const double r2 = u * u + v * v;
  switch (camera.kind) {
    case CameraModelKind::kSimplePinhole:
      blocks.intrinsics.col(0) = d;                       // f
      blocks.intrinsics.col(1) = Eigen::Vector2d(1, 0);   // cx
      blocks.intrinsics.col(2) = Eigen::Vector2d(0, 1);   // cy
      break;
    case CameraModelKind::kPinhole:
      blocks.intrinsics(0, 0) = d.x();                    // fx
      blocks.intrinsics(1, 1) = d.y();                    // fy
      blocks.intrinsics.col(2) = Eigen::Vector2d(1, 0);
      blocks.intrinsics.col(3) = Eigen::Vector2d(0, 1);
      break;
    case CameraModelKind::kSimpleRadial:
      blocks.intrinsics.col(0) = d;
      blocks.intrinsics.col(1) = Eigen::Vector2d(1, 0);
      blocks.intrinsics.col(2) = Eigen::Vector2d(0, 1);
      blocks.intrinsics.col(3) = Eigen::Vector2d(fx * u * r2, fy * v * r2);
      break;
    case CameraModelKind::kRadial:
      blocks.intrinsics.col(0) = d;
      blocks.intrinsics.col(1) = Eigen::Vector2d(1, 0);
      blocks.intrinsics.col(2) = Eigen::Vector2d(0, 1);
      blocks.intrinsics.col(3) = Eigen::Vector2d(fx * u * r2, fy * v * r2);
      blocks.intrinsics.col(4) =
          Eigen::Vector2d(fx * u * r2 * r2, fy * v * r2 * r2);
      break;
    case CameraModelKind::kOpenCV:
      blocks.intrinsics(0, 0) = d.x();
      blocks.intrinsics(1, 1) = d.y();
      blocks.intrinsics.col(2) = Eigen::Vector2d(1, 0);
      blocks.intrinsics.col(3) = Eigen::Vector2d(0, 1);
      blocks.intrinsics.col(4) = Eigen::Vector2d(fx * u * r2, fy * v * r2);
      blocks.intrinsics.col(5) =
          Eigen::Vector2d(fx * u * r2 * r2, fy * v * r2 * r2);
      blocks.intrinsics.col(6) =
          Eigen::Vector2d(fx * 2.0 * u * v, fy * (r2 + 2.0 * v * v));
      blocks.intrinsics.col(7) =
          Eigen::Vector2d(fx * (r2 + 2.0 * u * u), fy * 2.0 * u * v);
      break;
    case CameraModelKind::kOpenCVFisheye:
      break;  // frozen
  }
  return blocks;
}

double robust_cost(double sq_norm_px2, const BAOptions& options) {
  if (options.loss == RobustLoss::kNone) return sq_norm_px2;
  const double delta = options.huber_delta_px;
  const double delta2 = delta * delta;
  if (sq_norm_px2 <= delta2) return sq_norm_px2;
  return 2.0 * delta * std::sqrt(sq_norm_px2) - delta2;
}

double robust_weight(double sq_norm_px2, const BAOptions& options) {
  if (options.loss == RobustLoss::kNone) return 1.0;
  const double delta = options.huber_delta_px;
  const double delta2 = delta * delta;
  if (sq_norm_px2 <= delta2) return 1.0;
  return delta / std::sqrt(sq_norm_px2);
}

double ba_cost(const SparseModel& model, const BAOptions& options) {
  const EvalContext ctx(model);
  double cost = 0.0;
  for (const auto& [point_id, point] : model.points) {
    for (const TrackElement& el : point.track) {
      const Observation2D& obs =
          model.images.at(el.image_id).observations.at(el.obs_index);
      const ResidualEval eval =
          ba_residual({obs.x, obs.y}, ctx.poses.at(el.image_id),
                      ctx.cameras.at(el.image_id), point.xyz);
      cost += robust_cost(eval.residual.squaredNorm(), options);
    }
  }
  return cost;
}

double ba_mean_reprojection_px(const SparseModel& model) {
  const EvalContext ctx(model);
  double sum = 0.0;
  size_t count = 0;
  for (const auto& [point_id, point] : model.points) {
    for (const TrackElement& el : point.track) {
      const Observation2D& obs =
          model.images.at(el.image_id).observations.at(el.obs_index);
      const ResidualEval eval =
          ba_residual({obs.x, obs.y}, ctx.poses.at(el.image_id),
                      ctx.cameras.at(el.image_id), point.xyz);
      sum += eval.residual.norm();
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

BALayout ba_layout(const SparseModel& model, const BAOptions& options) {
  if (!options.refine_poses && !options.refine_points && !options.refine_focal &&
      !options.refine_principal_point && !options.refine_distortion) {
    throw Error("bundle adjustment needs at least one refine flag");
  }
  if (!(options.rel_cost_tol > 0.0) || !(options.damping_init > 0.0)) {
    throw Error("bundle adjustment tolerances must be positive");
  }

  BALayout layout;

  // Linked-observation counts drive anchor selection.
  std::map<image_id_t, int> obs_count;
  for (const auto& [point_id, point] : model.points) {
    for (const TrackElement& el : point.track) ++obs_count[el.image_id];
  }
  if (obs_count.empty()) {
    throw Error("bundle adjustment needs a model with linked observations");
  }
  if (obs_count.size() < 2 && options.refine_poses) {
    throw Error("bundle adjustment needs at least 2 posed images with "
                "observations");
  }

  int col = 0;
  if (options.refine_poses) {
    image_id_t anchor1 = 0, anchor2 = 0;
    int best = -1, second = -1;
    for (const auto& [id, count] : obs_count) {  // ascending id: ties keep first
      if (count > best) {
        second = best;
        anchor2 = anchor1;
        best = count;
        anchor1 = id;
      } else if (count > second) {
        second = count;
        anchor2 = id;
      }
    }
    layout.anchor_image = anchor1;
    layout.scale_anchor_image = anchor2;

    const Pose anchor_pose = Pose::from_image(model.images.at(anchor1));
    const Pose scale_pose = Pose::from_image(model.images.at(anchor2));
    // Scale sensitivity of the second anchor's translation: scaling the
    // scene about the first anchor's center moves t2 along -R2 (C2 - C1).
    const Eigen::Vector3d dt_ds =
        scale_pose.rotation_matrix() * (scale_pose.center() - anchor_pose.center());
    int frozen_coord = 0;
    dt_ds.cwiseAbs().maxCoeff(&frozen_coord);

    for (const auto& [id, count] : obs_count) {
      PoseParamBlock block;
      block.image_id = id;
      if (id == anchor1) {
        block.col = -1;
        block.num_params = 0;
      } else if (id == anchor2) {
        block.col = col;
        block.num_params = 5;
        block.frozen_t_coord = frozen_coord;
        col += 5;
      } else {
        block.col = col;
        block.num_params = 6;
        col += 6;
      }
      layout.pose_index.emplace(id, static_cast<int>(layout.poses.size()));
      layout.poses.push_back(block);
    }
  }

  std::set<camera_id_t> used_cameras;
  for (const auto& [id, count] : obs_count) {
    used_cameras.insert(model.images.at(id).camera_id);
  }
  for (const camera_id_t camera_id : used_cameras) {
    const CameraRecord& camera = model.cameras.at(camera_id);
    std::vector<int> focal, principal, distortion;
    intrinsic_param_groups(camera.model, focal, principal, distortion);
    IntrinsicParamBlock block;
    block.camera_id = camera_id;
    if (options.refine_focal) {
      block.param_indices.insert(block.param_indices.end(), focal.begin(),
                                 focal.end());
    }
    if (options.refine_principal_point) {
      block.param_indices.insert(block.param_indices.end(), principal.begin(),
                                 principal.end());
    }
    if (options.refine_distortion) {
      block.param_indices.insert(block.param_indices.end(), distortion.begin(),
                                 distortion.end());
    }
    std::sort(block.param_indices.begin(), block.param_indices.end());
    if (block.param_indices.empty()) continue;
    block.col = col;
    col += static_cast<int>(block.param_indices.size());
    layout.intr_index.emplace(camera_id, static_cast<int>(layout.intrinsics.size()));
    layout.intrinsics.push_back(std::move(block));
  }
  layout.num_camera_cols = col;

  if (options.refine_points) {
    for (const auto& [id, point] : model.points) {
      if (point.track.empty()) continue;
      layout.point_index.emplace(id, static_cast<int>(layout.point_ids.size()));
      layout.point_ids.push_back(id);
    }
  }
  return layout;
}

namespace {

struct PointSystem {
  Eigen::Matrix3d v = Eigen::Matrix3d::Zero();
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  // Support of the point in the camera system: sorted global column
  // segments and the local W block (rows follow the segments).
  std::vector<std::pair<int, int>> segments;  // (global col, width)
  Eigen::MatrixXd w;                          // total support rows x 3
};

struct NormalEquations {
  Eigen::MatrixXd u;   // camera x camera
  Eigen::VectorXd g_c;
  std::vector<PointSystem> points;
};

// Columns of the pose block, honoring the frozen translation coordinate.
void scatter_pose_jacobian(const PoseParamBlock& block,
                           const Eigen::Matrix<double, 2, 6>& full,
                           Eigen::Matrix<double, 2, 6>& reduced) {
  int out = 0;
  for (int c = 0; c < 6; ++c) {
    if (c >= 3 && (c - 3) == block.frozen_t_coord) continue;
    reduced.col(out++) = full.col(c);
  }
}

}  // namespace

BAStep ba_schur_step(const SparseModel& model, const BAOptions& options,
                     const BALayout& layout, double lambda) {
  const EvalContext ctx(model);
  const std::vector<ObsRef> obs_list = enumerate_observations(model, layout);
  const int num_cols = layout.num_camera_cols;
  const int num_points = static_cast<int>(layout.point_ids.size());

  // Observation ranges per layout point (obs_list is ordered by point id).
  std::vector<std::pair<int, int>> point_ranges(num_points, {0, 0});
  std::vector<std::pair<int, int>> loose_ranges;  // obs of frozen points
  {
    int i = 0;
    const int n = static_cast<int>(obs_list.size());
    while (i < n) {
      int j = i;
      while (j < n && obs_list[j].point_id == obs_list[i].point_id) ++j;
      if (obs_list[i].point_index >= 0) {
        point_ranges[obs_list[i].point_index] = {i, j};
      } else {
        loose_ranges.push_back({i, j});
      }
      i = j;
    }
  }

  NormalEquations eq;
  eq.u = Eigen::MatrixXd::Zero(num_cols, num_cols);
  eq.g_c = Eigen::VectorXd::Zero(num_cols);
  eq.points.resize(num_points);

  const int num_threads = max_threads();
  const int num_chunks = (num_points + kPointChunk - 1) / kPointChunk;

  std::vector<Eigen::MatrixXd> chunk_u(num_chunks);
  std::vector<Eigen::VectorXd> chunk_g(num_chunks);

  const auto accumulate_obs = [&](const ObsRef& ref, Eigen::MatrixXd& u,
                                  Eigen::VectorXd& g_c, PointSystem* point_sys,
                                  const std::vector<int>& support_offset) {
    const Pose& pose = ctx.poses.at(ref.image_id);
    const CameraModel& camera = ctx.cameras.at(ref.image_id);
    const Eigen::Vector3d& x = ctx.points.at(ref.point_id);

    const ResidualEval res = ba_residual(ref.pixel, pose, camera, x);
    if (res.behind) return;  // zero blocks; the sentinel only affects cost
    const JacobianBlocks jac = ba_jacobians(pose, camera, x);
    const double w = robust_weight(res.residual.squaredNorm(), options);

    Eigen::Matrix<double, 2, 6> jp = Eigen::Matrix<double, 2, 6>::Zero();
    int pose_cols = 0, pose_col0 = -1;
    if (ref.pose_block >= 0) {
      const PoseParamBlock& block = layout.poses[ref.pose_block];
      scatter_pose_jacobian(block, jac.pose, jp);
      pose_cols = block.num_params;
      pose_col0 = block.col;
    }
    Eigen::Matrix<double, 2, Eigen::Dynamic> ji;
    int intr_cols = 0, intr_col0 = -1;
    if (ref.intr_block >= 0) {
      const IntrinsicParamBlock& block = layout.intrinsics[ref.intr_block];
      intr_cols = static_cast<int>(block.param_indices.size());
      ji.resize(2, intr_cols);
      for (int c = 0; c < intr_cols; ++c) {
        ji.col(c) = jac.intrinsics.col(block.param_indices[c]);
      }
      intr_col0 = block.col;
    }

    const auto jp_block = jp.leftCols(pose_cols);
    if (pose_cols > 0) {
      u.block(pose_col0, pose_col0, pose_cols, pose_cols).noalias() +=
          w * jp_block.transpose() * jp_block;
      g_c.segment(pose_col0, pose_cols).noalias() +=
          w * jp_block.transpose() * res.residual;
    }
    if (intr_cols > 0) {
      u.block(intr_col0, intr_col0, intr_cols, intr_cols).noalias() +=
          w * ji.transpose() * ji;
      g_c.segment(intr_col0, intr_cols).noalias() +=
          w * ji.transpose() * res.residual;
      if (pose_cols > 0) {
        const Eigen::MatrixXd cross = w * jp_block.transpose() * ji;
        u.block(pose_col0, intr_col0, pose_cols, intr_cols) += cross;
        u.block(intr_col0, pose_col0, intr_cols, pose_cols) += cross.transpose();
      }
    }

    if (point_sys != nullptr) {
      point_sys->v.noalias() += w * jac.point.transpose() * jac.point;
      point_sys->g.noalias() += w * jac.point.transpose() * res.residual;
      if (pose_cols > 0) {
        point_sys->w.middleRows(support_offset[0], pose_cols).noalias() +=
            w * jp_block.transpose() * jac.point;
      }
      if (intr_cols > 0) {
        point_sys->w.middleRows(support_offset[1], intr_cols).noalias() +=
            w * ji.transpose() * jac.point;
      }
    }
  };

#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads) \
    if (num_threads > 1)
  for (int chunk = 0; chunk < num_chunks; ++chunk) {
    chunk_u[chunk] = Eigen::MatrixXd::Zero(num_cols, num_cols);
    chunk_g[chunk] = Eigen::VectorXd::Zero(num_cols);
    const int begin = chunk * kPointChunk;
    const int end = std::min(num_points, begin + kPointChunk);
    for (int p = begin; p < end; ++p) {
      PointSystem& sys = eq.points[p];
      const auto [obs_begin, obs_end] = point_ranges[p];

      // Collect the support segments: pose columns of observing images,
      // then intrinsic columns of their cameras, deduplicated and sorted.
      std::vector<std::pair<int, int>> segments;
      for (int o = obs_begin; o < obs_end; ++o) {
        const ObsRef& ref = obs_list[o];
        if (ref.pose_block >= 0) {
          const PoseParamBlock& block = layout.poses[ref.pose_block];
          segments.push_back({block.col, block.num_params});
        }
        if (ref.intr_block >= 0) {
          const IntrinsicParamBlock& block = layout.intrinsics[ref.intr_block];
          segments.push_back(
              {block.col, static_cast<int>(block.param_indices.size())});
        }
      }
      std::sort(segments.begin(), segments.end());
      segments.erase(std::unique(segments.begin(), segments.end()),
                     segments.end());
      int total = 0;
      for (const auto& [c, width] : segments) total += width;
      sys.segments = segments;
      sys.w = Eigen::MatrixXd::Zero(total, 3);

      std::unordered_map<int, int> local_of_col;
      {
        int offset = 0;
        for (const auto& [c, width] : segments) {
          local_of_col.emplace(c, offset);
          offset += width;
        }
      }

      for (int o = obs_begin; o < obs_end; ++o) {
        const ObsRef& ref = obs_list[o];
        std::vector<int> support_offset(2, 0);
        if (ref.pose_block >= 0) {
          support_offset[0] = local_of_col.at(layout.poses[ref.pose_block].col);
        }
        if (ref.intr_block >= 0) {
          support_offset[1] =
              local_of_col.at(layout.intrinsics[ref.intr_block].col);
        }
        accumulate_obs(ref, chunk_u[chunk], chunk_g[chunk], &sys, support_offset);
      }
    }
  }
  // Fixed reduction order keeps the result thread-count independent.
  for (int chunk = 0; chunk < num_chunks; ++chunk) {
    if (chunk_u[chunk].size() > 0) {
      eq.u += chunk_u[chunk];
      eq.g_c += chunk_g[chunk];
    }
  }
  // Observations of frozen points still constrain camera parameters.
  for (const auto& [begin, end] : loose_ranges) {
    for (int o = begin; o < end; ++o) {
      accumulate_obs(obs_list[o], eq.u, eq.g_c, nullptr, {});
    }
  }

  BAStep step;
  step.camera = Eigen::VectorXd::Zero(num_cols);
  step.points = Eigen::VectorXd::Zero(3 * num_points);

  // Damping: H_ii + lambda * max(H_ii, floor).
  Eigen::MatrixXd s = eq.u;
  for (int c = 0; c < num_cols; ++c) {
    s(c, c) += lambda * std::max(eq.u(c, c), kBaDampingDiagFloor);
  }
  Eigen::VectorXd rhs = -eq.g_c;

  std::vector<Eigen::Matrix3d> v_inv(num_points);
  const int reduce_chunks = num_chunks;
  std::vector<Eigen::MatrixXd> chunk_s(reduce_chunks);
  std::vector<Eigen::VectorXd> chunk_rhs(reduce_chunks);
  std::vector<char> chunk_ok(reduce_chunks, 1);

#pragma omp parallel for schedule(dynamic, 1) num_threads(num_threads) \
    if (num_threads > 1)
  for (int chunk = 0; chunk < reduce_chunks; ++chunk) {
    chunk_s[chunk] = Eigen::MatrixXd::Zero(num_cols, num_cols);
    chunk_rhs[chunk] = Eigen::VectorXd::Zero(num_cols);
    const int begin = chunk * kPointChunk;
    const int end = std::min(num_points, begin + kPointChunk);
    for (int p = begin; p < end; ++p) {
      PointSystem& sys = eq.points[p];
      Eigen::Matrix3d v_damped = sys.v;
      for (int c = 0; c < 3; ++c) {
        v_damped(c, c) += lambda * std::max(sys.v(c, c), kBaDampingDiagFloor);
      }
      const Eigen::LLT<Eigen::Matrix3d> llt(v_damped);
      if (llt.info() != Eigen::Success) {
        chunk_ok[chunk] = 0;
        continue;
      }
      v_inv[p] = llt.solve(Eigen::Matrix3d::Identity());

      const Eigen::MatrixXd wv = sys.w * v_inv[p];  // support x 3
      const Eigen::MatrixXd wvw = wv * sys.w.transpose();
      const Eigen::VectorXd wvg = wv * sys.g;
      int row_i = 0;
      for (const auto& [col_i, width_i] : sys.segments) {
        chunk_rhs[chunk].segment(col_i, width_i) += wvg.segment(row_i, width_i);
        int row_j = 0;
        for (const auto& [col_j, width_j] : sys.segments) {
          chunk_s[chunk].block(col_i, col_j, width_i, width_j) +=
              wvw.block(row_i, row_j, width_i, width_j);
          row_j += width_j;
        }
        row_i += width_i;
      }
    }
  }
  for (int chunk = 0; chunk < reduce_chunks; ++chunk) {
    if (!chunk_ok[chunk]) return step;  // solvable stays false
  }
  for (int chunk = 0; chunk < reduce_chunks; ++chunk) {
    if (chunk_s[chunk].size() > 0) {
      s -= chunk_s[chunk];
      rhs += chunk_rhs[chunk];
    }
  }

  if (num_cols > 0) {
    const Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) return step;
    step.camera = llt.solve(rhs);
  }

  for (int p = 0; p < num_points; ++p) {
    const PointSystem& sys = eq.points[p];
    Eigen::Vector3d coupled = sys.g;
    int row = 0;
    for (const auto& [col, width] : sys.segments) {
      coupled.noalias() +=
          sys.w.middleRows(row, width).transpose() * step.camera.segment(col, width);
      row += width;
    }
    step.points.segment<3>(3 * p) = -(v_inv[p] * coupled);
  }
  step.solvable = true;
  return step;
}

void ba_apply_step(SparseModel& model, const BALayout& layout, const BAStep& step) {
  for (const PoseParamBlock& block : layout.poses) {
    if (block.col < 0) continue;
    ImageRecord& image = model.images.at(block.image_id);
    Eigen::Vector3d omega = Eigen::Vector3d::Zero();
    Eigen::Vector3d dt = Eigen::Vector3d::Zero();
    int in = block.col;
    for (int c = 0; c < 3; ++c) omega[c] = step.camera[in++];
    for (int c = 0; c < 3; ++c) {
      if (c == block.frozen_t_coord) continue;
      dt[c] = step.camera[in++];
    }
    const double angle = omega.norm();
    Eigen::Quaterniond delta = Eigen::Quaterniond::Identity();
    if (angle > 0.0) {
      delta = Eigen::Quaterniond(Eigen::AngleAxisd(angle, omega / angle));
    }
    Eigen::Quaterniond rotation = (delta * image.rotation).normalized();
    if (rotation.w() < 0.0) rotation.coeffs() = -rotation.coeffs();
    image.rotation = rotation;
    image.translation += dt;
  }
  for (const IntrinsicParamBlock& block : layout.intrinsics) {
    CameraRecord& camera = model.cameras.at(block.camera_id);
    for (size_t c = 0; c < block.param_indices.size(); ++c) {
      camera.params[block.param_indices[c]] +=
          step.camera[block.col + static_cast<int>(c)];
    }
  }
  for (size_t p = 0; p < layout.point_ids.size(); ++p) {
    model.points.at(layout.point_ids[p]).xyz +=
        step.points.segment<3>(3 * static_cast<int>(p));
  }
}

BAReport ba_solve(SparseModel& model, const BAOptions& options) {
  const BALayout layout = ba_layout(model, options);

  BAReport report;
  report.initial_cost = ba_cost(model, options);
  report.mean_reproj_before_px = ba_mean_reprojection_px(model);

  size_t num_obs = 0;
  for (const auto& [id, point] : model.points) num_obs += point.track.size();
  // Below this the residuals are floating-point noise; polishing further
  // only makes the parameters wander.
  const double cost_floor = 1e-20 * static_cast<double>(std::max<size_t>(1, num_obs));

  double cost = report.initial_cost;
  double lambda = options.damping_init;
  double escalation = 2.0;
  bool previous_small = false;
  report.termination = BATermination::kMaxIterations;

  while (report.iterations < options.max_iterations) {
    if (cost <= cost_floor) {
      report.termination = BATermination::kConverged;
      break;
    }
    const BAStep step = ba_schur_step(model, options, layout, lambda);
    if (!step.solvable) {
      lambda *= escalation;
      escalation *= 2.0;
      if (lambda > 1e10) {
        report.termination = BATermination::kStalled;
        break;
      }
      continue;
    }
    const double step_norm =
        std::max(step.camera.size() > 0 ? step.camera.lpNorm<Eigen::Infinity>() : 0.0,
                 step.points.size() > 0 ? step.points.lpNorm<Eigen::Infinity>() : 0.0);
    if (step_norm < 1e-14) {
      report.termination = BATermination::kConverged;
      break;
    }

    SparseModel candidate = model;
    ba_apply_step(candidate, layout, step);
    const double new_cost = ba_cost(candidate, options);
    if (new_cost < cost) {
      model = std::move(candidate);
      ++report.iterations;
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      cost = new_cost;
      report.cost_trace.push_back(cost);
      lambda = std::max(lambda / 3.0, 1e-12);
      escalation = 2.0;
      // One small decrease right after a damping escalation is not
      // convergence; require two in a row.
      const bool small = rel < options.rel_cost_tol;
      if (small && previous_small) {
        report.termination = BATermination::kConverged;
        break;
      }
      previous_small = small;
    } else {
      lambda *= escalation;
      escalation *= 2.0;
      if (lambda > 1e10) {
        report.termination = BATermination::kStalled;
        break;
      }
    }
  }

  report.final_cost = cost;
  report.mean_reproj_after_px = ba_mean_reprojection_px(model);
  return report;
}

}  // namespace posebench
