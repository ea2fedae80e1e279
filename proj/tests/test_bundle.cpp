#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include "posebench/bundle.hpp"
#include "posebench/error.hpp"
#include "posebench/eval_poses.hpp"
#include "posebench/rng.hpp"
#include "posebench/synth.hpp"
#include "posebench/threads.hpp"
#include "test_support.hpp"

using namespace posebench;

namespace {

CameraModel make_camera(CameraModelKind kind, SplitMix64& rng) {
  CameraModel cam;
  cam.kind = kind;
  cam.width = 800;
  cam.height = 800;
  switch (kind) {
    case CameraModelKind::kSimplePinhole:
      cam.params = {rng.uniform(300, 600), 400.0, 400.0};
      break;
    case CameraModelKind::kPinhole:
      cam.params = {rng.uniform(300, 600), rng.uniform(300, 600), 400.0, 400.0};
      break;
    case CameraModelKind::kSimpleRadial:
      cam.params = {rng.uniform(300, 600), 400.0, 400.0, rng.uniform(-0.1, 0.1)};
      break;
    case CameraModelKind::kRadial:
      cam.params = {rng.uniform(300, 600), 400.0, 400.0, rng.uniform(-0.1, 0.1),
                    rng.uniform(-0.02, 0.02)};
      break;
    case CameraModelKind::kOpenCV:
      cam.params = {rng.uniform(300, 600), rng.uniform(300, 600), 400.0, 400.0,
                    rng.uniform(-0.1, 0.1), rng.uniform(-0.02, 0.02),
                    rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3)};
      break;
    case CameraModelKind::kOpenCVFisheye:
      cam.params = {rng.uniform(300, 600), rng.uniform(300, 600), 400.0, 400.0,
                    rng.uniform(-0.02, 0.02), rng.uniform(-0.005, 0.005),
                    rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3)};
      break;
  }
  return cam;
}

Pose random_pose(SplitMix64& rng) {
  const Eigen::Quaterniond q =
      Eigen::Quaterniond(Eigen::AngleAxisd(
          rng.uniform(0.0, 0.4),
          Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian())
              .normalized()));
  return Pose(q, {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                  rng.uniform(-0.5, 0.5)});
}

// Central finite differences of the residual in every parameter block.
struct NumericBlocks {
  Eigen::Matrix<double, 2, 6> pose;
  Eigen::Matrix<double, 2, 3> point;
  Eigen::Matrix<double, 2, Eigen::Dynamic> intrinsics;
};

NumericBlocks numeric_jacobians(const Pose& pose, const CameraModel& camera,
                                const Eigen::Vector3d& point,
                                const Eigen::Vector2d& observed) {
  const double step = 1e-6;
  NumericBlocks blocks;
  blocks.intrinsics.resize(2, static_cast<int>(camera.params.size()));

  const auto residual_at = [&](const Pose& p, const CameraModel& c,
                               const Eigen::Vector3d& x) {
    return ba_residual(observed, p, c, x).residual;
  };

  for (int i = 0; i < 6; ++i) {
    Eigen::Matrix<double, 6, 1> delta = Eigen::Matrix<double, 6, 1>::Zero();
    delta[i] = step;
    const auto perturbed = [&](double sign) {
      const Eigen::Vector3d omega = sign * delta.head<3>();
      Eigen::Quaterniond dq = Eigen::Quaterniond::Identity();
      if (omega.norm() > 0.0) {
        dq = Eigen::Quaterniond(Eigen::AngleAxisd(omega.norm(), omega.normalized()));
      }
      return Pose(dq * pose.rotation, pose.translation + sign * delta.tail<3>());
    };
    blocks.pose.col(i) =
        (residual_at(perturbed(1.0), camera, point) -
         residual_at(perturbed(-1.0), camera, point)) /
        (2.0 * step);
  }
  for (int i = 0; i < 3; ++i) {
    Eigen::Vector3d delta = Eigen::Vector3d::Zero();
    delta[i] = step;
    blocks.point.col(i) = (residual_at(pose, camera, point + delta) -
                           residual_at(pose, camera, point - delta)) /
                          (2.0 * step);
  }
  for (size_t i = 0; i < camera.params.size(); ++i) {
    CameraModel hi = camera, lo = camera;
    hi.params[i] += step;
    lo.params[i] -= step;
    blocks.intrinsics.col(static_cast<int>(i)) =
        (residual_at(pose, hi, point) - residual_at(pose, lo, point)) /
        (2.0 * step);
  }
  return blocks;
}

double block_rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  double worst = 0.0;
  for (int r = 0; r < analytic.rows(); ++r) {
    for (int c = 0; c < analytic.cols(); ++c) {
      const double denom =
          std::max({1.0, std::abs(analytic(r, c)), std::abs(numeric(r, c))});
      worst = std::max(worst, std::abs(analytic(r, c) - numeric(r, c)) / denom);
    }
  }
  return worst;
}

// A visible point in front of the camera, pixel within bounds.
bool make_test_configuration(SplitMix64& rng, CameraModelKind kind, Pose& pose,
                             CameraModel& camera, Eigen::Vector3d& point,
                             Eigen::Vector2d& observed) {
  camera = make_camera(kind, rng);
  pose = random_pose(rng);
  point = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(2.0, 8.0)};
  const Projection proj = project(camera, pose, point);
  if (proj.behind) return false;
  if (proj.pixel.x() < 0 || proj.pixel.y() < 0 ||
      proj.pixel.x() > static_cast<double>(camera.width) ||
      proj.pixel.y() > static_cast<double>(camera.height)) {
    return false;
  }
  observed = proj.pixel + Eigen::Vector2d(rng.gaussian(), rng.gaussian());
  return true;
}

SparseModel noisy_perturbed_scene(uint64_t seed, double pixel_noise,
                                  double rot_deg, double pos_frac,
                                  SparseModel* gt = nullptr, int cams = 10,
                                  int points = 100) {
  SynthConfig cfg;
  cfg.n_cameras = cams;
  cfg.n_points = points;
  cfg.pixel_noise_sigma = pixel_noise;
  cfg.seed = seed;
  const SynthScene scene = generate(cfg);
  if (gt != nullptr) *gt = scene.gt_model;
  SparseModel model = scene.gt_model;
  perturb_poses(model, rot_deg, pos_frac, seed + 1000);
  return model;
}

double mean_rotation_error(const SparseModel& est, const SparseModel& gt) {
  const PoseErrorReport report = align_and_evaluate(est, gt);
  double sum = 0.0;
  for (const ViewError& v : report.registered) sum += v.rotation_error_deg;
  return sum / static_cast<double>(report.registered.size());
}

}  // namespace

TEST_CASE("ba_residual: examples") {
  SplitMix64 rng(1);
  CameraModel cam;
  cam.kind = CameraModelKind::kSimplePinhole;
  cam.width = cam.height = 2000;
  cam.params = {1000.0, 0.0, 0.0};
  const Pose identity;

  const Eigen::Vector3d point(0.3, -0.2, 1.0);
  const Projection proj = project(cam, identity, point);
  const ResidualEval perfect = ba_residual(proj.pixel, identity, cam, point);
  CHECK(perfect.residual.norm() == doctest::Approx(0.0));

  // Shift +0.1 in x at depth 1 with f = 1000: approx (100, 0) px.
  const Eigen::Vector3d shifted = point + Eigen::Vector3d(0.1, 0.0, 0.0);
  const ResidualEval moved = ba_residual(proj.pixel, identity, cam, shifted);
  CHECK(moved.residual.x() == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(moved.residual.y() == doctest::Approx(0.0));

  const ResidualEval behind =
      ba_residual({0, 0}, identity, cam, {0.0, 0.0, -2.0});
  CHECK(behind.behind);
  CHECK(behind.residual.x() == 1e4);
  CHECK(behind.residual.y() == 1e4);
}

TEST_CASE("ba_jacobians: analytic matches central differences") {
  SplitMix64 rng(42);
  const CameraModelKind kinds[] = {
      CameraModelKind::kSimplePinhole, CameraModelKind::kPinhole,
      CameraModelKind::kSimpleRadial, CameraModelKind::kRadial,
      CameraModelKind::kOpenCV, CameraModelKind::kOpenCVFisheye};
  int tested = 0;
  while (tested < 120) {
    const CameraModelKind kind = kinds[tested % 6];
    Pose pose;
    CameraModel camera;
    Eigen::Vector3d point;
    Eigen::Vector2d observed;
    if (!make_test_configuration(rng, kind, pose, camera, point, observed))
      continue;
    ++tested;
    const JacobianBlocks analytic = ba_jacobians(pose, camera, point);
    REQUIRE(!analytic.behind);
    const NumericBlocks numeric = numeric_jacobians(pose, camera, point, observed);
    CHECK(block_rel_error(analytic.pose, numeric.pose) < 1e-5);
    CHECK(block_rel_error(analytic.point, numeric.point) < 1e-5);
    if (kind != CameraModelKind::kOpenCVFisheye) {
      CHECK(block_rel_error(analytic.intrinsics, numeric.intrinsics) < 1e-5);
    }
  }
}

TEST_CASE("ba_jacobians: translation-z column vanishes at large depth") {
  CameraModel cam;
  cam.kind = CameraModelKind::kSimplePinhole;
  cam.width = cam.height = 1000;
  cam.params = {500.0, 500.0, 500.0};
  const Pose identity;
  const JacobianBlocks jac =
      ba_jacobians(identity, cam, {0.1, 0.1, 1e6});
  CHECK(jac.pose.col(5).norm() < 1e-3);  // d residual / d t_z
}

TEST_CASE("ba_jacobians: simple radial distortion column") {
  CameraModel cam;
  cam.kind = CameraModelKind::kSimpleRadial;
  cam.width = cam.height = 1000;
  cam.params = {400.0, 500.0, 500.0, 0.0};
  const Pose identity;
  const Eigen::Vector3d point(0.4, -0.3, 2.0);
  const JacobianBlocks jac = ba_jacobians(identity, cam, point);
  const double u = point.x() / point.z();
  const double v = point.y() / point.z();
  const double r2 = u * u + v * v;
  CHECK(jac.intrinsics(0, 3) == doctest::Approx(400.0 * u * r2).epsilon(1e-12));
  CHECK(jac.intrinsics(1, 3) == doctest::Approx(400.0 * v * r2).epsilon(1e-12));
}

TEST_CASE("ba_solve: noiseless model is already at the optimum") {
  SparseModel model = noisy_perturbed_scene(7, 0.0, 0.0, 0.0);
  const BAOptions opts;
  SparseModel before = model;
  const BAReport report = ba_solve(model, opts);
  CHECK(report.iterations <= 1);
  CHECK(report.final_cost <= report.initial_cost + 1e-12);
  for (const auto& [id, image] : model.images) {
    const ImageRecord& prev = before.images.at(id);
    CHECK((image.translation - prev.translation).norm() < 1e-10);
    CHECK((image.rotation.coeffs() - prev.rotation.coeffs()).norm() < 1e-10);
  }
}

TEST_CASE("ba_solve: recovery from noisy perturbed poses over 20 seeds") {
  int reconstructions = 0;
  double reproj_sum = 0.0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    SparseModel gt;
    SparseModel model =
        noisy_perturbed_scene(seed, 0.5, 1.0, 0.01, &gt, 12, 250);
    const double initial_rot = mean_rotation_error(model, gt);
    const BAOptions opts;
    const BAReport report = ba_solve(model, opts);
    const double final_rot = mean_rotation_error(model, gt);
    CHECK(final_rot <= initial_rot / 10.0);
    CHECK(report.final_cost <= report.initial_cost);
    reproj_sum += report.mean_reproj_after_px;
    ++reconstructions;
  }
  const double mean_reproj = reproj_sum / reconstructions;
  CHECK(mean_reproj > 0.3);
  CHECK(mean_reproj < 0.7);
}

TEST_CASE("ba_solve: huber shields the cost from a single gross outlier") {
  SparseModel clean = noisy_perturbed_scene(99, 2.0, 0.1, 0.001, nullptr, 10, 600);
  SparseModel outlier = clean;
  // One observation pushed 200 px off.
  ImageRecord& image = outlier.images.begin()->second;
  for (Observation2D& obs : image.observations) {
    if (obs.point3d_id != kNoPoint3D) {
      obs.x += 200.0;
      break;
    }
  }

  BAOptions huber;
  huber.loss = RobustLoss::kHuber;
  SparseModel clean_huber = clean;
  SparseModel outlier_huber = outlier;
  const BAReport clean_report = ba_solve(clean_huber, huber);
  const BAReport outlier_report = ba_solve(outlier_huber, huber);
  CHECK(std::abs(outlier_report.final_cost - clean_report.final_cost) /
            clean_report.final_cost <
        0.05);

  BAOptions quadratic;
  quadratic.loss = RobustLoss::kNone;
  SparseModel clean_sq = clean;
  SparseModel outlier_sq = outlier;
  const BAReport clean_sq_report = ba_solve(clean_sq, quadratic);
  const BAReport outlier_sq_report = ba_solve(outlier_sq, quadratic);
  CHECK(outlier_sq_report.final_cost > 1.5 * clean_sq_report.final_cost);
}

TEST_CASE("ba_solve: accepted steps strictly decrease the robust cost") {
  SparseModel model = noisy_perturbed_scene(5, 0.5, 1.0, 0.01);
  const BAOptions opts;
  const BAReport report = ba_solve(model, opts);
  REQUIRE(!report.cost_trace.empty());
  double previous = report.initial_cost;
  for (const double cost : report.cost_trace) {
    CHECK(cost < previous);
    previous = cost;
  }
  CHECK(report.final_cost == doctest::Approx(report.cost_trace.back()));
}

TEST_CASE("ba_solve: gauge invariance under a global similarity") {
  SparseModel model = noisy_perturbed_scene(11, 0.5, 0.5, 0.005);

  SimilarityTransform sim;
  sim.scale = 2.3;
  sim.rotation = Eigen::Quaterniond(
      Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, -2, 0.5).normalized()));
  sim.translation = {4.0, -1.0, 2.5};

  SparseModel transformed = model;
  for (auto& [id, point] : transformed.points) point.xyz = sim.apply(point.xyz);
  const Eigen::Matrix3d s_rot_t = sim.rotation.toRotationMatrix().transpose();
  for (auto& [id, image] : transformed.images) {
    const Eigen::Matrix3d rot = image.rotation.normalized().toRotationMatrix();
    const Eigen::Matrix3d new_rot = rot * s_rot_t;
    image.translation =
        sim.scale * image.translation - new_rot * sim.translation;
    Eigen::Quaterniond q(new_rot);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    image.rotation = q;
  }

  BAOptions opts;
  // Converge tightly so both runs land on the same optimum, not merely on
  // nearby iterates of it.
  opts.rel_cost_tol = 1e-12;
  opts.max_iterations = 200;
  SparseModel a = model, b = transformed;
  const BAReport report_a = ba_solve(a, opts);
  const BAReport report_b = ba_solve(b, opts);
  CHECK(std::abs(report_a.mean_reproj_after_px - report_b.mean_reproj_after_px) <
        1e-8);
  CHECK(report_a.iterations == report_b.iterations);
}

TEST_CASE("ba_schur_step: equals the dense full-system step") {
  for (const uint64_t seed : {3, 4}) {
    const SparseModel model = noisy_perturbed_scene(seed, 0.5, 0.5, 0.01, nullptr,
                                                    6, 40);
    const BAOptions opts;
    const BALayout layout = ba_layout(model, opts);
    for (const double lambda : {1e-4, 1e-1}) {
      const BAStep schur = ba_schur_step(model, opts, layout, lambda);
      REQUIRE(schur.solvable);
      const BAStep dense = testing::dense_lm_step(model, opts, layout, lambda);
      CHECK((schur.camera - dense.camera).lpNorm<Eigen::Infinity>() < 1e-8);
      CHECK((schur.points - dense.points).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }
}

TEST_CASE("ba_schur_step: identical across thread counts") {
  const SparseModel model = noisy_perturbed_scene(21, 0.5, 1.0, 0.01, nullptr,
                                                  12, 200);
  const BAOptions opts;
  const BALayout layout = ba_layout(model, opts);
  BAStep serial, parallel;
  {
    ScopedThreadLimit limit(1);
    serial = ba_schur_step(model, opts, layout, 1e-4);
  }
  {
    ScopedThreadLimit limit(4);
    parallel = ba_schur_step(model, opts, layout, 1e-4);
  }
  REQUIRE(serial.solvable);
  REQUIRE(parallel.solvable);
  CHECK((serial.camera - parallel.camera).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((serial.points - parallel.points).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("ba_layout: rejects an all-frozen configuration") {
  const SparseModel model = noisy_perturbed_scene(2, 0.0, 0.0, 0.0);
  BAOptions opts;
  opts.refine_poses = false;
  opts.refine_points = false;
  opts.refine_focal = false;
  opts.refine_principal_point = false;
  opts.refine_distortion = false;
  CHECK_THROWS_AS((void)ba_layout(model, opts), Error);
}

TEST_CASE("ba_solve: fisheye intrinsics stay frozen") {
  SynthConfig cfg;
  cfg.n_cameras = 8;
  cfg.n_points = 60;
  cfg.camera_model = CameraModelKind::kOpenCVFisheye;
  cfg.pixel_noise_sigma = 0.2;
  cfg.distortion_params = {0.01, -0.002, 0.0, 0.0};
  cfg.seed = 61;
  const SynthScene scene = generate(cfg);
  SparseModel model = scene.gt_model;
  perturb_poses(model, 0.3, 0.003, 987);
  const std::vector<double> params_before = model.cameras.at(1).params;
  const BAOptions opts;
  const BAReport report = ba_solve(model, opts);
  CHECK(report.final_cost <= report.initial_cost);
  CHECK(model.cameras.at(1).params == params_before);
}
