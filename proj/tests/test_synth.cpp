#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "posebench/eval_poses.hpp"
#include "posebench/geometry.hpp"
#include "posebench/mapping.hpp"
#include "posebench/matching.hpp"
#include "posebench/model_io.hpp"
#include "posebench/synth.hpp"

using namespace posebench;
namespace fs = std::filesystem;

TEST_CASE("generate: deterministic byte output for a fixed seed") {
  SynthConfig cfg;
  cfg.n_cameras = 8;
  cfg.n_points = 40;
  cfg.pixel_noise_sigma = 0.7;
  cfg.outlier_fraction = 0.05;
  cfg.seed = 12345;

  const fs::path dir_a = fs::temp_directory_path() / "posebench_synth_a";
  const fs::path dir_b = fs::temp_directory_path() / "posebench_synth_b";
  for (const fs::path& dir : {dir_a, dir_b}) {
    fs::remove_all(dir);
    const SynthScene scene = generate(cfg);
    write_model(scene.gt_model, dir, ModelFormat::kBinary);
    fs::create_directories(dir / "features");
    for (const auto& [name, features] : scene.features) {
      write_features(features, dir / "features" / (name + ".feat"));
    }
  }
  for (const char* name : {"cameras.bin", "images.bin", "points3D.bin"}) {
    std::ifstream a(dir_a / name, std::ios::binary);
    std::ifstream b(dir_b / name, std::ios::binary);
    const std::vector<char> bytes_a{std::istreambuf_iterator<char>(a), {}};
    const std::vector<char> bytes_b{std::istreambuf_iterator<char>(b), {}};
    CHECK(bytes_a == bytes_b);
  }
  for (const auto& entry : fs::directory_iterator(dir_a / "features")) {
    std::ifstream a(entry.path(), std::ios::binary);
    std::ifstream b(dir_b / "features" / entry.path().filename(),
                    std::ios::binary);
    const std::vector<char> bytes_a{std::istreambuf_iterator<char>(a), {}};
    const std::vector<char> bytes_b{std::istreambuf_iterator<char>(b), {}};
    CHECK(bytes_a == bytes_b);
  }
}

TEST_CASE("generate: model passes validation and MNN recovers correspondence") {
  SynthConfig cfg;
  cfg.n_cameras = 10;
  cfg.n_points = 80;
  cfg.seed = 5;
  const SynthScene scene = generate(cfg);
  validate_model(scene.gt_model);

  // MNN over the synthetic descriptors reproduces the true match lists.
  int checked_pairs = 0;
  for (const auto& [ab, true_matches] : scene.true_matches.pairs) {
    if (checked_pairs++ > 6) break;
    const auto& fa = scene.features.at(scene.gt_model.images.at(ab.first).name);
    const auto& fb = scene.features.at(scene.gt_model.images.at(ab.second).name);
    const auto matches = match_mnn(fa, fb);
    size_t found = 0;
    for (const Match& t : true_matches) {
      for (const Match& m : matches) {
        if (m.idx_a == t.idx_a && m.idx_b == t.idx_b) {
          ++found;
          break;
        }
      }
    }
    CHECK(found == true_matches.size());
  }
}

TEST_CASE("generate: noiseless tracks triangulate to the generating points") {
  SynthConfig cfg;
  cfg.n_cameras = 12;
  cfg.n_points = 60;
  cfg.seed = 8;
  const SynthScene scene = generate(cfg);

  SparseModel model = scene.gt_model;
  model.points.clear();
  for (auto& [id, image] : model.images) {
    for (Observation2D& obs : image.observations) obs.point3d_id = kNoPoint3D;
  }
  std::vector<Track> tracks = build_tracks(scene.true_matches);
  triangulate_tracks(model, tracks, {});
  REQUIRE(model.points.size() == scene.gt_model.points.size());
  for (const auto& [id, point] : model.points) {
    double best = 1e9;
    for (const auto& [gt_id, gt_point] : scene.gt_model.points) {
      best = std::min(best, (point.xyz - gt_point.xyz).norm());
    }
    CHECK(best < 1e-8);
  }
}

TEST_CASE("generate: outlier injection is flagged and mostly removed") {
  SynthConfig cfg;
  cfg.n_cameras = 10;
  cfg.n_points = 150;
  cfg.outlier_fraction = 0.1;
  // Wide pixel spread keeps random wrong matches far from the epipolar
  // lines relative to the 8 px gate.
  cfg.focal_px = 800.0;
  cfg.image_size = 1600;
  cfg.camera_distance = 5.0;
  cfg.scene_radius = 3.0;
  cfg.seed = 77;
  const SynthScene scene = generate(cfg);
  const CameraModel cam = CameraModel::from_record(scene.gt_model.cameras.at(1));

  size_t outliers_total = 0, outliers_removed = 0;
  for (const auto& [ab, matches] : scene.true_matches.pairs) {
    const auto& flags = scene.outlier_flags.at(ab);
    REQUIRE(flags.size() == matches.size());
    const auto& fa = scene.features.at(scene.gt_model.images.at(ab.first).name);
    const auto& fb = scene.features.at(scene.gt_model.images.at(ab.second).name);
    const EpipolarResult result = verify_epipolar(
        matches, fa.keypoints, fb.keypoints, cam, cam,
        Pose::from_image(scene.gt_model.images.at(ab.first)),
        Pose::from_image(scene.gt_model.images.at(ab.second)), 8.0);
    // Which of the injected outliers survived?
    for (size_t i = 0; i < matches.size(); ++i) {
      if (!flags[i]) continue;
      ++outliers_total;
      bool survived = false;
      for (const Match& m : result.inliers) {
        if (m.idx_a == matches[i].idx_a && m.idx_b == matches[i].idx_b) {
          survived = true;
          break;
        }
      }
      if (!survived) ++outliers_removed;
    }
  }
  REQUIRE(outliers_total > 100);
  CHECK(static_cast<double>(outliers_removed) / outliers_total >= 0.95);
}

TEST_CASE("perturb_poses: zero magnitudes change nothing") {
  SynthConfig cfg;
  cfg.n_cameras = 6;
  cfg.n_points = 30;
  cfg.seed = 4;
  const SynthScene scene = generate(cfg);
  SparseModel model = scene.gt_model;
  perturb_poses(model, 0.0, 0.0, 9);
  for (const auto& [id, image] : model.images) {
    const ImageRecord& original = scene.gt_model.images.at(id);
    CHECK(image.rotation.coeffs() == original.rotation.coeffs());
    CHECK(image.translation == original.translation);
  }
}

TEST_CASE("perturb_poses: rotation magnitude follows the folded normal") {
  SynthConfig cfg;
  cfg.n_cameras = 50;
  cfg.n_points = 30;
  cfg.seed = 15;
  const SynthScene scene = generate(cfg);

  double sum = 0.0;
  int count = 0;
  // 20 perturbation draws x 50 cameras = 1000 samples.
  for (uint64_t draw = 0; draw < 20; ++draw) {
    SparseModel model = scene.gt_model;
    perturb_poses(model, 2.0, 0.0, 5000 + draw);
    for (const auto& [id, image] : model.images) {
      sum += rotation_error_deg(image.rotation,
                                scene.gt_model.images.at(id).rotation);
      ++count;
    }
  }
  const double mean = sum / count;
  // Folded normal mean = sigma * sqrt(2/pi) ~ 1.6 for sigma = 2.
  CHECK(mean > 1.4);
  CHECK(mean < 2.6);
}

TEST_CASE("perturb_poses: injected errors measured back exactly") {
  SynthConfig cfg;
  cfg.n_cameras = 10;
  cfg.n_points = 40;
  cfg.seed = 44;
  const SynthScene scene = generate(cfg);
  SparseModel perturbed = scene.gt_model;
  perturb_poses(perturbed, 1.5, 0.01, 321);

  const SimilarityTransform identity;
  const PoseErrorReport report =
      pose_errors(perturbed, scene.gt_model, identity);
  REQUIRE(report.registered.size() == scene.gt_model.images.size());
  for (const ViewError& v : report.registered) {
    // Recompute the injected magnitudes directly.
    image_id_t id = 0;
    for (const auto& [iid, image] : scene.gt_model.images) {
      if (image.name == v.name) id = iid;
    }
    const ImageRecord& gt = scene.gt_model.images.at(id);
    const ImageRecord& est = perturbed.images.at(id);
    const double rot = rotation_error_deg(est.rotation, gt.rotation);
    const double pos =
        (Pose::from_image(est).center() - Pose::from_image(gt).center()).norm();
    CHECK(v.rotation_error_deg == doctest::Approx(rot).epsilon(1e-9));
    CHECK(v.position_error == doctest::Approx(pos).epsilon(1e-9));
  }
}

TEST_CASE("generate: rejects impossible layouts") {
  SynthConfig cfg;
  cfg.n_cameras = 1;
  CHECK_THROWS(generate(cfg));
  cfg.n_cameras = 5;
  cfg.n_points = 3;
  CHECK_THROWS(generate(cfg));
}

TEST_CASE("generate: line and grid layouts produce valid scenes") {
  for (const SceneLayout layout : {SceneLayout::kLine, SceneLayout::kGrid}) {
    SynthConfig cfg;
    cfg.n_cameras = 9;
    cfg.n_points = 40;
    cfg.layout = layout;
    cfg.seed = 91;
    const SynthScene scene = generate(cfg);
    validate_model(scene.gt_model);
    CHECK(scene.gt_model.points.size() > 10);
  }
}
