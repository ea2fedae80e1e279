#include "posebench/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "posebench/error.hpp"
#include "posebench/geometry.hpp"
#include "posebench/rng.hpp"

namespace posebench {

namespace {

// Distinct sub-seed streams so adding draws in one phase never shifts
// another phase's sequence.
enum SeedStream : uint64_t {
  kStreamPoints = 1,
  kStreamCodes = 2,
  kStreamPixelNoise = 3,
  kStreamDescriptorNoise = 4,
  kStreamOutliers = 5,
};

Eigen::Vector3d random_unit_vector(SplitMix64& rng) {
  while (true) {
    const Eigen::Vector3d v(rng.gaussian(), rng.gaussian(), rng.gaussian());
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

// World-to-camera pose looking from `eye` toward `target`, up = +y unless
// nearly parallel to the view direction.
Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d forward = (target - eye).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitY();
  if (std::abs(forward.dot(up)) > 0.99) up = Eigen::Vector3d::UnitX();
  const Eigen::Vector3d right = forward.cross(up).normalized();
  const Eigen::Vector3d down = forward.cross(right).normalized();
  Eigen::Matrix3d rot;  // rows: camera x, y, z axes in world coordinates
  rot.row(0) = right;
  rot.row(1) = down;
  rot.row(2) = forward;
  return Pose(Eigen::Quaterniond(rot), -(rot * eye));
}

std::vector<Eigen::Vector3d> camera_positions(const SynthConfig& cfg) {
  std::vector<Eigen::Vector3d> positions;
  positions.reserve(cfg.n_cameras);
  const double d = cfg.camera_distance;
  switch (cfg.layout) {
    case SceneLayout::kRing:
      for (int i = 0; i < cfg.n_cameras; ++i) {
        const double angle = 2.0 * M_PI * i / cfg.n_cameras;
        positions.emplace_back(d * std::cos(angle), d * std::sin(angle),
                               0.15 * d * std::sin(3.0 * angle));
      }
      break;
    case SceneLayout::kLine:
      for (int i = 0; i < cfg.n_cameras; ++i) {
        const double t =
            cfg.n_cameras == 1 ? 0.0 : -1.0 + 2.0 * i / (cfg.n_cameras - 1);
        positions.emplace_back(d * t, -d, 0.1 * d * t);
      }
      break;
    case SceneLayout::kGrid: {
      const int side = static_cast<int>(std::ceil(std::sqrt(cfg.n_cameras)));
      for (int i = 0; i < cfg.n_cameras; ++i) {
        const int gx = i % side;
        const int gy = i / side;
        const double sx = side == 1 ? 0.0 : -1.0 + 2.0 * gx / (side - 1);
        const double sy = side == 1 ? 0.0 : -1.0 + 2.0 * gy / (side - 1);
        positions.emplace_back(d * sx, d * sy, -d);
      }
      break;
    }
  }
  return positions;
}

CameraRecord make_camera(const SynthConfig& cfg) {
  CameraRecord camera;
  camera.camera_id = 1;
  camera.model = cfg.camera_model;
  camera.width = cfg.image_size;
  camera.height = cfg.image_size;
  const double c = static_cast<double>(cfg.image_size) / 2.0;
  switch (cfg.camera_model) {
    case CameraModelKind::kSimplePinhole:
    case CameraModelKind::kSimpleRadial:
    case CameraModelKind::kRadial:
      camera.params = {cfg.focal_px, c, c};
      break;
    default:
      camera.params = {cfg.focal_px, cfg.focal_px, c, c};
      break;
  }
  const int total = camera_model_num_params(cfg.camera_model);
  for (size_t i = 0; i < cfg.distortion_params.size() &&
                     static_cast<int>(camera.params.size()) < total;
       ++i) {
    camera.params.push_back(cfg.distortion_params[i]);
  }
  while (static_cast<int>(camera.params.size()) < total) {
    camera.params.push_back(0.0);
  }
  return camera;
}

}  // namespace

SynthScene generate(const SynthConfig& cfg) {
  if (cfg.n_cameras < 2) throw Error("synthetic scene needs >= 2 cameras");
  if (cfg.n_points < 8) throw Error("synthetic scene needs >= 8 points");
  if (cfg.outlier_fraction < 0.0 || cfg.outlier_fraction >= 1.0) {
    throw Error("outlier_fraction must be in [0, 1)");
  }

  SplitMix64 root(cfg.seed);
  SynthScene scene;

  const CameraRecord camera_record = make_camera(cfg);
  const CameraModel camera = CameraModel::from_record(camera_record);
  scene.gt_model.cameras.emplace(camera_record.camera_id, camera_record);

  // Points uniform in a ball (rejection sampling), centroid ~ origin.
  SplitMix64 point_rng = root.fork(kStreamPoints);
  std::vector<Eigen::Vector3d> points;
  points.reserve(cfg.n_points);
  while (static_cast<int>(points.size()) < cfg.n_points) {
    const Eigen::Vector3d p(point_rng.uniform(-1.0, 1.0),
                            point_rng.uniform(-1.0, 1.0),
                            point_rng.uniform(-1.0, 1.0));
    if (p.norm() <= 1.0) points.push_back(cfg.scene_radius * p);
  }

  const std::vector<Eigen::Vector3d> positions = camera_positions(cfg);
  std::vector<Pose> poses;
  poses.reserve(positions.size());
  for (const Eigen::Vector3d& eye : positions) {
    poses.push_back(look_at(eye, Eigen::Vector3d::Zero()));
  }

  for (int i = 0; i < cfg.n_cameras; ++i) {
    ImageRecord image;
    image.image_id = i + 1;
    image.rotation = poses[i].rotation;
    image.translation = poses[i].translation;
    image.camera_id = camera_record.camera_id;
    char name[32];
    std::snprintf(name, sizeof(name), "view_%04d", i + 1);
    image.name = name;
    scene.gt_model.images.emplace(image.image_id, image);
  }

  // Track codes: one near-orthogonal unit descriptor per 3D point.
  SplitMix64 code_rng = root.fork(kStreamCodes);
  Eigen::MatrixXf codes(cfg.n_points, cfg.descriptor_dim);
  for (int p = 0; p < cfg.n_points; ++p) {
    Eigen::VectorXd code(cfg.descriptor_dim);
    for (int d = 0; d < cfg.descriptor_dim; ++d) code[d] = code_rng.gaussian();
    code.normalize();
    codes.row(p) = code.cast<float>();
  }

  // Observations: exact projections + pixel noise, inside-image test on
  // the noiseless projection.
  SplitMix64 pixel_rng = root.fork(kStreamPixelNoise);
  SplitMix64 desc_rng = root.fork(kStreamDescriptorNoise);
  // track_obs[point][camera index] = obs index, -1 if unseen.
  std::vector<std::vector<int>> track_obs(
      cfg.n_points, std::vector<int>(cfg.n_cameras, -1));

  for (int i = 0; i < cfg.n_cameras; ++i) {
    ImageRecord& image = scene.gt_model.images.at(i + 1);
    FeatureSet features;
    features.image_name = image.name;
    std::vector<Eigen::VectorXf> descriptor_rows;
    for (int p = 0; p < cfg.n_points; ++p) {
      const Projection proj = project(camera, poses[i], points[p]);
      if (proj.behind) continue;
      if (proj.pixel.x() < 0.0 || proj.pixel.y() < 0.0 ||
          proj.pixel.x() > static_cast<double>(camera.width) ||
          proj.pixel.y() > static_cast<double>(camera.height)) {
        continue;
      }
      Eigen::Vector2d pixel = proj.pixel;
      if (cfg.pixel_noise_sigma > 0.0) {
        pixel.x() += cfg.pixel_noise_sigma * pixel_rng.gaussian();
        pixel.y() += cfg.pixel_noise_sigma * pixel_rng.gaussian();
      }
      const int obs_index = static_cast<int>(image.observations.size());
      image.observations.push_back({pixel.x(), pixel.y(), kNoPoint3D});
      features.keypoints.push_back(pixel);
      Eigen::VectorXf descriptor = codes.row(p).transpose();
      for (int d = 0; d < cfg.descriptor_dim; ++d) {
        descriptor[d] +=
            static_cast<float>(cfg.descriptor_noise * desc_rng.gaussian());
      }
      descriptor.normalize();
      descriptor_rows.push_back(descriptor);
      track_obs[p][i] = obs_index;
    }
    features.descriptors.resize(descriptor_rows.size(), cfg.descriptor_dim);
    for (size_t r = 0; r < descriptor_rows.size(); ++r) {
      features.descriptors.row(r) = descriptor_rows[r].transpose();
    }
    scene.features.emplace(image.name, std::move(features));
  }

  // 3D point records with links and exact tracks.
  for (int p = 0; p < cfg.n_points; ++p) {
    Point3DRecord point;
    point.point3d_id = p + 1;
    point.xyz = points[p];
    point.rgb = {static_cast<uint8_t>(40 + (p * 97) % 216),
                 static_cast<uint8_t>(40 + (p * 57) % 216),
                 static_cast<uint8_t>(40 + (p * 31) % 216)};
    for (int i = 0; i < cfg.n_cameras; ++i) {
      if (track_obs[p][i] < 0) continue;
      point.track.push_back({i + 1, static_cast<uint32_t>(track_obs[p][i])});
    }
    if (point.track.size() < 2) {
      // Unseen by enough views; drop the orphan observations.
      for (const TrackElement& el : point.track) {
        auto& observations = scene.gt_model.images.at(el.image_id).observations;
        observations[el.obs_index].point3d_id = kNoPoint3D;
      }
      continue;
    }
    for (const TrackElement& el : point.track) {
      scene.gt_model.images.at(el.image_id).observations[el.obs_index].point3d_id =
          point.point3d_id;
    }
    scene.gt_model.points.emplace(point.point3d_id, std::move(point));
  }
  // Mean reprojection including the injected pixel noise.
  for (auto& [id, point] : scene.gt_model.points) {
    double sum = 0.0;
    for (const TrackElement& el : point.track) {
      const ImageRecord& image = scene.gt_model.images.at(el.image_id);
      const Observation2D& obs = image.observations[el.obs_index];
      sum += reprojection_error_px(camera, Pose::from_image(image), point.xyz,
                                   {obs.x, obs.y});
    }
    point.error = sum / static_cast<double>(point.track.size());
  }

  // True match graph: every co-observation pair, plus injected outliers.
  SplitMix64 outlier_rng = root.fork(kStreamOutliers);
  for (int a = 0; a < cfg.n_cameras; ++a) {
    for (int b = a + 1; b < cfg.n_cameras; ++b) {
      std::vector<Match> matches;
      for (int p = 0; p < cfg.n_points; ++p) {
        const int oa = track_obs[p][a];
        const int ob = track_obs[p][b];
        if (oa < 0 || ob < 0) continue;
        if (scene.gt_model.points.find(p + 1) == scene.gt_model.points.end())
          continue;
        Match match;
        match.idx_a = static_cast<uint32_t>(oa);
        match.idx_b = static_cast<uint32_t>(ob);
        const auto& fa = scene.features.at(scene.gt_model.images.at(a + 1).name);
        const auto& fb = scene.features.at(scene.gt_model.images.at(b + 1).name);
        match.distance =
            (fa.descriptors.row(oa) - fb.descriptors.row(ob)).norm();
        matches.push_back(match);
      }
      if (matches.empty()) continue;

      std::vector<uint8_t> flags(matches.size(), 0);
      if (cfg.outlier_fraction > 0.0 && matches.size() >= 2) {
        // Corrupt by crossing pairs of true matches; each swap turns two
        // correct correspondences into two wrong ones while every keypoint
        // still appears at most once per side.
        const int num_outliers = static_cast<int>(
            std::floor(cfg.outlier_fraction * static_cast<double>(matches.size())));
        const auto& fa = scene.features.at(scene.gt_model.images.at(a + 1).name);
        const auto& fb = scene.features.at(scene.gt_model.images.at(b + 1).name);
        int produced = 0;
        for (int attempt = 0; produced < num_outliers && attempt < 4 * num_outliers;
             ++attempt) {
          const size_t i = outlier_rng.uniform_index(matches.size());
          const size_t j = outlier_rng.uniform_index(matches.size());
          if (i == j || flags[i] || flags[j]) continue;
          std::swap(matches[i].idx_b, matches[j].idx_b);
          for (const size_t s : {i, j}) {
            matches[s].distance = (fa.descriptors.row(matches[s].idx_a) -
                                   fb.descriptors.row(matches[s].idx_b))
                                      .norm();
            flags[s] = 1;
          }
          produced += 2;
        }
      }

      // Keep matches sorted by idx_a with flags in lockstep.
      std::vector<size_t> order(matches.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        return matches[x].idx_a < matches[y].idx_a;
      });
      std::vector<Match> sorted_matches;
      std::vector<uint8_t> sorted_flags;
      for (const size_t i : order) {
        sorted_matches.push_back(matches[i]);
        sorted_flags.push_back(flags[i]);
      }
      scene.true_matches.pairs[{a + 1, b + 1}] = std::move(sorted_matches);
      scene.outlier_flags[{a + 1, b + 1}] = std::move(sorted_flags);
    }
  }

  validate_model(scene.gt_model);
  return scene;
}

void perturb_poses(SparseModel& model, double rot_noise_deg,
                   double pos_noise_frac, uint64_t seed) {
  if (rot_noise_deg <= 0.0 && pos_noise_frac <= 0.0) return;
  SplitMix64 rng(seed ^ 0xA02BDBF7BB3C0A7ULL);
  const double diameter = scene_diameter(model);
  const double pos_sigma = pos_noise_frac * diameter;
  for (auto& [id, image] : model.images) {
    const Pose pose = Pose::from_image(image);
    Eigen::Vector3d center = pose.center();
    Eigen::Quaterniond rotation = pose.rotation;

    if (rot_noise_deg > 0.0) {
      const Eigen::Vector3d axis = random_unit_vector(rng);
      const double angle_rad = rot_noise_deg * M_PI / 180.0 * rng.gaussian();
      const Eigen::Quaterniond delta(Eigen::AngleAxisd(angle_rad, axis));
      rotation = (delta * rotation).normalized();
    }
    if (pos_sigma > 0.0) {
      center += pos_sigma * Eigen::Vector3d(rng.gaussian(), rng.gaussian(),
                                            rng.gaussian());
    }
    if (rotation.w() < 0.0) rotation.coeffs() = -rotation.coeffs();
    image.rotation = rotation;
    image.translation = -(rotation * center);
  }
}

}  // namespace posebench
