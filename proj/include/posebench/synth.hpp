#pragma once

#include <map>
#include <string>
#include <vector>

#include "posebench/matching.hpp"
#include "posebench/types.hpp"

namespace posebench {

enum class SceneLayout { kRing, kLine, kGrid };

struct SynthConfig {
  int n_cameras = 20;
  int n_points = 200;
  SceneLayout layout = SceneLayout::kRing;
  double scene_radius = 2.0;  // points are uniform in a ball of this radius
  double camera_distance = 6.0;  // layout radius / extent
  CameraModelKind camera_model = CameraModelKind::kSimplePinhole;
  double focal_px = 400.0;
  uint64_t image_size = 800;  // square images
  std::vector<double> distortion_params;  // appended past f/cx/cy, default 0
  double pixel_noise_sigma = 0.0;
  double rot_noise_deg = 0.0;
  double pos_noise_frac = 0.0;  // sigma as a fraction of the scene diameter
  double outlier_fraction = 0.0;
  uint64_t seed = 0;
  int descriptor_dim = 64;
  double descriptor_noise = 0.05;
};

// Ground-truth scene plus the observation-level artifacts the pipeline
// consumes. Keypoint order equals observation order per image, so
// keypoint indices double as observation indices.
struct SynthScene {
  SparseModel gt_model;
  std::map<std::string, FeatureSet> features;
  MatchGraph true_matches;  // includes injected outliers
  // Parallel to each pair's match list: true for injected outliers.
  std::map<std::pair<image_id_t, image_id_t>, std::vector<uint8_t>> outlier_flags;
};

// Fully deterministic in cfg.seed: cameras on the layout looking at the
// scene centroid, points uniform in a ball, observations as exact
// projections plus Gaussian pixel noise, descriptors built so MNN
// recovers the true correspondence.
SynthScene generate(const SynthConfig& cfg);

// Composes each rotation with a random-axis rotation of Gaussian
// magnitude and displaces each center by a Gaussian of sigma
// pos_noise_frac * scene diameter. Deterministic in seed.
void perturb_poses(SparseModel& model, double rot_noise_deg,
                   double pos_noise_frac, uint64_t seed);

}  // namespace posebench
