#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "posebench/image_io.hpp"

namespace posebench {

// 10*log10(1 / MSE) for data range 1.0; identical images return +inf
// (serialized as "inf"). Throws on dimension mismatch.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// data range 1.0, channel-averaged over the valid (fully covered) region.
// Separable-filter implementation, OpenMP-parallel over rows. Requires
// min(w, h) >= 11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

// Direct per-window evaluation without the separable-filter optimization;
// the serial reference the fast path is validated against.
double ssim_reference(const ImageBuffer& a, const ImageBuffer& b);

struct SceneMetricSet {
  std::string scene;
  std::vector<std::string> expected_test_views;
  std::map<std::string, double> psnr_values;
  std::map<std::string, double> ssim_values;
  std::map<std::string, double> lpips_values;  // ingested, never computed
  bool render_failed = false;
};

struct SceneAggregate {
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  // Unset when no LPIPS values were ingested for the scene ("n/a").
  std::optional<double> lpips_mean;
};

// Missing views contribute the dummy values (0 for PSNR and SSIM, 1 for
// LPIPS); a failed render penalizes the whole scene with (0, 0, 1).
// Infinite PSNR contributes `inf_psnr_cap_db` so means stay finite.
SceneAggregate aggregate_scene(const SceneMetricSet& set,
                               double inf_psnr_cap_db = 100.0);

struct DatasetAggregate {
  double psnr_mean = 0.0;
  double ssim_mean = 0.0;
  std::optional<double> lpips_mean;
  // Set when LPIPS was unavailable for at least one scene and therefore
  // skipped at the dataset level.
  bool lpips_skipped = false;
};

// Unweighted mean of scene-level means. Throws on an empty scene list.
DatasetAggregate aggregate_dataset(const std::vector<SceneMetricSet>& scenes,
                                   double inf_psnr_cap_db = 100.0);

// Every-8th test split by sorted name, the fallback when no explicit
// split file is given.
std::vector<std::string> default_test_split(std::vector<std::string> names);

}  // namespace posebench
