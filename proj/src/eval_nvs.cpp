#include "posebench/eval_nvs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "posebench/error.hpp"
#include "posebench/threads.hpp"

namespace posebench {

namespace {

constexpr int kWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;  // (K2 * L)^2

void check_dims(const ImageBuffer& a, const ImageBuffer& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw Error("image dimensions/channels differ");
  }
  if (a.width <= 0 || a.height <= 0) throw Error("empty image");
}

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> w{};
  const int half = kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - half;
    w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

double ssim_term(double mu_x, double mu_y, double ex2, double ey2, double exy) {
  const double sigma_x2 = ex2 - mu_x * mu_x;
  const double sigma_y2 = ey2 - mu_y * mu_y;
  const double sigma_xy = exy - mu_x * mu_y;
  return ((2.0 * mu_x * mu_y + kC1) * (2.0 * sigma_xy + kC2)) /
         ((mu_x * mu_x + mu_y * mu_y + kC1) * (sigma_x2 + sigma_y2 + kC2));
}

// Extracts one channel as a dense plane.
std::vector<double> channel_plane(const ImageBuffer& image, int c) {
  std::vector<double> plane(static_cast<size_t>(image.width) * image.height);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      plane[static_cast<size_t>(y) * image.width + x] = image.at(y, x, c);
    }
  }
  return plane;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  check_dims(a, b);
  double sum_sq = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    const double d = a.samples[i] - b.samples[i];
    sum_sq += d * d;
  }
  const double mse = sum_sq / static_cast<double>(a.samples.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  check_dims(a, b);
  if (a.width < kWindow || a.height < kWindow) {
    throw Error("image smaller than the 11x11 SSIM window");
  }
  const auto window = gaussian_window();
  const int out_w = a.width - kWindow + 1;
  const int out_h = a.height - kWindow + 1;

  double channel_sum = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const std::vector<double> x = channel_plane(a, c);
    const std::vector<double> y = channel_plane(b, c);

    // Horizontal pass over the five required products, then the vertical
    // pass per output row. Row sums are reduced in row order so the
    // result is independent of the thread count.
    const size_t hw = static_cast<size_t>(out_w) * a.height;
    std::vector<double> hx(hw), hy(hw), hx2(hw), hy2(hw), hxy(hw);
    const int num_threads = max_threads();
#pragma omp parallel for schedule(static) num_threads(num_threads) \
    if (num_threads > 1)
    for (int row = 0; row < a.height; ++row) {
      const double* px = x.data() + static_cast<size_t>(row) * a.width;
      const double* py = y.data() + static_cast<size_t>(row) * a.width;
      for (int col = 0; col < out_w; ++col) {
        double sx = 0.0, sy = 0.0, sx2 = 0.0, sy2 = 0.0, sxy = 0.0;
        for (int k = 0; k < kWindow; ++k) {
          const double vx = px[col + k];
          const double vy = py[col + k];
          const double w = window[k];
          sx += w * vx;
          sy += w * vy;
          sx2 += w * vx * vx;
          sy2 += w * vy * vy;
          sxy += w * vx * vy;
        }
        const size_t o = static_cast<size_t>(row) * out_w + col;
        hx[o] = sx;
        hy[o] = sy;
        hx2[o] = sx2;
        hy2[o] = sy2;
        hxy[o] = sxy;
      }
    }

    std::vector<double> row_sums(out_h, 0.0);
#pragma omp parallel for schedule(static) num_threads(num_threads) \
    if (num_threads > 1)
    for (int row = 0; row < out_h; ++row) {
      double sum = 0.0;
      for (int col = 0; col < out_w; ++col) {
        double mu_x = 0.0, mu_y = 0.0, ex2 = 0.0, ey2 = 0.0, exy = 0.0;
        for (int k = 0; k < kWindow; ++k) {
          const size_t o = static_cast<size_t>(row + k) * out_w + col;
          const double w = window[k];
          mu_x += w * hx[o];
          mu_y += w * hy[o];
          ex2 += w * hx2[o];
          ey2 += w * hy2[o];
          exy += w * hxy[o];
        }
        sum += ssim_term(mu_x, mu_y, ex2, ey2, exy);
      }
      row_sums[row] = sum;
    }
    double total = 0.0;
    for (const double s : row_sums) total += s;
    channel_sum += total / (static_cast<double>(out_w) * out_h);
  }
  return channel_sum / a.channels;
}

double ssim_reference(const ImageBuffer& a, const ImageBuffer& b) {
  check_dims(a, b);
  if (a.width < kWindow || a.height < kWindow) {
    throw Error("image smaller than the 11x11 SSIM window");
  }
  const auto window = gaussian_window();
  const int out_w = a.width - kWindow + 1;
  const int out_h = a.height - kWindow + 1;

  double channel_sum = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    double total = 0.0;
    for (int row = 0; row < out_h; ++row) {
      for (int col = 0; col < out_w; ++col) {
        double mu_x = 0.0, mu_y = 0.0, ex2 = 0.0, ey2 = 0.0, exy = 0.0;
        for (int ky = 0; ky < kWindow; ++ky) {
          for (int kx = 0; kx < kWindow; ++kx) {
            const double w = window[ky] * window[kx];
            const double vx = a.at(row + ky, col + kx, c);
            const double vy = b.at(row + ky, col + kx, c);
            mu_x += w * vx;
            mu_y += w * vy;
            ex2 += w * vx * vx;
            ey2 += w * vy * vy;
            exy += w * vx * vy;
          }
        }
        total += ssim_term(mu_x, mu_y, ex2, ey2, exy);
      }
    }
    channel_sum += total / (static_cast<double>(out_w) * out_h);
  }
  return channel_sum / a.channels;
}

SceneAggregate aggregate_scene(const SceneMetricSet& set, double inf_psnr_cap_db) {
  if (set.expected_test_views.empty()) {
    throw Error("scene '" + set.scene + "' has no expected test views");
  }
  SceneAggregate out;
  if (set.render_failed) {
    out.psnr_mean = 0.0;
    out.ssim_mean = 0.0;
    out.lpips_mean = 1.0;
    return out;
  }
  const double n = static_cast<double>(set.expected_test_views.size());
  double psnr_sum = 0.0, ssim_sum = 0.0, lpips_sum = 0.0;
  for (const std::string& view : set.expected_test_views) {
    const auto pit = set.psnr_values.find(view);
    if (pit != set.psnr_values.end()) {
      psnr_sum += std::isinf(pit->second) ? inf_psnr_cap_db : pit->second;
    }
    const auto sit = set.ssim_values.find(view);
    if (sit != set.ssim_values.end()) ssim_sum += sit->second;
    const auto lit = set.lpips_values.find(view);
    lpips_sum += lit != set.lpips_values.end() ? lit->second : 1.0;
  }
  out.psnr_mean = psnr_sum / n;
  out.ssim_mean = ssim_sum / n;
  if (!set.lpips_values.empty()) out.lpips_mean = lpips_sum / n;
  return out;
}

DatasetAggregate aggregate_dataset(const std::vector<SceneMetricSet>& scenes,
                                   double inf_psnr_cap_db) {
  if (scenes.empty()) throw Error("dataset aggregation needs at least one scene");
  DatasetAggregate out;
  double lpips_sum = 0.0;
  bool lpips_everywhere = true;
  for (const SceneMetricSet& scene : scenes) {
    const SceneAggregate agg = aggregate_scene(scene, inf_psnr_cap_db);
    out.psnr_mean += agg.psnr_mean;
    out.ssim_mean += agg.ssim_mean;
    if (agg.lpips_mean) {
      lpips_sum += *agg.lpips_mean;
    } else {
      lpips_everywhere = false;
    }
  }
  const double n = static_cast<double>(scenes.size());
  out.psnr_mean /= n;
  out.ssim_mean /= n;
  if (lpips_everywhere) {
    out.lpips_mean = lpips_sum / n;
  } else {
    out.lpips_skipped = true;
  }
  return out;
}

std::vector<std::string> default_test_split(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  std::vector<std::string> split;
  for (size_t i = 0; i < names.size(); i += 8) split.push_back(names[i]);
  return split;
}

}  // namespace posebench
