#pragma once

#include <filesystem>
#include <vector>

namespace posebench {

// Row-major image samples in [0, 1]; 1 or 3 channels. 8-bit sources map
// by /255, 16-bit by /65535.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> samples;

  double& at(int y, int x, int c) {
    return samples[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return samples[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t sample_count() const { return samples.size(); }
};

// Dispatches on file magic: PNG (8/16-bit gray/RGB, alpha stripped) or
// binary PPM (P6, maxval 255 or 65535).
ImageBuffer read_image(const std::filesystem::path& path);

ImageBuffer read_png(const std::filesystem::path& path);
ImageBuffer read_ppm(const std::filesystem::path& path);

// 8-bit writers, used by tests and the synthetic tooling.
void write_png(const ImageBuffer& image, const std::filesystem::path& path);
void write_ppm(const ImageBuffer& image, const std::filesystem::path& path);

}  // namespace posebench
