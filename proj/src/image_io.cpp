#include "posebench/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "posebench/error.hpp"

namespace posebench {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void check_buffer(const ImageBuffer& image) {
  if (image.width <= 0 || image.height <= 0 ||
      (image.channels != 1 && image.channels != 3)) {
    throw Error("image buffer must be non-empty with 1 or 3 channels");
  }
  if (image.samples.size() != static_cast<size_t>(image.width) * image.height *
                                  image.channels) {
    throw Error("image buffer sample count does not match dimensions");
  }
}

}  // namespace

ImageBuffer read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());

  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 ||
      png_sig_cmp(header, 0, 8) != 0) {
    throw IoError("not a PNG file: " + path.string());
  }

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  std::vector<png_bytep> row_pointers;
  std::vector<png_byte> data;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed to decode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int out_depth = png_get_bit_depth(png, info);
  const int out_channels = png_get_channels(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);

  data.resize(row_bytes * height);
  row_pointers.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    row_pointers[y] = data.data() + y * row_bytes;
  }
  png_read_image(png, row_pointers.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ImageBuffer image;
  image.width = static_cast<int>(width);
  image.height = static_cast<int>(height);
  image.channels = out_channels >= 3 ? 3 : 1;
  image.samples.resize(static_cast<size_t>(width) * height * image.channels);

  const double scale = out_depth == 16 ? 1.0 / 65535.0 : 1.0 / 255.0;
  for (png_uint_32 y = 0; y < height; ++y) {
    const png_byte* row = row_pointers[y];
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const size_t idx = (x * out_channels + c);
        double value;
        if (out_depth == 16) {
          // PNG stores 16-bit samples big-endian.
          value = scale * ((row[2 * idx] << 8) | row[2 * idx + 1]);
        } else {
          value = scale * row[idx];
        }
        image.at(static_cast<int>(y), static_cast<int>(x), c) = value;
      }
    }
  }
  return image;
}

void write_png(const ImageBuffer& image, const std::filesystem::path& path) {
  check_buffer(image);
  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path.string() + " for writing");

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed to encode " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<png_byte> row(static_cast<size_t>(image.width) * image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        const double v = std::clamp(image.at(y, x, c), 0.0, 1.0);
        row[static_cast<size_t>(x) * image.channels + c] =
            static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string());

  std::string magic;
  file >> magic;
  if (magic != "P6") throw IoError("not a binary PPM (P6): " + path.string());

  // Header tokens may be separated by whitespace or comments.
  const auto next_int = [&]() -> long {
    while (true) {
      int c = file.peek();
      if (c == '#') {
        std::string comment;
        std::getline(file, comment);
        continue;
      }
      if (std::isspace(c)) {
        file.get();
        continue;
      }
      break;
    }
    long value;
    if (!(file >> value)) throw IoError("malformed PPM header: " + path.string());
    return value;
  };
  const long width = next_int();
  const long height = next_int();
  const long maxval = next_int();
  file.get();  // single whitespace after maxval
  if (width <= 0 || height <= 0 || (maxval != 255 && maxval != 65535)) {
    throw IoError("unsupported PPM header in " + path.string());
  }

  ImageBuffer image;
  image.width = static_cast<int>(width);
  image.height = static_cast<int>(height);
  image.channels = 3;
  image.samples.resize(static_cast<size_t>(width) * height * 3);

  const size_t bytes_per_sample = maxval == 65535 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<size_t>(width) * height * 3 *
                                 bytes_per_sample);
  file.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(file.gcount()) != raw.size()) {
    throw IoError("truncated PPM payload in " + path.string());
  }
  const double scale = 1.0 / static_cast<double>(maxval);
  for (size_t i = 0; i < image.samples.size(); ++i) {
    if (maxval == 65535) {
      // PPM 16-bit samples are big-endian.
      image.samples[i] = scale * ((raw[2 * i] << 8) | raw[2 * i + 1]);
    } else {
      image.samples[i] = scale * raw[i];
    }
  }
  return image;
}

void write_ppm(const ImageBuffer& image, const std::filesystem::path& path) {
  check_buffer(image);
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(
            image.at(y, x, image.channels == 3 ? c : 0), 0.0, 1.0);
        file.put(static_cast<char>(std::lround(v * 255.0)));
      }
    }
  }
}

ImageBuffer read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError("cannot open " + path.string());
  unsigned char magic[2] = {0, 0};
  probe.read(reinterpret_cast<char*>(magic), 2);
  probe.close();
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
  if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
  throw IoError("unrecognized image format (expected PNG or P6 PPM): " +
                path.string());
}

}  // namespace posebench
