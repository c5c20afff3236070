#include "ocloc/image.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace ocloc {

uint8_t quantize8(float v) {
  if (!(v > 0.0f)) {
    return 0;
  }
  if (v >= 1.0f) {
    return 255;
  }
  return static_cast<uint8_t>(std::nearbyint(v * 255.0f));
}

void write_png(const std::string& path, const TensorF& pixels) {
  if (pixels.shape.size() != 3 || (pixels.shape[2] != 1 && pixels.shape[2] != 3)) {
    throw std::invalid_argument("write_png: expected [H, W, 1|3], got " + pixels.shape_str());
  }
  const int64_t h = pixels.shape[0];
  const int64_t w = pixels.shape[1];
  const int64_t c = pixels.shape[2];
  if (h < 1 || w < 1) {
    throw std::invalid_argument("write_png: empty image");
  }

  std::vector<uint8_t> bytes(static_cast<size_t>(h * w * c));
  for (int64_t i = 0; i < h * w * c; ++i) {
    bytes[static_cast<size_t>(i)] = quantize8(pixels[i]);
  }

  std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                                     &std::fclose);
  if (!fp) {
    throw std::runtime_error("cannot open for writing: " + path);
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    throw std::runtime_error("png writer allocation failed");
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png info allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t y = 0; y < h; ++y) {
    png_write_row(png, bytes.data() + static_cast<size_t>(y * w * c));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ocloc
