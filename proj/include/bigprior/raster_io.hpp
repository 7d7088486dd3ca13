#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior {

namespace detail {

struct PngImage {
  png_image image{};
  PngImage() {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline void write_png(const std::filesystem::path& path, std::uint32_t width,
                      std::uint32_t height, bool color, const std::vector<std::uint8_t>& pixels) {
  PngImage png;
  png.image.width = width;
  png.image.height = height;
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (png_image_write_to_file(&png.image, path.c_str(), 0, pixels.data(), 0, nullptr) == 0) {
    throw IoError("save_image: " + path.string() + ": " + png.image.message);
  }
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace detail

/// Decodes an 8-bit RGB or grayscale PNG into a raw-[0,255] image.
inline Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("load_image: no such file " + path.string());
  detail::PngImage png;
  if (png_image_begin_read_from_file(&png.image, path.c_str()) == 0) {
    throw IoError("load_image: " + path.string() + ": " + png.image.message);
  }
  if (png.image.format & PNG_FORMAT_FLAG_ALPHA) {
    throw ShapeError("load_image: unsupported channel count (alpha) in " + path.string());
  }
  const bool color = (png.image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png.image));
  if (png_image_finish_read(&png.image, nullptr, buffer.data(), 0, nullptr) == 0) {
    throw IoError("load_image: " + path.string() + ": " + png.image.message);
  }
  const std::size_t h = png.image.height;
  const std::size_t w = png.image.width;
  Grid grid({channels, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        grid.at(c, y, x) = buffer[(y * w + x) * channels + c];
      }
    }
  }
  return Image(std::move(grid), ValueRange::raw255, color ? ColorSpace::rgb : ColorSpace::gray);
}

/// Writes an 8-bit PNG. Unit and centered images are rescaled to [0,255];
/// values are rounded and clipped. Lab images are rejected.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  if (img.color_space() == ColorSpace::lab || img.value_range() == ValueRange::lab) {
    throw DomainError("save_image: convert Lab images to RGB before saving");
  }
  const Image raw = img.value_range() == ValueRange::raw255 ? img
                    : img.value_range() == ValueRange::centered
                        ? denormalize(img)
                        : denormalize(to_centered(img));
  const std::size_t h = raw.height(), w = raw.width(), channels = raw.channels();
  std::vector<std::uint8_t> buffer(h * w * channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        buffer[(y * w + x) * channels + c] = detail::to_byte(raw.at(c, y, x));
      }
    }
  }
  detail::write_png(path, static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h),
                    channels == 3, buffer);
}

/// Channel-averaged φ rendered through a dark-to-bright colormap. For viewing
/// only; the exact values live in the float array file.
inline void save_heatmap(const std::filesystem::path& path, const PhiMap& phi) {
  // Piecewise-linear approximation of a perceptual dark-blue to yellow ramp.
  static constexpr std::array<std::array<float, 3>, 5> kStops{{
      {0.267f, 0.005f, 0.329f},
      {0.231f, 0.322f, 0.545f},
      {0.128f, 0.567f, 0.551f},
      {0.360f, 0.785f, 0.388f},
      {0.993f, 0.906f, 0.144f},
  }};
  const auto& s = phi.shape();
  std::vector<std::uint8_t> buffer(s.height * s.width * 3);
  for (std::size_t y = 0; y < s.height; ++y) {
    for (std::size_t x = 0; x < s.width; ++x) {
      float v = 0.0f;
      for (std::size_t c = 0; c < s.channels; ++c) v += phi.at(c, y, x);
      v /= static_cast<float>(std::max<std::size_t>(s.channels, 1));
      const float pos = std::clamp(v, 0.0f, 1.0f) * (kStops.size() - 1);
      const std::size_t lo = std::min<std::size_t>(static_cast<std::size_t>(pos), kStops.size() - 2);
      const float t = pos - static_cast<float>(lo);
      for (std::size_t c = 0; c < 3; ++c) {
        const float rgb = kStops[lo][c] * (1.0f - t) + kStops[lo + 1][c] * t;
        buffer[(y * s.width + x) * 3 + c] = detail::to_byte(rgb * 255.0f);
      }
    }
  }
  detail::write_png(path, static_cast<std::uint32_t>(s.width), static_cast<std::uint32_t>(s.height),
                    true, buffer);
}

/// Writes a 1-bit grayscale PNG; nonzero entries of `bits` become white.
inline void save_bitmap(const std::filesystem::path& path, std::size_t width, std::size_t height,
                        const std::vector<std::uint8_t>& bits) {
  if (bits.size() != width * height) throw ShapeError("save_bitmap: size mismatch");
  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (fp == nullptr) throw IoError("save_bitmap: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("save_bitmap: libpng initialisation failed");
  }
  const std::size_t stride = (width + 7) / 8;
  std::vector<std::uint8_t> packed(stride * height, 0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      if (bits[y * width + x] != 0) packed[y * stride + x / 8] |= static_cast<std::uint8_t>(0x80u >> (x % 8));
    }
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("save_bitmap: libpng write error for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 1,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) png_write_row(png, packed.data() + y * stride);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace bigprior
