#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bigprior/error.hpp"

namespace bigprior {

/// Channel-major extent of a dense grid.
struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const { return channels * height * width; }
  constexpr std::size_t plane() const { return height * width; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
         std::to_string(s.width);
}

inline void require_same_shape(const Shape3& a, const Shape3& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
  }
}

/// Untagged real grid of shape (channels, height, width), row-major per channel.
class Grid {
 public:
  Grid() = default;
  explicit Grid(Shape3 shape, float fill = 0.0f) : shape_(shape), data_(shape.size(), fill) {}
  Grid(Shape3 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("Grid: payload size " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  std::span<float> channel(std::size_t c) {
    return std::span<float>(data_).subspan(c * shape_.plane(), shape_.plane());
  }
  std::span<const float> channel(std::size_t c) const {
    return std::span<const float>(data_).subspan(c * shape_.plane(), shape_.plane());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Shape3 shape_{};
  std::vector<float> data_;
};

enum class ValueRange { raw255, unit, centered, lab };
enum class ColorSpace { rgb, lab, gray };

inline const char* to_string(ValueRange r) {
  switch (r) {
    case ValueRange::raw255: return "raw-[0,255]";
    case ValueRange::unit: return "unit-[0,1]";
    case ValueRange::centered: return "centered-[-0.5,0.5]";
    case ValueRange::lab: return "lab";
  }
  return "?";
}

inline const char* to_string(ColorSpace s) {
  switch (s) {
    case ColorSpace::rgb: return "RGB";
    case ColorSpace::lab: return "Lab";
    case ColorSpace::gray: return "Gray";
  }
  return "?";
}

/// Lower and upper bound of a value range; Lab bounds depend on the channel.
inline std::pair<float, float> range_bounds(ValueRange r, std::size_t channel = 0) {
  switch (r) {
    case ValueRange::raw255: return {0.0f, 255.0f};
    case ValueRange::unit: return {0.0f, 1.0f};
    case ValueRange::centered: return {-0.5f, 0.5f};
    case ValueRange::lab: return channel == 0 ? std::pair{0.0f, 100.0f} : std::pair{-128.0f, 127.0f};
  }
  return {0.0f, 0.0f};
}

inline float range_midpoint(ValueRange r) {
  auto [lo, hi] = range_bounds(r);
  return 0.5f * (lo + hi);
}

/// Tagged image: a Grid with one or three channels, a value-range tag and a
/// color-space tag.
///
/// Construction enforces finiteness and the channel count. Range membership
/// is checked by check_range(), which the conversions call on their inputs.
/// Observations carrying unclipped noise keep their tag while exceeding it.
class Image {
 public:
  Image() = default;
  Image(Shape3 shape, ValueRange range, ColorSpace space, float fill = 0.0f)
      : Image(Grid(shape, fill), range, space) {}
  Image(Grid grid, ValueRange range, ColorSpace space)
      : grid_(std::move(grid)), range_(range), space_(space) {
    if (grid_.channels() != 1 && grid_.channels() != 3) {
      throw ShapeError("Image: channel count must be 1 or 3, got " +
                       std::to_string(grid_.channels()));
    }
    if (!grid_.all_finite()) throw DomainError("Image: non-finite entry");
  }

  const Grid& grid() const { return grid_; }
  Grid& grid() { return grid_; }
  const Shape3& shape() const { return grid_.shape(); }
  std::size_t channels() const { return grid_.channels(); }
  std::size_t height() const { return grid_.height(); }
  std::size_t width() const { return grid_.width(); }
  std::span<float> data() { return grid_.data(); }
  std::span<const float> data() const { return grid_.data(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return grid_.at(c, y, x); }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return grid_.at(c, y, x); }

  ValueRange value_range() const { return range_; }
  ColorSpace color_space() const { return space_; }

  bool in_range(float tolerance = 0.0f) const {
    for (std::size_t c = 0; c < channels(); ++c) {
      auto [lo, hi] = range_bounds(range_, c);
      for (float v : grid_.channel(c)) {
        if (v < lo - tolerance || v > hi + tolerance) return false;
      }
    }
    return true;
  }

  void check_range(const char* what, float tolerance = 1e-4f) const {
    if (!in_range(tolerance)) {
      throw DomainError(std::string(what) + ": entries outside declared range " +
                        to_string(range_));
    }
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Grid grid_;
  ValueRange range_ = ValueRange::unit;
  ColorSpace space_ = ColorSpace::rgb;
};

/// Per-pixel, per-channel fusion weights, every entry in [0, 1].
class PhiMap {
 public:
  PhiMap() = default;
  explicit PhiMap(Grid grid) : grid_(std::move(grid)) {
    for (float v : grid_.data()) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw DomainError("PhiMap: entry " + std::to_string(v) + " outside [0,1]");
      }
    }
  }
  static PhiMap constant(Shape3 shape, float value) { return PhiMap(Grid(shape, value)); }

  const Grid& grid() const { return grid_; }
  const Shape3& shape() const { return grid_.shape(); }
  std::span<const float> data() const { return grid_.data(); }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return grid_.at(c, y, x); }

  double mean() const {
    double s = 0.0;
    for (float v : grid_.data()) s += v;
    return grid_.size() == 0 ? 0.0 : s / static_cast<double>(grid_.size());
  }

 private:
  Grid grid_;
};

/// Maps raw-[0,255] intensities to the zero-centered unit range: v/255 - 0.5.
inline Image normalize(const Image& img) {
  if (img.value_range() != ValueRange::raw255) {
    throw DomainError(std::string("normalize: expected raw-[0,255] input, got ") +
                      to_string(img.value_range()));
  }
  Grid out(img.shape());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<float>(static_cast<double>(src[i]) / 255.0 - 0.5);
  }
  return Image(std::move(out), ValueRange::centered, img.color_space());
}

/// Inverse of normalize: (v + 0.5) * 255.
inline Image denormalize(const Image& img) {
  if (img.value_range() != ValueRange::centered) {
    throw DomainError(std::string("denormalize: expected centered-[-0.5,0.5] input, got ") +
                      to_string(img.value_range()));
  }
  Grid out(img.shape());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<float>((static_cast<double>(src[i]) + 0.5) * 255.0);
  }
  return Image(std::move(out), ValueRange::raw255, img.color_space());
}

/// Rescales a raw or centered image into unit range; other tags pass through.
inline Image to_unit(const Image& img) {
  Grid out(img.shape());
  auto src = img.data();
  auto dst = out.data();
  switch (img.value_range()) {
    case ValueRange::raw255:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] / 255.0);
      break;
    case ValueRange::centered:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + 0.5f;
      break;
    case ValueRange::unit:
      return img;
    case ValueRange::lab:
      throw DomainError("to_unit: Lab images have no unit-range mapping");
  }
  return Image(std::move(out), ValueRange::unit, img.color_space());
}

/// Unit range to centered range (v - 0.5).
inline Image to_centered(const Image& img) {
  if (img.value_range() == ValueRange::centered) return img;
  if (img.value_range() == ValueRange::raw255) return normalize(img);
  if (img.value_range() != ValueRange::unit) {
    throw DomainError("to_centered: unsupported input range");
  }
  Grid out(img.shape());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] - 0.5f;
  return Image(std::move(out), ValueRange::centered, img.color_space());
}

}  // namespace bigprior
