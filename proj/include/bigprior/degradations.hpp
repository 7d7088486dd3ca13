#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bigprior/color.hpp"
#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior {

/// Random engine used throughout; callers own seeding.
using Rng = std::mt19937_64;

/// Binary (height, width) grid: 1 = masked (unobserved), 0 = observed.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
      : height_(height), width_(width), bits_(std::move(bits)) {
    if (bits_.size() != height_ * width_) throw ShapeError("Mask: payload size mismatch");
    bool any_observed = false;
    for (auto b : bits_) {
      if (b > 1) throw DomainError("Mask: entries must be 0 or 1");
      any_observed |= (b == 0);
    }
    if (!any_observed) throw DomainError("Mask: at least one pixel must stay observed");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool masked(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t masked_count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }

  /// Mask broadcast over `channels` as a float grid (1.0 where masked).
  Grid to_grid(std::size_t channels = 1) const {
    Grid g({channels, height_, width_});
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < bits_.size(); ++i) g.channel(c)[i] = bits_[i];
    }
    return g;
  }

  static Mask from_grid(const Grid& g) {
    std::vector<std::uint8_t> bits(g.shape().plane());
    for (std::size_t i = 0; i < bits.size(); ++i) {
      const float v = g.channel(0)[i];
      if (v != 0.0f && v != 1.0f) throw DomainError("Mask: grid entries must be 0 or 1");
      bits[i] = v != 0.0f ? 1 : 0;
    }
    return Mask(g.height(), g.width(), std::move(bits));
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Axis-aligned rectangle in pixel coordinates.
struct Patch {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  friend bool operator==(const Patch&, const Patch&) = default;
};

inline Mask mask_from_patches(std::size_t height, std::size_t width,
                              const std::vector<Patch>& patches) {
  std::vector<std::uint8_t> bits(height * width, 0);
  for (const auto& p : patches) {
    for (std::size_t y = p.row; y < p.row + p.height; ++y) {
      std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(y * width + p.col), p.width, 1);
    }
  }
  return Mask(height, width, std::move(bits));
}

/// patch x patch block of ones centered in the image (offsets rounded down).
inline Mask central_mask(std::size_t height, std::size_t width, std::size_t patch) {
  if (patch > std::min(height, width)) {
    throw DomainError("central_mask: patch " + std::to_string(patch) + " larger than image " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (patch == height && patch == width) {
    throw DomainError("central_mask: patch would mask every pixel");
  }
  if (patch == 0) return Mask(height, width, std::vector<std::uint8_t>(height * width, 0));
  return mask_from_patches(height, width, {{(height - patch) / 2, (width - patch) / 2, patch, patch}});
}

/// Parameters of the randomized-masking protocol.
struct RandomMaskConfig {
  int min_patches = 2;
  int max_patches = 4;
  double side_mean = 64.0;
  double side_stddev = 32.0;
  std::size_t min_side = 9;
};

/// Draws the patch set of one randomized mask. Patch count is uniform on
/// {2,3,4}; each patch gets a uniform corner and sides from N(64, 32)
/// truncated to [9, inf) and rounded. Patches leaving the image are
/// re-drawn in full (corner and both sides).
inline std::vector<Patch> sample_random_patches(std::size_t height, std::size_t width, Rng& rng,
                                                const RandomMaskConfig& cfg = {}) {
  if (height < cfg.min_side || width < cfg.min_side) {
    throw DomainError("sample_random_masks: image " + std::to_string(height) + "x" +
                      std::to_string(width) + " smaller than minimum patch side " +
                      std::to_string(cfg.min_side));
  }
  std::uniform_int_distribution<int> count_dist(cfg.min_patches, cfg.max_patches);
  std::uniform_int_distribution<std::size_t> row_dist(0, height - 1);
  std::uniform_int_distribution<std::size_t> col_dist(0, width - 1);
  std::normal_distribution<double> side_dist(cfg.side_mean, cfg.side_stddev);
  auto draw_side = [&] {
    double s = side_dist(rng);
    while (s < static_cast<double>(cfg.min_side)) s = side_dist(rng);
    return static_cast<std::size_t>(std::llround(s));
  };

  const int count = count_dist(rng);
  std::vector<Patch> patches;
  patches.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    for (;;) {
      Patch p;
      p.row = row_dist(rng);
      p.col = col_dist(rng);
      p.height = draw_side();
      p.width = draw_side();
      if (p.row + p.height <= height && p.col + p.width <= width) {
        patches.push_back(p);
        break;
      }
    }
  }
  return patches;
}

/// Union of a randomized patch set. A draw covering every pixel is discarded
/// and the whole set re-drawn.
inline Mask sample_random_masks(std::size_t height, std::size_t width, Rng& rng,
                                const RandomMaskConfig& cfg = {}) {
  for (;;) {
    auto patches = sample_random_patches(height, width, rng, cfg);
    std::vector<std::uint8_t> bits(height * width, 0);
    for (const auto& p : patches) {
      for (std::size_t y = p.row; y < p.row + p.height; ++y) {
        std::fill_n(bits.begin() + static_cast<std::ptrdiff_t>(y * width + p.col), p.width, 1);
      }
    }
    if (std::count(bits.begin(), bits.end(), std::uint8_t{1}) <
        static_cast<std::ptrdiff_t>(bits.size())) return Mask(height, width, std::move(bits));
  }
}

/// Sets masked pixels to the midpoint of the image's value range.
inline Image apply_mask(const Image& x, const Mask& m) {
  if (x.height() != m.height() || x.width() != m.width()) {
    throw ShapeError("apply_mask: image " + to_string(x.shape()) + " vs mask " +
                     std::to_string(m.height()) + "x" + std::to_string(m.width()));
  }
  Image out = x;
  const float fill = range_midpoint(x.value_range());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t y = 0; y < x.height(); ++y) {
      for (std::size_t col = 0; col < x.width(); ++col) {
        if (m.masked(y, col)) out.at(c, y, col) = fill;
      }
    }
  }
  return out;
}

/// y = x + n with n i.i.d. N(0, sigma) where sigma is given in 8-bit units
/// and rescaled to the image's range. No clipping.
inline Image add_awgn(const Image& x, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw DomainError("add_awgn: sigma must be nonnegative");
  if (sigma == 0.0) return x;
  double scale = 1.0;
  switch (x.value_range()) {
    case ValueRange::raw255: scale = 1.0; break;
    case ValueRange::unit:
    case ValueRange::centered: scale = 1.0 / 255.0; break;
    case ValueRange::lab: throw DomainError("add_awgn: Lab images are not supported");
  }
  std::normal_distribution<double> noise(0.0, sigma * scale);
  Grid out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = static_cast<float>(static_cast<double>(src[i]) + noise(rng));
  }
  return Image(std::move(out), x.value_range(), x.color_space());
}

/// Blind noise level, uniform on [5, 50] in 8-bit units.
inline double sample_blind_sigma(Rng& rng) {
  std::uniform_real_distribution<double> dist(5.0, 50.0);
  return dist(rng);
}

inline Image g_inverse_identity(const Image& y) { return y; }

/// Lab lightness of a unit-range RGB image as a one-channel image
/// (range tag lab, L in [0,100]).
inline Image degrade_colorization(const Image& x) {
  if (x.channels() != 3 || x.color_space() != ColorSpace::rgb) {
    throw ShapeError("degrade_colorization: expected an RGB image");
  }
  if (x.value_range() != ValueRange::unit) {
    throw DomainError("degrade_colorization: expected unit-[0,1] input");
  }
  Grid out({1, x.height(), x.width()});
  for (std::size_t y = 0; y < x.height(); ++y) {
    for (std::size_t c = 0; c < x.width(); ++c) {
      out.at(0, y, c) = static_cast<float>(
          color::luminance(x.at(0, y, c), x.at(1, y, c), x.at(2, y, c)));
    }
  }
  return Image(std::move(out), ValueRange::lab, ColorSpace::gray);
}

/// Duplicates a gray channel over R, G and B. Lightness-tagged input is first
/// mapped to the sRGB gray level of that lightness; unit or raw gray input is
/// copied as is.
inline Image g_inverse_colorization(const Image& y) {
  if (y.channels() != 1) throw ShapeError("g_inverse_colorization: expected a 1-channel image");
  Grid out({3, y.height(), y.width()});
  const bool lightness = y.value_range() == ValueRange::lab;
  auto src = y.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const float v = lightness ? static_cast<float>(std::clamp(color::gray_for_lightness(src[i]), 0.0, 1.0))
                              : src[i];
    for (std::size_t c = 0; c < 3; ++c) out.channel(c)[i] = v;
  }
  return Image(std::move(out), lightness ? ValueRange::unit : y.value_range(), ColorSpace::rgb);
}

enum class Task { colorization, inpainting, awgn };

inline const char* to_string(Task t) {
  switch (t) {
    case Task::colorization: return "colorization";
    case Task::inpainting: return "inpainting";
    case Task::awgn: return "awgn";
  }
  return "?";
}

/// A degradation f paired with its bijective companion g^-1.
///
/// Besides tagged images, f is also available in "model space": inputs are
/// centered RGB buffers (generator outputs) and observations are centered
/// buffers. There f is the identity for awgn, zeroes masked pixels for
/// inpainting, and maps to L/100 - 0.5 for colorization. forward_vjp is the
/// matching vector-Jacobian product used by generator inversion.
class DegradationSpec {
 public:
  static DegradationSpec colorization() { return DegradationSpec(Task::colorization, {}, 0.0); }
  static DegradationSpec inpainting(Mask mask) {
    return DegradationSpec(Task::inpainting, std::move(mask), 0.0);
  }
  static DegradationSpec awgn(double sigma) {
    if (!(sigma >= 0.0)) throw DomainError("DegradationSpec: sigma must be nonnegative");
    return DegradationSpec(Task::awgn, {}, sigma);
  }

  Task task() const { return task_; }
  double sigma() const { return sigma_; }
  const Mask& mask() const {
    if (!mask_) throw DomainError("DegradationSpec: task has no mask");
    return *mask_;
  }

  /// Applies f to a clean unit-range RGB image.
  Image degrade(const Image& x, Rng& rng) const {
    switch (task_) {
      case Task::colorization: return degrade_colorization(to_unit(x));
      case Task::inpainting: return apply_mask(x, *mask_);
      case Task::awgn: return add_awgn(x, sigma_, rng);
    }
    return x;
  }

  Image g_inverse(const Image& y) const {
    return task_ == Task::colorization ? g_inverse_colorization(y) : g_inverse_identity(y);
  }

  std::size_t observation_channels(std::size_t image_channels) const {
    return task_ == Task::colorization ? 1 : image_channels;
  }

  /// Model-space observation of a tagged observation image.
  Grid observation_to_model(const Image& y) const {
    if (task_ == Task::colorization) {
      if (y.value_range() != ValueRange::lab || y.channels() != 1) {
        throw DomainError("observation_to_model: colorization expects a lightness image");
      }
      Grid g(y.shape());
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = y.data()[i] / 100.0f - 0.5f;
      return g;
    }
    return to_centered(y).grid();
  }

  /// f in model space on a (3, H, W) centered RGB buffer.
  template <typename T>
  std::vector<T> forward(const Shape3& shape, std::span<const T> x) const {
    const std::size_t plane = shape.plane();
    switch (task_) {
      case Task::awgn: return {x.begin(), x.end()};
      case Task::inpainting: {
        check_mask_shape(shape);
        std::vector<T> out(x.begin(), x.end());
        for (std::size_t c = 0; c < shape.channels; ++c) {
          for (std::size_t i = 0; i < plane; ++i) {
            if (mask_->bits()[i]) out[c * plane + i] = T(0);
          }
        }
        return out;
      }
      case Task::colorization: {
        if (shape.channels != 3) throw ShapeError("forward: colorization expects RGB");
        std::vector<T> out(plane);
        for (std::size_t i = 0; i < plane; ++i) {
          const double l = color::luminance(double(x[i]) + 0.5, double(x[plane + i]) + 0.5,
                                            double(x[2 * plane + i]) + 0.5);
          out[i] = static_cast<T>(l / 100.0 - 0.5);
        }
        return out;
      }
    }
    return {x.begin(), x.end()};
  }

  /// Vector-Jacobian product of forward() at x.
  template <typename T>
  std::vector<T> forward_vjp(const Shape3& shape, std::span<const T> x,
                             std::span<const T> grad_y) const {
    switch (task_) {
      case Task::awgn: return {grad_y.begin(), grad_y.end()};
      case Task::inpainting: return forward<T>(shape, grad_y);
      case Task::colorization: {
        const std::size_t plane = shape.plane();
        std::vector<T> out(x.size());
        for (std::size_t i = 0; i < plane; ++i) {
          auto g = color::luminance_gradient(double(x[i]) + 0.5, double(x[plane + i]) + 0.5,
                                             double(x[2 * plane + i]) + 0.5);
          const double gy = double(grad_y[i]) / 100.0;
          for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = static_cast<T>(gy * g[c]);
        }
        return out;
      }
    }
    return {grad_y.begin(), grad_y.end()};
  }

  Shape3 observation_shape(const Shape3& image_shape) const {
    return {observation_channels(image_shape.channels), image_shape.height, image_shape.width};
  }

  Grid forward(const Grid& x) const {
    return Grid(observation_shape(x.shape()), forward<float>(x.shape(), x.data()));
  }

 private:
  DegradationSpec(Task task, std::optional<Mask> mask, double sigma)
      : task_(task), mask_(std::move(mask)), sigma_(sigma) {}

  void check_mask_shape(const Shape3& x) const {
    if (x.height != mask_->height() || x.width != mask_->width()) {
      throw ShapeError("DegradationSpec: mask shape does not match image");
    }
  }

  Task task_;
  std::optional<Mask> mask_;
  double sigma_ = 0.0;
};

}  // namespace bigprior
