#pragma once

#include <array>
#include <cmath>

#include "bigprior/image.hpp"

namespace bigprior {

/// sRGB (IEC 61966-2-1) to CIELAB under the D65 reference white.
namespace color {

inline constexpr double kWhiteX = 0.95047;
inline constexpr double kWhiteY = 1.0;
inline constexpr double kWhiteZ = 1.08883;
inline constexpr double kDelta = 6.0 / 29.0;

// Both branches are extended to the whole real line so that generator
// outputs slightly outside [0,1] still have a defined luminance.
inline double srgb_to_linear(double c) {
  if (c <= 0.04045) return c / 12.92;
  return std::pow((c + 0.055) / 1.055, 2.4);
}

inline double srgb_to_linear_derivative(double c) {
  if (c <= 0.04045) return 1.0 / 12.92;
  return 2.4 / 1.055 * std::pow((c + 0.055) / 1.055, 1.4);
}

inline double linear_to_srgb(double c) {
  if (c <= 0.0031308) return 12.92 * c;
  return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline double lab_f(double t) {
  if (t > kDelta * kDelta * kDelta) return std::cbrt(t);
  return t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

inline double lab_f_derivative(double t) {
  if (t > kDelta * kDelta * kDelta) {
    const double r = std::cbrt(t);
    return 1.0 / (3.0 * r * r);
  }
  return 1.0 / (3.0 * kDelta * kDelta);
}

inline double lab_f_inverse(double f) {
  if (f > kDelta) return f * f * f;
  return 3.0 * kDelta * kDelta * (f - 4.0 / 29.0);
}

// Rows of the linear-sRGB to XYZ matrix.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToXyz{{
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
}};

inline constexpr std::array<std::array<double, 3>, 3> kXyzToRgb{{
    {3.2404542, -1.5371385, -0.4985314},
    {-0.9692660, 1.8760108, 0.0415560},
    {0.0556434, -0.2040259, 1.0572252},
}};

inline std::array<double, 3> rgb_to_lab(std::array<double, 3> rgb) {
  const double r = srgb_to_linear(rgb[0]);
  const double g = srgb_to_linear(rgb[1]);
  const double b = srgb_to_linear(rgb[2]);
  const double x = kRgbToXyz[0][0] * r + kRgbToXyz[0][1] * g + kRgbToXyz[0][2] * b;
  const double y = kRgbToXyz[1][0] * r + kRgbToXyz[1][1] * g + kRgbToXyz[1][2] * b;
  const double z = kRgbToXyz[2][0] * r + kRgbToXyz[2][1] * g + kRgbToXyz[2][2] * b;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline std::array<double, 3> lab_to_rgb(std::array<double, 3> lab) {
  const double fy = (lab[0] + 16.0) / 116.0;
  const double fx = fy + lab[1] / 500.0;
  const double fz = fy - lab[2] / 200.0;
  const double x = kWhiteX * lab_f_inverse(fx);
  const double y = kWhiteY * lab_f_inverse(fy);
  const double z = kWhiteZ * lab_f_inverse(fz);
  std::array<double, 3> rgb{};
  for (std::size_t i = 0; i < 3; ++i) {
    const double lin = kXyzToRgb[i][0] * x + kXyzToRgb[i][1] * y + kXyzToRgb[i][2] * z;
    rgb[i] = linear_to_srgb(lin);
  }
  return rgb;
}

/// Lab lightness of a unit-range sRGB triple.
inline double luminance(double r, double g, double b) {
  const double y = kRgbToXyz[1][0] * srgb_to_linear(r) + kRgbToXyz[1][1] * srgb_to_linear(g) +
                   kRgbToXyz[1][2] * srgb_to_linear(b);
  return 116.0 * lab_f(y / kWhiteY) - 16.0;
}

/// Gradient of luminance() with respect to (r, g, b).
inline std::array<double, 3> luminance_gradient(double r, double g, double b) {
  const double y = kRgbToXyz[1][0] * srgb_to_linear(r) + kRgbToXyz[1][1] * srgb_to_linear(g) +
                   kRgbToXyz[1][2] * srgb_to_linear(b);
  const double dl_dy = 116.0 * lab_f_derivative(y / kWhiteY) / kWhiteY;
  return {dl_dy * kRgbToXyz[1][0] * srgb_to_linear_derivative(r),
          dl_dy * kRgbToXyz[1][1] * srgb_to_linear_derivative(g),
          dl_dy * kRgbToXyz[1][2] * srgb_to_linear_derivative(b)};
}

/// Unit-range gray level whose Lab lightness is `lightness`.
inline double gray_for_lightness(double lightness) {
  return linear_to_srgb(kWhiteY * lab_f_inverse((lightness + 16.0) / 116.0));
}

}  // namespace color

/// Converts a unit-range RGB image to CIELAB (L in [0,100], a/b in [-128,127]).
inline Image rgb_to_lab(const Image& img) {
  if (img.color_space() != ColorSpace::rgb || img.channels() != 3) {
    throw ShapeError("rgb_to_lab: expected a 3-channel RGB image");
  }
  if (img.value_range() != ValueRange::unit) {
    throw DomainError("rgb_to_lab: expected unit-[0,1] input");
  }
  img.check_range("rgb_to_lab");
  Grid out(img.shape());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      auto lab = color::rgb_to_lab({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(lab[c]);
    }
  }
  return Image(std::move(out), ValueRange::lab, ColorSpace::lab);
}

/// Converts CIELAB back to unit-range sRGB; out-of-gamut results are clipped
/// to [0,1].
inline Image lab_to_rgb(const Image& img) {
  if (img.color_space() != ColorSpace::lab || img.channels() != 3) {
    throw ShapeError("lab_to_rgb: expected a 3-channel Lab image");
  }
  img.check_range("lab_to_rgb");
  Grid out(img.shape());
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      auto rgb = color::lab_to_rgb({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)});
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(c, y, x) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
      }
    }
  }
  return Image(std::move(out), ValueRange::unit, ColorSpace::rgb);
}

}  // namespace bigprior
