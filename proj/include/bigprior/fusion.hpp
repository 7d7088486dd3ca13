#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior {

/// Operands of a fusion: the observation, its lift into output space, the
/// fusion map and the prior projection.
struct FusionInput {
  Image observation;
  PhiMap phi;
  Image prior;
  std::function<Image(const Image&)> g_inv;
};

/// Pixel-wise (1 - phi) * fidelity + phi * prior.
inline Image fuse(const Image& fidelity, const PhiMap& phi, const Image& prior) {
  require_same_shape(fidelity.shape(), prior.shape(), "fuse(g_inv(y), prior)");
  require_same_shape(phi.shape(), fidelity.shape(), "fuse(phi, g_inv(y))");
  Grid out(fidelity.shape());
  auto a = fidelity.data();
  auto b = prior.data();
  auto f = phi.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double w = f[i];
    const double v = (1.0 - w) * a[i] + w * b[i];
    out.data()[i] = std::clamp(static_cast<float>(v), std::min(a[i], b[i]), std::max(a[i], b[i]));
  }
  return Image(std::move(out), fidelity.value_range(), fidelity.color_space());
}

inline Image fuse(const FusionInput& in) {
  if (!in.g_inv) throw DomainError("fuse: missing g_inv");
  return fuse(in.g_inv(in.observation), in.phi, in.prior);
}

/// Colorization fusion in Lab: L comes from the observation verbatim and
/// (a, b) are fused between the zero-chroma lift and the prior's chroma.
/// `lightness` is the 1-channel L observation, `prior_lab` a 3-channel Lab
/// image and `phi` has 2 channels.
inline Image fuse_colorization(const Image& lightness, const PhiMap& phi, const Image& prior_lab) {
  if (lightness.channels() != 1) throw ShapeError("fuse_colorization: observation must have 1 channel");
  if (prior_lab.channels() != 3 || prior_lab.color_space() != ColorSpace::lab) {
    throw ShapeError("fuse_colorization: prior must be a 3-channel Lab image");
  }
  const Shape3 ab{2, lightness.height(), lightness.width()};
  if (phi.shape() != ab) throw ShapeError("fuse_colorization: phi must be " + to_string(ab));
  if (prior_lab.height() != ab.height || prior_lab.width() != ab.width) {
    throw ShapeError("fuse_colorization: prior and observation sizes differ");
  }
  Grid out({3, ab.height, ab.width});
  std::copy(lightness.data().begin(), lightness.data().end(), out.channel(0).begin());
  for (std::size_t c = 0; c < 2; ++c) {
    auto src = prior_lab.grid().channel(c + 1);
    auto f = phi.grid().channel(c);
    auto dst = out.channel(c + 1);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double v = static_cast<double>(f[i]) * src[i];
      dst[i] = std::clamp(static_cast<float>(v), std::min(0.0f, src[i]), std::max(0.0f, src[i]));
    }
  }
  return Image(std::move(out), ValueRange::lab, ColorSpace::lab);
}

/// Summary statistics of a fusion map.
struct HallucinationReport {
  static constexpr std::size_t kBins = 64;
  double global_mean = 0.0;
  std::vector<double> channel_means;
  std::array<std::size_t, kBins> histogram{};
  double fraction_above_half = 0.0;
  std::size_t pixel_count = 0;
};

inline HallucinationReport hallucination_report(const PhiMap& phi) {
  HallucinationReport r;
  r.pixel_count = phi.data().size();
  std::size_t above = 0;
  double total = 0.0;
  for (std::size_t c = 0; c < phi.shape().channels; ++c) {
    double s = 0.0;
    for (float v : phi.grid().channel(c)) {
      s += v;
      const auto bin = std::min(static_cast<std::size_t>(v * HallucinationReport::kBins), HallucinationReport::kBins - 1);
      ++r.histogram[bin];
      if (v > 0.5f) ++above;
    }
    total += s;
    const auto plane = phi.shape().plane();
    r.channel_means.push_back(plane == 0 ? 0.0 : s / static_cast<double>(plane));
  }
  if (r.pixel_count > 0) {
    r.global_mean = total / static_cast<double>(r.pixel_count);
    r.fraction_above_half = static_cast<double>(above) / static_cast<double>(r.pixel_count);
  }
  return r;
}

/// Key-value text, one `key: value` per line.
inline std::string to_text(const HallucinationReport& r) {
  char buf[64];
  std::string s;
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  s += "mean_phi: " + num(r.global_mean) + "\n";
  s += "channel_means:";
  for (double m : r.channel_means) s += " " + num(m);
  s += "\nfraction_phi_above_0.5: " + num(r.fraction_above_half) + "\n";
  s += "pixel_count: " + std::to_string(r.pixel_count) + "\n";
  s += "histogram_64:";
  for (auto h : r.histogram) s += " " + std::to_string(h);
  s += "\n";
  return s;
}

}  // namespace bigprior
