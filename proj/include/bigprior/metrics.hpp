#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior::metrics {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
inline double psnr(std::span<const float> a, std::span<const float> b, double peak) {
  if (a.size() != b.size()) throw ShapeError("psnr: size mismatch");
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be positive");
  if (a.empty()) throw ShapeError("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.size())));
}

inline double psnr(const Image& a, const Image& b, double peak) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  return psnr(a.data(), b.data(), peak);
}

inline std::string format_psnr(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Peak of the declared range: 255 for raw images, 1 otherwise.
inline double peak_for(ValueRange r) {
  switch (r) {
    case ValueRange::raw255:
      return 255.0;
    case ValueRange::lab:
      return 100.0;
    default:
      return 1.0;
  }
}

inline Grid channel_average(const Grid& g) {
  Grid out({1, g.height(), g.width()});
  for (std::size_t c = 0; c < g.channels(); ++c) {
    auto src = g.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i) out.data()[i] += src[i];
  }
  for (auto& v : out.data()) v /= static_cast<float>(g.channels());
  return out;
}

/// Per-window luminance and contrast-structure terms; SSIM is their product.
struct SsimTerms {
  std::vector<double> luminance;
  std::vector<double> contrast_structure;
};

inline SsimTerms ssim_terms(const Grid& a, const Grid& b, double peak) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (a.height() < kWin || a.width() < kWin) {
    throw ShapeError("ssim: image " + to_string(a.shape()) + " smaller than the 11x11 window");
  }
  const Grid ga = a.channels() == 1 ? a : channel_average(a);
  const Grid gb = b.channels() == 1 ? b : channel_average(b);
  double w[kWin][kWin];
  double wsum = 0.0;
  for (int y = 0; y < kWin; ++y) {
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - kWin / 2, dx = x - kWin / 2;
      w[y][x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      wsum += w[y][x];
    }
  }
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  SsimTerms t;
  const std::size_t W = ga.width();
  for (std::size_t y0 = 0; y0 + kWin <= ga.height(); ++y0) {
    for (std::size_t x0 = 0; x0 + kWin <= W; ++x0) {
      double mx = 0, my = 0;
      for (int y = 0; y < kWin; ++y) {
        for (int x = 0; x < kWin; ++x) {
          const double k = w[y][x] / wsum;
          mx += k * ga.data()[(y0 + y) * W + x0 + x];
          my += k * gb.data()[(y0 + y) * W + x0 + x];
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int y = 0; y < kWin; ++y) {
        for (int x = 0; x < kWin; ++x) {
          const double k = w[y][x] / wsum;
          const double dx = ga.data()[(y0 + y) * W + x0 + x] - mx;
          const double dy = gb.data()[(y0 + y) * W + x0 + x] - my;
          vx += k * dx * dx;
          vy += k * dy * dy;
          cxy += k * dx * dy;
        }
      }
      t.luminance.push_back((2 * mx * my + c1) / (mx * mx + my * my + c1));
      t.contrast_structure.push_back((2 * cxy + c2) / (vx + vy + c2));
    }
  }
  return t;
}

/// Windowed SSIM (11x11 Gaussian, sigma 1.5) on channel-averaged images,
/// averaged over all valid windows.
inline double ssim(const Grid& a, const Grid& b, double peak) {
  const auto t = ssim_terms(a, b, peak);
  double s = 0.0;
  for (std::size_t i = 0; i < t.luminance.size(); ++i) s += t.luminance[i] * t.contrast_structure[i];
  return s / static_cast<double>(t.luminance.size());
}

inline double ssim(const Image& a, const Image& b) {
  if (a.value_range() != b.value_range()) throw DomainError("ssim: inputs have different ranges");
  return ssim(a.grid(), b.grid(), peak_for(a.value_range()));
}

/// Cumulative ab-error distribution over integer thresholds 0..150.
struct AuCCurve {
  static constexpr int kMaxThreshold = 150;
  std::vector<int> thresholds;
  std::vector<double> cumulative_pct;
  double auc = 0.0;
};

/// `pred_ab` and `gt_ab` are 2-channel grids in Lab units.
inline AuCCurve auc_colorization(const Grid& pred_ab, const Grid& gt_ab) {
  require_same_shape(pred_ab.shape(), gt_ab.shape(), "auc_colorization");
  if (pred_ab.channels() != 2) throw ShapeError("auc_colorization: expected 2-channel ab grids");
  const std::size_t n = pred_ab.shape().plane();
  if (n == 0) throw ShapeError("auc_colorization: empty grid");
  // counts[k] = pixels whose error falls in (k-1, k]; the tail collects > 150.
  std::vector<std::size_t> counts(AuCCurve::kMaxThreshold + 2, 0);
  auto pa = pred_ab.channel(0), pb = pred_ab.channel(1), ga = gt_ab.channel(0), gb = gt_ab.channel(1);
  for (std::size_t i = 0; i < n; ++i) {
    const double da = static_cast<double>(pa[i]) - ga[i], db = static_cast<double>(pb[i]) - gb[i];
    const double e = std::sqrt(da * da + db * db);
    const double k = std::ceil(e);
    counts[k > AuCCurve::kMaxThreshold ? AuCCurve::kMaxThreshold + 1 : static_cast<std::size_t>(k)]++;
  }
  AuCCurve c;
  std::size_t cum = 0;
  double sum = 0.0;
  for (int t = 0; t <= AuCCurve::kMaxThreshold; ++t) {
    cum += counts[static_cast<std::size_t>(t)];
    const double frac = static_cast<double>(cum) / static_cast<double>(n);
    c.thresholds.push_back(t);
    c.cumulative_pct.push_back(frac);
    sum += frac;
  }
  c.auc = 100.0 * sum / (AuCCurve::kMaxThreshold + 1);
  return c;
}

/// Sample Pearson correlation in double precision.
inline double pearson(std::span<const double> xs, std::span<const double> ys, const std::string& x_name = "xs",
                      const std::string& y_name = "ys") {
  if (xs.size() != ys.size()) throw ShapeError("pearson: lists differ in length");
  if (xs.size() < 2) throw DomainError("pearson: need at least 2 pairs");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0) throw DomainError("pearson: zero variance in " + x_name);
  if (syy == 0.0) throw DomainError("pearson: zero variance in " + y_name);
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct PhiRecord {
  double mean_phi = 0.0;
  double sigma_n = 0.0;
  double prior_psnr = 0.0;
};

struct PhiAnalysis {
  std::vector<PhiRecord> per_image;
  double r_phi_sigma = 0.0;
  double r_phi_priorpsnr = 0.0;
};

inline PhiAnalysis analyze_phi(std::span<const PhiRecord> records) {
  if (records.size() < 3) throw DomainError("analyze_phi: need at least 3 records");
  std::vector<double> phi, sigma, prior;
  for (const auto& r : records) {
    phi.push_back(r.mean_phi);
    sigma.push_back(r.sigma_n);
    prior.push_back(r.prior_psnr);
  }
  PhiAnalysis a;
  a.per_image.assign(records.begin(), records.end());
  a.r_phi_sigma = pearson(phi, sigma, "mean_phi", "sigma_n");
  a.r_phi_priorpsnr = pearson(phi, prior, "mean_phi", "prior_psnr");
  return a;
}

/// Two-column whitespace-separated scatter data with a header line.
inline void write_scatter(const std::filesystem::path& path, const std::string& x_name, const std::string& y_name,
                          std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("write_scatter: column lengths differ");
  std::ofstream out(path);
  if (!out) throw IoError("write_scatter: cannot write " + path.string());
  out << "# " << x_name << ' ' << y_name << '\n';
  char buf[64];
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f %.6f\n", xs[i], ys[i]);
    out << buf;
  }
}

}  // namespace bigprior::metrics
