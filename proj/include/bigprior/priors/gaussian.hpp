#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior::priors {

/// Independent per-pixel Gaussian prior N(mean_i, std_i).
struct GaussianPixelPrior {
  Image mean;
  Grid stddev;

  GaussianPixelPrior(Image mean_image, Grid std_grid)
      : mean(std::move(mean_image)), stddev(std::move(std_grid)) {
    require_same_shape(mean.shape(), stddev.shape(), "GaussianPixelPrior");
    for (float s : stddev.data()) {
      if (!(s >= 0.0f) || !std::isfinite(s)) {
        throw DomainError("GaussianPixelPrior: standard deviations must be finite and nonnegative");
      }
    }
  }
};

/// Pixel-wise sample mean and standard deviation of a set of images.
inline GaussianPixelPrior fit_gaussian_prior(std::span<const Image> images) {
  if (images.empty()) throw DomainError("fit_gaussian_prior: no images");
  const Image& first = images.front();
  std::vector<double> sum(first.data().size(), 0.0), sq(first.data().size(), 0.0);
  for (const auto& img : images) {
    require_same_shape(img.shape(), first.shape(), "fit_gaussian_prior");
    auto d = img.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      sum[i] += d[i];
      sq[i] += static_cast<double>(d[i]) * d[i];
    }
  }
  const double n = static_cast<double>(images.size());
  Grid mean(first.shape()), stddev(first.shape());
  for (std::size_t i = 0; i < sum.size(); ++i) {
    const double m = sum[i] / n;
    mean.data()[i] = static_cast<float>(m);
    stddev.data()[i] = static_cast<float>(std::sqrt(std::max(0.0, sq[i] / n - m * m)));
  }
  return {Image(std::move(mean), first.value_range(), first.color_space()), std::move(stddev)};
}

/// Closed-form fusion weight of the Gaussian case: phi = 1 / (1 + S) with
/// S = std^2 / sigma_n^2, so phi is 1 where the prior is certain.
inline PhiMap gaussian_phi(const GaussianPixelPrior& prior, double sigma_n) {
  if (!(sigma_n > 0.0)) {
    throw DomainError("gaussian_phi: sigma_n must be positive (phi undefined for noise-free data)");
  }
  Grid phi(prior.stddev.shape());
  auto sd = prior.stddev.data();
  for (std::size_t i = 0; i < sd.size(); ++i) {
    const double s = static_cast<double>(sd[i]) * sd[i] / (sigma_n * sigma_n);
    phi.data()[i] = static_cast<float>(1.0 / (1.0 + s));
  }
  return PhiMap(std::move(phi));
}

/// Posterior mode for y = x + n, n ~ N(0, sigma_n), x_i ~ N(mean_i, std_i):
/// y_i / (1 + 1/S_i) + mean_i / (1 + S_i).
inline Image gaussian_map_estimate(const Image& y, const GaussianPixelPrior& prior, double sigma_n) {
  if (!(sigma_n > 0.0)) throw DomainError("gaussian_map_estimate: sigma_n must be positive");
  require_same_shape(y.shape(), prior.mean.shape(), "gaussian_map_estimate");
  Grid out(y.shape());
  auto yd = y.data();
  auto md = prior.mean.data();
  auto sd = prior.stddev.data();
  for (std::size_t i = 0; i < yd.size(); ++i) {
    const double s = static_cast<double>(sd[i]) * sd[i] / (sigma_n * sigma_n);
    // y / (1 + 1/S) written as y * S / (1 + S) so that S = 0 is defined.
    out.data()[i] = static_cast<float>(yd[i] * s / (1.0 + s) + md[i] / (1.0 + s));
  }
  return Image(std::move(out), y.value_range(), y.color_space());
}

}  // namespace bigprior::priors
