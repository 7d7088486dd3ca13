#pragma once

#include <cmath>
#include <functional>
#include <span>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/nn/tensor.hpp"

namespace bigprior::phinet {

/// Batched loss: per sample sum((1-phi)*g + phi*p - x)^2 + rho*sum|phi|,
/// averaged over the batch. All tensors share one shape; `grad_phi`, when
/// given, receives dL/dphi.
template <typename T>
double bigprior_loss(const nn::Tensor<T>& phi, const nn::Tensor<T>& fidelity, const nn::Tensor<T>& prior,
                     const nn::Tensor<T>& target, double rho, nn::Tensor<T>* grad_phi = nullptr) {
  if (!phi.same_shape(fidelity) || !phi.same_shape(prior) || !phi.same_shape(target)) {
    throw ShapeError("bigprior_loss: shape mismatch (" + nn::shape_string(phi) + ", " + nn::shape_string(fidelity) +
                     ", " + nn::shape_string(prior) + ", " + nn::shape_string(target) + ")");
  }
  if (rho < 0.0) throw DomainError("bigprior_loss: rho must be nonnegative");
  if (phi.n == 0) throw ShapeError("bigprior_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(phi.n);
  if (grad_phi) *grad_phi = nn::Tensor<T>(phi.n, phi.c, phi.h, phi.w);
  double total = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double f = phi.data[i], g = fidelity.data[i], p = prior.data[i];
    const double r = (1.0 - f) * g + f * p - target.data[i];
    total += r * r + rho * std::abs(f);
    if (grad_phi) grad_phi->data[i] = static_cast<T>((2.0 * r * (p - g) + rho * (f < 0 ? -1.0 : 1.0)) * inv_b);
  }
  return total * inv_b;
}

/// Single-image form with an explicit g^-1.
inline double bigprior_loss(const PhiMap& phi, const Image& y, const Image& prior_img, const Image& x,
                            const std::function<Image(const Image&)>& g_inv, double rho) {
  const Image lifted = g_inv(y);
  require_same_shape(phi.shape(), lifted.shape(), "bigprior_loss(phi, g_inv(y))");
  require_same_shape(phi.shape(), prior_img.shape(), "bigprior_loss(phi, prior)");
  require_same_shape(phi.shape(), x.shape(), "bigprior_loss(phi, x)");
  return bigprior_loss(nn::from_grid<double>(phi.grid()), nn::from_grid<double>(lifted.grid()),
                       nn::from_grid<double>(prior_img.grid()), nn::from_grid<double>(x.grid()), rho);
}

}  // namespace bigprior::phinet
