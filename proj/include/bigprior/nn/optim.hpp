#pragma once

#include <cmath>
#include <vector>

#include "bigprior/error.hpp"

namespace bigprior::nn {

/// SGD with heavy-ball momentum: v = mu * v + g; p -= lr * v.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  void step(const std::vector<std::vector<T>*>& params, const std::vector<std::vector<T>>& grads,
            double lr) {
    if (params.size() != grads.size()) throw ShapeError("SgdMomentum: gradient count mismatch");
    if (velocity_.empty()) {
      for (const auto* p : params) velocity_.emplace_back(p->size(), T(0));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& v = velocity_[i];
      const auto& g = grads[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = static_cast<T>(momentum_ * v[k] + g[k]);
        p[k] = static_cast<T>(p[k] - lr * v[k]);
      }
    }
  }

  double momentum() const { return momentum_; }
  std::vector<std::vector<T>>& velocity() { return velocity_; }
  const std::vector<std::vector<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::vector<T>*>& params, const std::vector<std::vector<T>>& grads,
            double lr) {
    if (params.size() != grads.size()) throw ShapeError("Adam: gradient count mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->size(), 0.0);
        v_.emplace_back(p->size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double g = grads[i][k];
        m_[i][k] = beta1_ * m_[i][k] + (1 - beta1_) * g;
        v_[i][k] = beta2_ * v_[i][k] + (1 - beta2_) * g * g;
        p[k] = static_cast<T>(p[k] - lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace bigprior::nn
