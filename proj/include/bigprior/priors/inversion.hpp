#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bigprior/degradations.hpp"
#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/priors/generator.hpp"

namespace bigprior::priors {

/// Settings of one multi-code inversion.
struct InversionConfig {
  std::size_t num_codes = 1;
  std::size_t iterations = 500;
  double step_size = 0.05;
  double pixel_weight = 1.0;     // weight of the squared l2 term
  double gradient_weight = 0.0;  // weight of the image-gradient l1 term
  std::uint64_t seed = 0;
};

/// Codes, channel weights and projection of the best iterate.
template <typename T = float>
struct InversionResult {
  std::vector<std::vector<T>> codes;
  std::vector<std::vector<T>> alphas;
  Grid projection;  // centered RGB
  double final_loss = 0.0;
  double initial_loss = 0.0;
  std::size_t best_iteration = 0;
};

/// G2( sum_n G1(z_n) * alpha_n ) with alpha_n scaling feature channels.
template <typename T>
Grid compose(const MultiCodeGenerator<T>& gen, const std::vector<std::vector<T>>& codes,
             const std::vector<std::vector<T>>& alphas) {
  if (codes.empty() || codes.size() != alphas.size()) {
    throw ShapeError("compose: need matching, non-empty code and alpha lists");
  }
  const std::size_t n = codes.size(), k = gen.latent_dim();
  const Shape3 fs = gen.feature_shape();
  nn::Tensor<T> z(n, k, 1, 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (codes[i].size() != k) throw ShapeError("compose: code length mismatch");
    if (alphas[i].size() != fs.channels) throw ShapeError("compose: alpha length mismatch");
    std::copy(codes[i].begin(), codes[i].end(), z.sample(i).begin());
  }
  const auto feats = gen.stage1(z);
  nn::Tensor<T> fused(1, fs.channels, fs.height, fs.width);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < fs.channels; ++c) {
      const T a = alphas[i][c];
      const T* src = feats.plane_ptr(i, c);
      T* dst = fused.plane_ptr(0, c);
      for (std::size_t p = 0; p < fs.plane(); ++p) dst[p] += a * src[p];
    }
  }
  return nn::to_grid(gen.stage2(fused));
}

namespace detail {

// Forward differences along x and y, concatenated per channel.
template <typename T>
std::vector<T> image_gradients(const Shape3& s, std::span<const T> v) {
  std::vector<T> out;
  out.reserve(2 * s.size());
  for (std::size_t c = 0; c < s.channels; ++c) {
    const T* p = v.data() + c * s.plane();
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x + 1 < s.width; ++x) out.push_back(p[y * s.width + x + 1] - p[y * s.width + x]);
    }
    for (std::size_t y = 0; y + 1 < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x) out.push_back(p[(y + 1) * s.width + x] - p[y * s.width + x]);
    }
  }
  return out;
}

// Adjoint of image_gradients.
template <typename T>
void image_gradients_adjoint(const Shape3& s, std::span<const T> g, std::span<T> out) {
  std::size_t k = 0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    T* p = out.data() + c * s.plane();
    for (std::size_t y = 0; y < s.height; ++y) {
      for (std::size_t x = 0; x + 1 < s.width; ++x, ++k) {
        p[y * s.width + x + 1] += g[k];
        p[y * s.width + x] -= g[k];
      }
    }
    for (std::size_t y = 0; y + 1 < s.height; ++y) {
      for (std::size_t x = 0; x < s.width; ++x, ++k) {
        p[(y + 1) * s.width + x] += g[k];
        p[y * s.width + x] -= g[k];
      }
    }
  }
}

}  // namespace detail

/// Inversion objective w2 * ||f(x) - y||^2 + wg * ||grad f(x) - grad y||_1
/// and its gradient with respect to codes and channel weights.
template <typename T>
class InversionObjective {
 public:
  InversionObjective(const MultiCodeGenerator<T>& gen, const Grid& observation, const DegradationSpec& f,
                     double pixel_weight, double gradient_weight)
      : gen_(gen), f_(f), w2_(pixel_weight), wg_(gradient_weight) {
    const Shape3 expected = f.observation_shape(gen.image_shape());
    if (observation.shape() != expected) {
      throw ShapeError("invert: observation " + to_string(observation.shape()) + " does not match f(G(z)) " +
                       to_string(expected));
    }
    obs_shape_ = observation.shape();
    y_.assign(observation.data().begin(), observation.data().end());
    if (wg_ != 0.0) y_grad_ = detail::image_gradients<T>(obs_shape_, y_);
  }

  struct Evaluation {
    double loss = 0.0;
    Grid projection;
    std::vector<std::vector<T>> grad_codes;
    std::vector<std::vector<T>> grad_alphas;
  };

  Evaluation evaluate(const std::vector<std::vector<T>>& codes, const std::vector<std::vector<T>>& alphas,
                      bool with_gradient) const {
    const std::size_t n = codes.size(), k = gen_.latent_dim();
    const Shape3 fs = gen_.feature_shape();
    const Shape3 is = gen_.image_shape();
    nn::Tensor<T> z(n, k, 1, 1);
    for (std::size_t i = 0; i < n; ++i) std::copy(codes[i].begin(), codes[i].end(), z.sample(i).begin());

    std::vector<nn::Cache<T>> c1, c2;
    const auto feats = gen_.stage1(z, with_gradient ? &c1 : nullptr);
    nn::Tensor<T> fused(1, fs.channels, fs.height, fs.width);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < fs.channels; ++c) {
        const T a = alphas[i][c];
        const T* src = feats.plane_ptr(i, c);
        T* dst = fused.plane_ptr(0, c);
        for (std::size_t p = 0; p < fs.plane(); ++p) dst[p] += a * src[p];
      }
    }
    const auto x = gen_.stage2(fused, with_gradient ? &c2 : nullptr);
    const auto fx = f_.template forward<T>(is, x.data);

    Evaluation ev;
    std::vector<T> grad_fx(fx.size(), T(0));
    double loss = 0.0;
    for (std::size_t i = 0; i < fx.size(); ++i) {
      const double r = static_cast<double>(fx[i]) - y_[i];
      loss += w2_ * r * r;
      grad_fx[i] = static_cast<T>(2.0 * w2_ * r);
    }
    if (wg_ != 0.0) {
      const auto g = detail::image_gradients<T>(obs_shape_, fx);
      std::vector<T> sign(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double d = static_cast<double>(g[i]) - y_grad_[i];
        loss += wg_ * std::abs(d);
        sign[i] = static_cast<T>(d > 0 ? wg_ : (d < 0 ? -wg_ : 0.0));
      }
      detail::image_gradients_adjoint<T>(obs_shape_, sign, grad_fx);
    }
    ev.loss = loss;
    ev.projection = nn::to_grid(x);
    if (!with_gradient) return ev;

    nn::Tensor<T> gx(1, is.channels, is.height, is.width);
    gx.data = f_.template forward_vjp<T>(is, x.data, grad_fx);
    const auto gfused = gen_.stage2_backward(c2, gx);
    nn::Tensor<T> gfeats(n, fs.channels, fs.height, fs.width);
    ev.grad_alphas.assign(n, std::vector<T>(fs.channels, T(0)));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < fs.channels; ++c) {
        const T a = alphas[i][c];
        const T* src = feats.plane_ptr(i, c);
        const T* g = gfused.plane_ptr(0, c);
        T* dst = gfeats.plane_ptr(i, c);
        double acc = 0.0;
        for (std::size_t p = 0; p < fs.plane(); ++p) {
          acc += static_cast<double>(g[p]) * src[p];
          dst[p] = a * g[p];
        }
        ev.grad_alphas[i][c] = static_cast<T>(acc);
      }
    }
    const auto gz = gen_.stage1_backward(c1, gfeats);
    ev.grad_codes.assign(n, std::vector<T>(k));
    for (std::size_t i = 0; i < n; ++i) {
      auto s = gz.sample(i);
      std::copy(s.begin(), s.end(), ev.grad_codes[i].begin());
    }
    return ev;
  }

 private:
  const MultiCodeGenerator<T>& gen_;
  const DegradationSpec& f_;
  double w2_, wg_;
  Shape3 obs_shape_{};
  std::vector<T> y_;
  std::vector<T> y_grad_;
};

/// Seeded starting point: codes i.i.d. N(0,1), channel weights 1/N.
template <typename T>
std::pair<std::vector<std::vector<T>>, std::vector<std::vector<T>>> initial_codes(
    const MultiCodeGenerator<T>& gen, std::size_t num_codes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<T>> codes(num_codes, std::vector<T>(gen.latent_dim()));
  for (auto& z : codes) {
    for (auto& v : z) v = static_cast<T>(normal(rng));
  }
  std::vector<std::vector<T>> alphas(
      num_codes, std::vector<T>(gen.feature_shape().channels, static_cast<T>(1.0 / static_cast<double>(num_codes))));
  return {std::move(codes), std::move(alphas)};
}

/// Projects an observation onto the generator's range through f with
/// exactly cfg.iterations plain gradient-descent steps on codes and channel
/// weights jointly. Returns the best iterate (the initial point included).
template <typename T>
InversionResult<T> invert(const MultiCodeGenerator<T>& gen, const Grid& observation, const DegradationSpec& f,
                          const InversionConfig& cfg) {
  if (cfg.num_codes < 1) throw DomainError("invert: num_codes must be at least 1");
  if (cfg.iterations < 1) throw DomainError("invert: iterations must be at least 1");
  if (!(cfg.step_size > 0.0)) throw DomainError("invert: step size must be positive");
  InversionObjective<T> objective(gen, observation, f, cfg.pixel_weight, cfg.gradient_weight);
  auto [codes, alphas] = initial_codes(gen, cfg.num_codes, cfg.seed);

  InversionResult<T> best;
  best.final_loss = std::numeric_limits<double>::infinity();
  const T lr = static_cast<T>(cfg.step_size);
  for (std::size_t it = 0; it <= cfg.iterations; ++it) {
    const bool last = it == cfg.iterations;
    auto ev = objective.evaluate(codes, alphas, !last);
    if (!std::isfinite(ev.loss)) {
      throw DivergenceError("invert: non-finite loss at iteration " + std::to_string(it) +
                            " (reduce the step size)");
    }
    if (it == 0) best.initial_loss = ev.loss;
    if (ev.loss < best.final_loss) {
      best.final_loss = ev.loss;
      best.codes = codes;
      best.alphas = alphas;
      best.projection = std::move(ev.projection);
      best.best_iteration = it;
    }
    if (last) break;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      for (std::size_t d = 0; d < codes[i].size(); ++d) codes[i][d] -= lr * ev.grad_codes[i][d];
      for (std::size_t c = 0; c < alphas[i].size(); ++c) alphas[i][c] -= lr * ev.grad_alphas[i][c];
    }
  }
  return best;
}

/// Named inversion budget: split point plus optimizer settings.
struct InversionPreset {
  std::string name;
  std::size_t split_layer;
  InversionConfig config;
};

/// Budgets of the large-scale protocol (generator split layer, code count,
/// iteration count) plus reduced budgets sized for the toy generators.
inline const std::vector<InversionPreset>& inversion_presets() {
  static const std::vector<InversionPreset> presets = {
      {"colorization-full", 6, {20, 1500, 0.05, 1.0, 0.1, 0}},
      {"inpainting-full", 4, {30, 3000, 0.05, 1.0, 0.1, 0}},
      {"denoising-full", 4, {30, 3000, 0.05, 1.0, 0.1, 0}},
      {"colorization-desk", 1, {4, 150, 2e-3, 1.0, 0.05, 0}},
      {"inpainting-desk", 1, {4, 150, 2e-3, 1.0, 0.05, 0}},
      {"denoising-desk", 1, {4, 150, 2e-3, 1.0, 0.05, 0}},
  };
  return presets;
}

inline const InversionPreset& find_inversion_preset(const std::string& name) {
  for (const auto& p : inversion_presets()) {
    if (p.name == name) return p;
  }
  throw DomainError("unknown inversion preset '" + name + "'");
}

}  // namespace bigprior::priors
