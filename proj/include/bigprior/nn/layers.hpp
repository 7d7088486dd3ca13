#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "bigprior/error.hpp"
#include "bigprior/nn/tensor.hpp"

namespace bigprior::nn {

/// Values a layer keeps from its forward pass for the backward pass.
template <typename T>
struct Cache {
  Tensor<T> input;
  Tensor<T> output;
  std::vector<T> aux;
};

/// Parameter gradients of one layer, laid out like Layer::parameters().
template <typename T>
using ParamGrads = std::vector<std::vector<T>>;

/// A differentiable map between tensors. forward and backward are const:
/// parameters only change through optimizers, and running statistics only
/// through update_buffers().
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual nlohmann::json config() const { return {{"kind", kind()}}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// `cache` may be null when no backward pass follows.
  virtual Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool training) const = 0;

  /// Returns the gradient with respect to the input. When `grads` is non-null,
  /// parameter gradients are accumulated into it.
  virtual Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& grad_out,
                             ParamGrads<T>* grads) const = 0;

  virtual std::vector<std::vector<T>*> parameters() { return {}; }
  /// Non-trainable state that is still persisted.
  virtual std::vector<std::vector<T>*> buffers() { return {}; }
  virtual void update_buffers(const Cache<T>&) {}

  std::vector<const std::vector<T>*> parameters() const {
    auto ps = const_cast<Layer*>(this)->parameters();
    return {ps.begin(), ps.end()};
  }
  std::vector<const std::vector<T>*> buffers() const {
    auto bs = const_cast<Layer*>(this)->buffers();
    return {bs.begin(), bs.end()};
  }
};

template <typename T>
ParamGrads<T> zero_grads_like(const Layer<T>& layer) {
  ParamGrads<T> g;
  for (const auto* p : layer.parameters()) g.emplace_back(p->size(), T(0));
  return g;
}

/// Square-kernel convolution with stride 1 and zero "same" padding.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, bool bias = true)
      : in_(in), out_(out), k_(kernel), has_bias_(bias),
        weight_(out * in * kernel * kernel, T(0)), bias_(bias ? out : 0, T(0)) {
    if (kernel % 2 == 0) throw DomainError("Conv2d: kernel size must be odd");
  }

  std::string kind() const override { return "conv2d"; }
  nlohmann::json config() const override {
    return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"kernel", k_}, {"bias", has_bias_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

  std::vector<std::vector<T>*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return k_; }
  std::vector<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }

  /// He-normal weights scaled by `gain`, zero bias.
  void init_he(std::mt19937_64& rng, double gain = 1.0) {
    std::normal_distribution<double> d(0.0, gain * std::sqrt(2.0 / static_cast<double>(in_ * k_ * k_)));
    for (auto& v : weight_) v = static_cast<T>(d(rng));
    std::fill(bias_.begin(), bias_.end(), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    if (x.c != in_) {
      throw ShapeError("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(x.c));
    }
    Tensor<T> y(x.n, out_, x.h, x.w);
    const long H = static_cast<long>(x.h), W = static_cast<long>(x.w);
    const long pad = static_cast<long>(k_ / 2);
    for (std::size_t i = 0; i < x.n; ++i) {
      for (std::size_t oc = 0; oc < out_; ++oc) {
        T* dst = y.plane_ptr(i, oc);
        if (has_bias_) std::fill(dst, dst + y.plane(), bias_[oc]);
        for (std::size_t ic = 0; ic < in_; ++ic) {
          const T* src = x.plane_ptr(i, ic);
          const T* wk = &weight_[(oc * in_ + ic) * k_ * k_];
          for (long ky = 0; ky < static_cast<long>(k_); ++ky) {
            const long dy = ky - pad;
            const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
            for (long kx = 0; kx < static_cast<long>(k_); ++kx) {
              const long dx = kx - pad;
              const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
              const T wv = wk[ky * static_cast<long>(k_) + kx];
              for (long r = y0; r < y1; ++r) {
                T* drow = dst + r * W;
                const T* srow = src + (r + dy) * W + dx;
                for (long c = x0; c < x1; ++c) drow[c] += wv * srow[c];
              }
            }
          }
        }
      }
    }
    if (cache) cache->input = x;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>* grads) const override {
    const Tensor<T>& x = cache.input;
    Tensor<T> gx(x.n, x.c, x.h, x.w);
    const long H = static_cast<long>(x.h), W = static_cast<long>(x.w);
    const long pad = static_cast<long>(k_ / 2);
    T* gw = grads ? (*grads)[0].data() : nullptr;
    for (std::size_t i = 0; i < x.n; ++i) {
      for (std::size_t oc = 0; oc < out_; ++oc) {
        const T* g = gy.plane_ptr(i, oc);
        if (grads && has_bias_) {
          T s = 0;
          for (std::size_t p = 0; p < gy.plane(); ++p) s += g[p];
          (*grads)[1][oc] += s;
        }
        for (std::size_t ic = 0; ic < in_; ++ic) {
          const T* src = x.plane_ptr(i, ic);
          T* gsrc = gx.plane_ptr(i, ic);
          const std::size_t woff = (oc * in_ + ic) * k_ * k_;
          for (long ky = 0; ky < static_cast<long>(k_); ++ky) {
            const long dy = ky - pad;
            const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
            for (long kx = 0; kx < static_cast<long>(k_); ++kx) {
              const long dx = kx - pad;
              const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
              const std::size_t widx = woff + static_cast<std::size_t>(ky * static_cast<long>(k_) + kx);
              const T wv = weight_[widx];
              T acc = 0;
              for (long r = y0; r < y1; ++r) {
                const T* grow = g + r * W;
                const T* srow = src + (r + dy) * W + dx;
                T* gsrow = gsrc + (r + dy) * W + dx;
                for (long c = x0; c < x1; ++c) {
                  gsrow[c] += wv * grow[c];
                  acc += grow[c] * srow[c];
                }
              }
              if (gw) gw[widx] += acc;
            }
          }
        }
      }
    }
    return gx;
  }

 private:
  std::size_t in_, out_, k_;
  bool has_bias_;
  std::vector<T> weight_;
  std::vector<T> bias_;
};

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics; inference mode with running statistics.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : c_(channels), momentum_(momentum), eps_(eps), gamma_(channels, T(1)), beta_(channels, T(0)),
        running_mean_(channels, T(0)), running_var_(channels, T(1)) {}

  std::string kind() const override { return "batchnorm2d"; }
  nlohmann::json config() const override {
    return {{"kind", kind()}, {"channels", c_}, {"momentum", momentum_}, {"eps", eps_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::vector<std::vector<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<std::vector<T>*> buffers() override { return {&running_mean_, &running_var_}; }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool training) const override {
    if (x.c != c_) throw ShapeError("BatchNorm2d: channel mismatch");
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t m = x.n * x.plane();
    std::vector<T> aux(3 * c_);
    for (std::size_t ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (training) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.n; ++i) {
          const T* p = x.plane_ptr(i, ch);
          for (std::size_t k = 0; k < x.plane(); ++k) s += p[k];
        }
        mean = s / static_cast<double>(m);
        double v = 0.0;
        for (std::size_t i = 0; i < x.n; ++i) {
          const T* p = x.plane_ptr(i, ch);
          for (std::size_t k = 0; k < x.plane(); ++k) {
            const double d = p[k] - mean;
            v += d * d;
          }
        }
        var = v / static_cast<double>(m);
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const double invstd = 1.0 / std::sqrt(var + eps_);
      aux[ch] = static_cast<T>(mean);
      aux[c_ + ch] = static_cast<T>(invstd);
      aux[2 * c_ + ch] = static_cast<T>(var);
      const T scale = static_cast<T>(gamma_[ch] * invstd);
      const T shift = static_cast<T>(beta_[ch] - gamma_[ch] * invstd * mean);
      for (std::size_t i = 0; i < x.n; ++i) {
        const T* p = x.plane_ptr(i, ch);
        T* q = y.plane_ptr(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) q[k] = p[k] * scale + shift;
      }
    }
    if (cache) {
      cache->input = x;
      cache->aux = std::move(aux);
      cache->aux.push_back(training ? T(1) : T(0));
    }
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>* grads) const override {
    const Tensor<T>& x = cache.input;
    const bool training = cache.aux[3 * c_] != T(0);
    Tensor<T> gx(x.n, x.c, x.h, x.w);
    const double m = static_cast<double>(x.n * x.plane());
    for (std::size_t ch = 0; ch < c_; ++ch) {
      const double mean = cache.aux[ch];
      const double invstd = cache.aux[c_ + ch];
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < x.n; ++i) {
        const T* p = x.plane_ptr(i, ch);
        const T* g = gy.plane_ptr(i, ch);
        for (std::size_t k = 0; k < x.plane(); ++k) {
          sum_g += g[k];
          sum_gx += g[k] * (p[k] - mean) * invstd;
        }
      }
      if (grads) {
        (*grads)[0][ch] += static_cast<T>(sum_gx);
        (*grads)[1][ch] += static_cast<T>(sum_g);
      }
      const double gamma = gamma_[ch];
      for (std::size_t i = 0; i < x.n; ++i) {
        const T* p = x.plane_ptr(i, ch);
        const T* g = gy.plane_ptr(i, ch);
        T* q = gx.plane_ptr(i, ch);
        if (training) {
          for (std::size_t k = 0; k < x.plane(); ++k) {
            const double xhat = (p[k] - mean) * invstd;
            q[k] = static_cast<T>(gamma * invstd / m * (m * g[k] - sum_g - xhat * sum_gx));
          }
        } else {
          for (std::size_t k = 0; k < x.plane(); ++k) q[k] = static_cast<T>(gamma * invstd * g[k]);
        }
      }
    }
    return gx;
  }

  void update_buffers(const Cache<T>& cache) override {
    const double m = static_cast<double>(cache.input.n * cache.input.plane());
    const double unbias = m > 1 ? m / (m - 1) : 1.0;
    for (std::size_t ch = 0; ch < c_; ++ch) {
      running_mean_[ch] = static_cast<T>((1 - momentum_) * running_mean_[ch] + momentum_ * cache.aux[ch]);
      running_var_[ch] = static_cast<T>((1 - momentum_) * running_var_[ch] +
                                        momentum_ * cache.aux[2 * c_ + ch] * unbias);
    }
  }

 private:
  std::size_t c_;
  double momentum_, eps_;
  std::vector<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
};

/// max(x, slope * x); slope 0 gives a plain ReLU.
template <typename T>
class LeakyRelu final : public Layer<T> {
 public:
  explicit LeakyRelu(double slope = 0.0) : slope_(slope) {}
  std::string kind() const override { return slope_ == 0.0 ? "relu" : "leaky_relu"; }
  nlohmann::json config() const override { return {{"kind", kind()}, {"slope", slope_}}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<LeakyRelu>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    Tensor<T> y = x;
    const T s = static_cast<T>(slope_);
    for (auto& v : y.data) v = v > T(0) ? v : v * s;
    if (cache) cache->input = x;
    return y;
  }
  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>*) const override {
    Tensor<T> gx = gy;
    const T s = static_cast<T>(slope_);
    for (std::size_t k = 0; k < gx.size(); ++k) {
      if (!(cache.input.data[k] > T(0))) gx.data[k] *= s;
    }
    return gx;
  }

 private:
  double slope_;
};

/// Fully connected map on flattened samples; output shape (n, out, 1, 1).
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::size_t in, std::size_t out, bool bias = true)
      : in_(in), out_(out), has_bias_(bias), weight_(in * out, T(0)), bias_(bias ? out : 0, T(0)) {}

  std::string kind() const override { return "linear"; }
  nlohmann::json config() const override {
    return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"bias", has_bias_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }
  std::vector<std::vector<T>*> parameters() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }
  std::vector<T>& weight() { return weight_; }
  std::vector<T>& bias() { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  void init_he(std::mt19937_64& rng, double gain = 1.0) {
    std::normal_distribution<double> d(0.0, gain * std::sqrt(2.0 / static_cast<double>(in_)));
    for (auto& v : weight_) v = static_cast<T>(d(rng));
    std::fill(bias_.begin(), bias_.end(), T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    if (x.sample_size() != in_) {
      throw ShapeError("Linear: expected " + std::to_string(in_) + " features, got " +
                       std::to_string(x.sample_size()));
    }
    Tensor<T> y(x.n, out_, 1, 1);
    for (std::size_t i = 0; i < x.n; ++i) {
      auto src = x.sample(i);
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wrow = &weight_[o * in_];
        T acc = has_bias_ ? bias_[o] : T(0);
        for (std::size_t k = 0; k < in_; ++k) acc += wrow[k] * src[k];
        y.data[i * out_ + o] = acc;
      }
    }
    if (cache) cache->input = x;
    return y;
  }

  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>* grads) const override {
    const Tensor<T>& x = cache.input;
    Tensor<T> gx(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.n; ++i) {
      auto src = x.sample(i);
      auto dst = gx.sample(i);
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = gy.data[i * out_ + o];
        const T* wrow = &weight_[o * in_];
        for (std::size_t k = 0; k < in_; ++k) dst[k] += g * wrow[k];
        if (grads) {
          T* gw = &(*grads)[0][o * in_];
          for (std::size_t k = 0; k < in_; ++k) gw[k] += g * src[k];
          if (has_bias_) (*grads)[1][o] += g;
        }
      }
    }
    return gx;
  }

 private:
  std::size_t in_, out_;
  bool has_bias_;
  std::vector<T> weight_, bias_;
};

/// Reinterprets each sample as (c, h, w) without moving data.
template <typename T>
class Reshape final : public Layer<T> {
 public:
  Reshape(std::size_t c, std::size_t h, std::size_t w) : c_(c), h_(h), w_(w) {}
  std::string kind() const override { return "reshape"; }
  nlohmann::json config() const override {
    return {{"kind", kind()}, {"c", c_}, {"h", h_}, {"w", w_}};
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Reshape>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    if (x.sample_size() != c_ * h_ * w_) throw ShapeError("Reshape: element count mismatch");
    Tensor<T> y = x;
    y.c = c_;
    y.h = h_;
    y.w = w_;
    if (cache) {
      cache->input.n = x.n;
      cache->input.c = x.c;
      cache->input.h = x.h;
      cache->input.w = x.w;
    }
    return y;
  }
  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>*) const override {
    Tensor<T> gx = gy;
    gx.c = cache.input.c;
    gx.h = cache.input.h;
    gx.w = cache.input.w;
    return gx;
  }

 private:
  std::size_t c_, h_, w_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2x final : public Layer<T> {
 public:
  std::string kind() const override { return "upsample2x"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Upsample2x>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    Tensor<T> y(x.n, x.c, 2 * x.h, 2 * x.w);
    for (std::size_t i = 0; i < x.n; ++i) {
      for (std::size_t ch = 0; ch < x.c; ++ch) {
        const T* src = x.plane_ptr(i, ch);
        T* dst = y.plane_ptr(i, ch);
        for (std::size_t r = 0; r < y.h; ++r) {
          const T* srow = src + (r / 2) * x.w;
          T* drow = dst + r * y.w;
          for (std::size_t c = 0; c < y.w; ++c) drow[c] = srow[c / 2];
        }
      }
    }
    if (cache) {
      cache->input.n = x.n;
      cache->input.c = x.c;
      cache->input.h = x.h;
      cache->input.w = x.w;
    }
    return y;
  }
  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>*) const override {
    Tensor<T> gx(cache.input.n, cache.input.c, cache.input.h, cache.input.w);
    for (std::size_t i = 0; i < gx.n; ++i) {
      for (std::size_t ch = 0; ch < gx.c; ++ch) {
        const T* src = gy.plane_ptr(i, ch);
        T* dst = gx.plane_ptr(i, ch);
        for (std::size_t r = 0; r < gy.h; ++r) {
          for (std::size_t c = 0; c < gy.w; ++c) dst[(r / 2) * gx.w + c / 2] += src[r * gy.w + c];
        }
      }
    }
    return gx;
  }
};

/// 2x2 average pooling; odd trailing rows/columns are dropped.
template <typename T>
class AvgPool2x final : public Layer<T> {
 public:
  std::string kind() const override { return "avgpool2x"; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<AvgPool2x>(*this); }

  Tensor<T> forward(const Tensor<T>& x, Cache<T>* cache, bool) const override {
    Tensor<T> y(x.n, x.c, x.h / 2, x.w / 2);
    for (std::size_t i = 0; i < x.n; ++i) {
      for (std::size_t ch = 0; ch < x.c; ++ch) {
        const T* src = x.plane_ptr(i, ch);
        T* dst = y.plane_ptr(i, ch);
        for (std::size_t r = 0; r < y.h; ++r) {
          for (std::size_t c = 0; c < y.w; ++c) {
            const T* a = src + 2 * r * x.w + 2 * c;
            dst[r * y.w + c] = T(0.25) * (a[0] + a[1] + a[x.w] + a[x.w + 1]);
          }
        }
      }
    }
    if (cache) {
      cache->input.n = x.n;
      cache->input.c = x.c;
      cache->input.h = x.h;
      cache->input.w = x.w;
    }
    return y;
  }
  Tensor<T> backward(const Cache<T>& cache, const Tensor<T>& gy, ParamGrads<T>*) const override {
    Tensor<T> gx(cache.input.n, cache.input.c, cache.input.h, cache.input.w);
    for (std::size_t i = 0; i < gx.n; ++i) {
      for (std::size_t ch = 0; ch < gx.c; ++ch) {
        const T* src = gy.plane_ptr(i, ch);
        T* dst = gx.plane_ptr(i, ch);
        for (std::size_t r = 0; r < gy.h; ++r) {
          for (std::size_t c = 0; c < gy.w; ++c) {
            const T g = T(0.25) * src[r * gy.w + c];
            T* a = dst + 2 * r * gx.w + 2 * c;
            a[0] += g;
            a[1] += g;
            a[gx.w] += g;
            a[gx.w + 1] += g;
          }
        }
      }
    }
    return gx;
  }
};

/// Rebuilds a layer from its config(); parameters start at their defaults.
template <typename T>
std::unique_ptr<Layer<T>> make_layer(const nlohmann::json& cfg) {
  const std::string kind = cfg.at("kind").get<std::string>();
  if (kind == "conv2d") {
    return std::make_unique<Conv2d<T>>(cfg.at("in").get<std::size_t>(), cfg.at("out").get<std::size_t>(),
                                       cfg.at("kernel").get<std::size_t>(), cfg.at("bias").get<bool>());
  }
  if (kind == "batchnorm2d") {
    return std::make_unique<BatchNorm2d<T>>(cfg.at("channels").get<std::size_t>(),
                                            cfg.at("momentum").get<double>(), cfg.at("eps").get<double>());
  }
  if (kind == "relu" || kind == "leaky_relu") {
    return std::make_unique<LeakyRelu<T>>(cfg.value("slope", 0.0));
  }
  if (kind == "linear") {
    return std::make_unique<Linear<T>>(cfg.at("in").get<std::size_t>(), cfg.at("out").get<std::size_t>(),
                                       cfg.at("bias").get<bool>());
  }
  if (kind == "reshape") {
    return std::make_unique<Reshape<T>>(cfg.at("c").get<std::size_t>(), cfg.at("h").get<std::size_t>(),
                                        cfg.at("w").get<std::size_t>());
  }
  if (kind == "upsample2x") return std::make_unique<Upsample2x<T>>();
  if (kind == "avgpool2x") return std::make_unique<AvgPool2x<T>>();
  throw DomainError("make_layer: unknown layer kind '" + kind + "'");
}

}  // namespace bigprior::nn
