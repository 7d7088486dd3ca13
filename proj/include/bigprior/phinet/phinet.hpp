#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/nn/layers.hpp"
#include "bigprior/nn/sequential.hpp"
#include "bigprior/nn/tensor.hpp"

namespace bigprior::phinet {

struct PhiNetConfig {
  std::size_t depth = 17;  // conv layers including the head
  std::size_t width = 64;
  std::size_t kernel = 3;
  std::size_t in_channels = 3;
  std::size_t out_channels = 3;
  bool skip = true;  // 1x1 input-to-logit path added before the sigmoid

  void validate() const {
    if (depth < 2) throw DomainError("PhiNetConfig: depth must be at least 2");
    if (width < 1 || in_channels < 1 || out_channels < 1) {
      throw DomainError("PhiNetConfig: channel counts must be positive");
    }
    if (kernel % 2 == 0) throw DomainError("PhiNetConfig: kernel must be odd (same padding)");
  }
};

inline nlohmann::json to_json(const PhiNetConfig& c) {
  return {{"depth", c.depth},       {"width", c.width},         {"kernel", c.kernel},
          {"in_channels", c.in_channels}, {"out_channels", c.out_channels}, {"skip", c.skip}};
}

inline PhiNetConfig phinet_config_from_json(const nlohmann::json& j) {
  PhiNetConfig c;
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.kernel = j.value("kernel", c.kernel);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.out_channels = j.value("out_channels", c.out_channels);
  c.skip = j.value("skip", c.skip);
  c.validate();
  return c;
}

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

/// Conv/BN/ReLU stack ending in a conv head, squashed to [0,1] per channel.
template <typename T = float>
class PhiNet {
 public:
  struct Caches {
    std::vector<nn::Cache<T>> body, skip;
    nn::Tensor<T> phi;
  };
  using Grads = std::pair<std::vector<nn::ParamGrads<T>>, std::vector<nn::ParamGrads<T>>>;

  PhiNet() = default;

  PhiNet(const PhiNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t k = cfg.kernel;
    auto& first = body_.add(nn::Conv2d<T>(cfg.in_channels, cfg.width, k, true));
    first.init_he(rng);
    body_.add(nn::LeakyRelu<T>(0.0));
    for (std::size_t d = 0; d + 2 < cfg.depth; ++d) {
      auto& conv = body_.add(nn::Conv2d<T>(cfg.width, cfg.width, k, false));
      conv.init_he(rng);
      body_.add(nn::BatchNorm2d<T>(cfg.width));
      body_.add(nn::LeakyRelu<T>(0.0));
    }
    auto& head = body_.add(nn::Conv2d<T>(cfg.width, cfg.out_channels, k, true));
    head.init_he(rng, 0.01);  // logits start near zero, phi near 0.5
    if (cfg.skip) {
      auto& s = skip_.add(nn::Conv2d<T>(cfg.in_channels, cfg.out_channels, 1, false));
      s.init_he(rng, 0.01);
    }
  }

  PhiNet(PhiNetConfig cfg, nn::Sequential<T> body, nn::Sequential<T> skip)
      : cfg_(cfg), body_(std::move(body)), skip_(std::move(skip)) {}

  const PhiNetConfig& config() const { return cfg_; }
  const nn::Sequential<T>& body() const { return body_; }
  const nn::Sequential<T>& skip() const { return skip_; }

  /// Zeroes the head and skip path so every logit is 0 and phi = 0.5.
  void zero_head() {
    for (auto* p : body_[body_.size() - 1].parameters()) std::fill(p->begin(), p->end(), T(0));
    for (auto* p : skip_.parameters()) std::fill(p->begin(), p->end(), T(0));
  }

  nn::Tensor<T> forward(const nn::Tensor<T>& x, Caches* caches, bool training) const {
    if (x.c != cfg_.in_channels) {
      throw ShapeError("PhiNet: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       std::to_string(x.c));
    }
    auto logits = body_.forward(x, caches ? &caches->body : nullptr, training);
    if (!skip_.empty()) {
      const auto s = skip_.forward(x, caches ? &caches->skip : nullptr, training);
      for (std::size_t i = 0; i < logits.size(); ++i) logits.data[i] += s.data[i];
    }
    for (auto& v : logits.data) v = sigmoid(v);
    if (caches) caches->phi = logits;
    return logits;
  }

  Grads zero_grads() const { return {body_.zero_grads(), skip_.zero_grads()}; }

  /// Accumulates parameter gradients given dL/dphi.
  void backward(const Caches& caches, const nn::Tensor<T>& grad_phi, Grads* grads) const {
    nn::Tensor<T> g = grad_phi;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T p = caches.phi.data[i];
      g.data[i] *= p * (T(1) - p);
    }
    body_.backward(caches.body, g, &grads->first);
    if (!skip_.empty()) skip_.backward(caches.skip, g, &grads->second);
  }

  void update_buffers(const Caches& caches) { body_.update_buffers(caches.body); }

  std::vector<std::vector<T>*> parameters() {
    auto ps = body_.parameters();
    for (auto* p : skip_.parameters()) ps.push_back(p);
    return ps;
  }
  std::vector<const std::vector<T>*> parameters() const {
    auto ps = body_.parameters();
    for (const auto* p : skip_.parameters()) ps.push_back(p);
    return ps;
  }
  std::vector<std::vector<T>*> buffers() { return body_.buffers(); }

  /// Flattens grads in the order of parameters().
  static std::vector<std::vector<T>> flatten_grads(const Grads& g) {
    std::vector<std::vector<T>> out;
    for (const auto* side : {&g.first, &g.second}) {
      for (const auto& layer : *side) {
        for (const auto& p : layer) out.push_back(p);
      }
    }
    return out;
  }

  std::size_t parameter_count() const { return body_.parameter_count() + skip_.parameter_count(); }

  template <typename U>
  PhiNet<U> cast() const {
    return PhiNet<U>(cfg_, body_.template cast<U>(), skip_.template cast<U>());
  }

  std::uint64_t checksum() const { return nn::checksum(body_) ^ (nn::checksum(skip_) * 31u); }

 private:
  PhiNetConfig cfg_;
  nn::Sequential<T> body_;
  nn::Sequential<T> skip_;
};

template <typename T>
PhiMap predict_phi(const PhiNet<T>& net, const Grid& input) {
  if (input.channels() != net.config().in_channels) {
    throw ShapeError("predict_phi: image has " + std::to_string(input.channels()) + " channels, network expects " +
                     std::to_string(net.config().in_channels));
  }
  const auto x = nn::from_grid<T>(input);
  auto phi = nn::to_grid(net.forward(x, nullptr, false));
  for (auto& v : phi.data()) v = std::clamp(v, 0.0f, 1.0f);
  return PhiMap(std::move(phi));
}

/// Inference-mode phi for a single normalized image.
template <typename T>
PhiMap predict_phi(const PhiNet<T>& net, const Image& y) {
  if (y.value_range() != ValueRange::centered) {
    throw DomainError("predict_phi: input must be normalized (centered range)");
  }
  return predict_phi(net, y.grid());
}

inline void save_phinet(const std::filesystem::path& dir, const PhiNet<float>& net) {
  nn::save_sequential(dir, "phinet_body", net.body());
  nn::save_sequential(dir, "phinet_skip", net.skip());
}

inline PhiNet<float> load_phinet(const std::filesystem::path& dir, const PhiNetConfig& cfg) {
  return PhiNet<float>(cfg, nn::load_sequential<float>(dir, "phinet_body"),
                       nn::load_sequential<float>(dir, "phinet_skip"));
}

}  // namespace bigprior::phinet
