#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/nn/layers.hpp"
#include "bigprior/nn/optim.hpp"
#include "bigprior/priors/generator.hpp"

namespace bigprior::priors {

struct GeneratorTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 2e-3;
  double code_lr = 2e-2;
  std::uint64_t seed = 0;
};

struct GeneratorTrainResult {
  std::vector<double> loss_history;  // mean per-image squared error
};

/// Fits a decoder to clean centered images by optimizing its weights jointly
/// with one latent code per image (Adam on both), then folds the empirical
/// code mean and spread into the first linear layer so that N(0, I) codes
/// cover the training distribution. The first layer must be Linear.
inline MultiCodeGenerator<float> pretrain_generator(const MultiCodeGenerator<float>& init,
                                                    std::span<const Grid> images, const GeneratorTrainConfig& cfg,
                                                    GeneratorTrainResult* result = nullptr) {
  if (images.empty()) throw DomainError("pretrain_generator: no training images");
  for (const auto& g : images) require_same_shape(g.shape(), init.image_shape(), "pretrain_generator");
  nn::Sequential<float> net = init.network();
  auto* first = dynamic_cast<nn::Linear<float>*>(&net[0]);
  if (!first) throw DomainError("pretrain_generator: first layer must be linear");
  const std::size_t k = init.latent_dim(), n = images.size();

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  nn::Tensor<float> codes(n, k, 1, 1);
  for (auto& v : codes.data) v = normal(rng);

  nn::Adam<float> net_opt, code_opt;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::vector<float> code_grad(codes.size(), 0.0f);
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(n, b0 + cfg.batch_size), bs = b1 - b0;
      nn::Tensor<float> z(bs, k, 1, 1);
      for (std::size_t i = 0; i < bs; ++i) {
        auto src = codes.sample(order[b0 + i]);
        std::copy(src.begin(), src.end(), z.sample(i).begin());
      }
      std::vector<nn::Cache<float>> caches;
      const auto out = net.forward(z, &caches, true);
      nn::Tensor<float> grad(out.n, out.c, out.h, out.w);
      for (std::size_t i = 0; i < bs; ++i) {
        auto x = images[order[b0 + i]].data();
        auto o = out.sample(i);
        auto g = grad.sample(i);
        for (std::size_t p = 0; p < o.size(); ++p) {
          const double r = static_cast<double>(o[p]) - x[p];
          total += r * r;
          g[p] = static_cast<float>(2.0 * r / static_cast<double>(bs));
        }
      }
      auto grads = net.zero_grads();
      const auto gz = net.backward(caches, grad, &grads);
      std::vector<std::vector<float>> flat;
      for (auto& layer : grads) {
        for (auto& p : layer) flat.push_back(std::move(p));
      }
      net_opt.step(net.parameters(), flat, cfg.lr);
      std::fill(code_grad.begin(), code_grad.end(), 0.0f);
      for (std::size_t i = 0; i < bs; ++i) {
        auto g = gz.sample(i);
        std::copy(g.begin(), g.end(), code_grad.begin() + static_cast<std::ptrdiff_t>(order[b0 + i] * k));
      }
      code_opt.step({&codes.data}, {code_grad}, cfg.code_lr);
    }
    if (!std::isfinite(total)) throw DivergenceError("pretrain_generator: non-finite loss at epoch " + std::to_string(epoch));
    if (result) result->loss_history.push_back(total / static_cast<double>(n));
  }

  // W (mu + s u) + b = (W diag(s)) u + (W mu + b).
  std::vector<double> mu(k, 0.0), sd(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < k; ++d) mu[d] += codes.at(i, d, 0, 0);
  }
  for (auto& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < k; ++d) {
      const double r = codes.at(i, d, 0, 0) - mu[d];
      sd[d] += r * r;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n)) + 1e-6;
  auto& w = first->weight();
  auto& bias = first->bias();
  const std::size_t outs = w.size() / k;
  for (std::size_t o = 0; o < outs; ++o) {
    double shift = 0.0;
    for (std::size_t d = 0; d < k; ++d) {
      shift += static_cast<double>(w[o * k + d]) * mu[d];
      w[o * k + d] = static_cast<float>(w[o * k + d] * sd[d]);
    }
    if (!bias.empty()) bias[o] = static_cast<float>(bias[o] + shift);
  }
  return MultiCodeGenerator<float>(init.name(), std::move(net), init.block_ends(), k, init.split_layer());
}

}  // namespace bigprior::priors
