#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"
#include "bigprior/nn/sequential.hpp"
#include "bigprior/priors/dictionary.hpp"

namespace bigprior::priors {

/// A frozen generator G = G2 o G1 split after `split_layer` blocks.
///
/// The network is a chain of blocks (groups of layers). G1 maps a latent
/// vector to a (C, h, w) feature grid; G2 maps a feature grid to a centered
/// RGB image. All methods are const, so the parameters cannot change once
/// the generator is built.
template <typename T>
class MultiCodeGenerator {
 public:
  MultiCodeGenerator(std::string name, nn::Sequential<T> net, std::vector<std::size_t> block_ends,
                     std::size_t latent_dim, std::size_t split_layer)
      : name_(std::move(name)), net_(std::move(net)), block_ends_(std::move(block_ends)),
        latent_dim_(latent_dim) {
    if (block_ends_.empty() || block_ends_.back() != net_.size()) {
      throw DomainError("MultiCodeGenerator: block boundaries must cover every layer");
    }
    set_split(split_layer);
  }

  const std::string& name() const { return name_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t split_layer() const { return split_; }
  std::size_t block_count() const { return block_ends_.size(); }
  const std::vector<std::size_t>& block_ends() const { return block_ends_; }
  const Shape3& feature_shape() const { return feature_shape_; }
  const Shape3& image_shape() const { return image_shape_; }
  const nn::Sequential<T>& network() const { return net_; }

  /// Same parameters, different split point.
  MultiCodeGenerator with_split(std::size_t split_layer) const {
    MultiCodeGenerator g = *this;
    g.set_split(split_layer);
    return g;
  }

  /// G1 on a batch of codes laid out as (N, latent_dim, 1, 1).
  nn::Tensor<T> stage1(const nn::Tensor<T>& codes, std::vector<nn::Cache<T>>* caches = nullptr) const {
    if (codes.sample_size() != latent_dim_) throw ShapeError("stage1: latent dimension mismatch");
    return net_.forward(codes, caches, false, 0, split_index());
  }

  nn::Tensor<T> stage2(const nn::Tensor<T>& features, std::vector<nn::Cache<T>>* caches = nullptr) const {
    if (features.sample_shape() != feature_shape_) throw ShapeError("stage2: feature shape mismatch");
    return net_.forward(features, caches, false, split_index(), net_.size());
  }

  nn::Tensor<T> stage1_backward(const std::vector<nn::Cache<T>>& caches, const nn::Tensor<T>& grad) const {
    return net_.backward(caches, grad, nullptr, 0, split_index());
  }

  nn::Tensor<T> stage2_backward(const std::vector<nn::Cache<T>>& caches, const nn::Tensor<T>& grad) const {
    return net_.backward(caches, grad, nullptr, split_index(), net_.size());
  }

  /// Plain single-code generation G2(G1(z)).
  Grid generate(std::span<const T> z) const {
    nn::Tensor<T> codes(1, latent_dim_, 1, 1);
    std::copy(z.begin(), z.end(), codes.data.begin());
    return nn::to_grid(stage2(stage1(codes)));
  }

  std::uint64_t parameter_checksum() const { return nn::checksum(net_); }

  template <typename U>
  MultiCodeGenerator<U> cast() const {
    return MultiCodeGenerator<U>(name_, net_.template cast<U>(), block_ends_, latent_dim_, split_);
  }

 private:
  std::size_t split_index() const { return block_ends_[split_ - 1]; }

  void set_split(std::size_t split_layer) {
    if (split_layer < 1 || split_layer >= block_ends_.size()) {
      throw DomainError("MultiCodeGenerator '" + name_ + "': split layer " + std::to_string(split_layer) +
                        " outside [1, " + std::to_string(block_ends_.size() - 1) + "]");
    }
    split_ = split_layer;
    nn::Tensor<T> z(1, latent_dim_, 1, 1);
    auto f = net_.forward(z, nullptr, false, 0, split_index());
    feature_shape_ = f.sample_shape();
    image_shape_ = net_.forward(f, nullptr, false, split_index(), net_.size()).sample_shape();
  }

  std::string name_;
  nn::Sequential<T> net_;
  std::vector<std::size_t> block_ends_;
  std::size_t latent_dim_;
  std::size_t split_ = 1;
  Shape3 feature_shape_{};
  Shape3 image_shape_{};
};

/// Two linear blocks: z -> A z reshaped to `features`, then features -> B f + b
/// reshaped to `image`. A is square orthogonal when latent_dim equals the
/// feature size; B has orthogonal columns with singular values in [0.5, 1].
template <typename T>
MultiCodeGenerator<T> make_linear_generator(std::size_t latent_dim, Shape3 features, Shape3 image,
                                            std::uint64_t seed) {
  const std::size_t f = features.size(), p = image.size();
  if (f > p) throw DomainError("make_linear_generator: feature grid larger than image");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_orthonormal = [&](std::size_t rows, std::size_t cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  };
  Eigen::MatrixXd a = latent_dim == f ? random_orthonormal(f, f)
                                      : Eigen::MatrixXd(random_orthonormal(std::max(f, latent_dim),
                                                                           std::max(f, latent_dim))
                                                            .topLeftCorner(static_cast<Eigen::Index>(f),
                                                                           static_cast<Eigen::Index>(latent_dim)));
  Eigen::MatrixXd b = random_orthonormal(p, f);
  std::uniform_real_distribution<double> sv(0.5, 1.0);
  for (Eigen::Index c = 0; c < b.cols(); ++c) b.col(c) *= sv(rng);

  nn::Sequential<T> net;
  auto& l1 = net.add(nn::Linear<T>(latent_dim, f, false));
  net.add(nn::Reshape<T>(features.channels, features.height, features.width));
  auto& l2 = net.add(nn::Linear<T>(f, p, true));
  net.add(nn::Reshape<T>(image.channels, image.height, image.width));
  for (std::size_t r = 0; r < f; ++r) {
    for (std::size_t c = 0; c < latent_dim; ++c) {
      l1.weight()[r * latent_dim + c] = static_cast<T>(a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
  }
  std::normal_distribution<double> bias(0.0, 0.1);
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < f; ++c) {
      l2.weight()[r * f + c] = static_cast<T>(b(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    l2.bias()[r] = static_cast<T>(bias(rng));
  }
  return MultiCodeGenerator<T>("linear", std::move(net), {2, 4}, latent_dim, 1);
}

/// Linear generator derived from a PCA dictionary: G1 scales a standard
/// normal code by the per-atom standard deviations, G2 maps atom
/// coefficients to mean + D v. Feature grid is (atoms, 1, 1).
template <typename T>
MultiCodeGenerator<T> make_pca_generator(const DictionaryPrior& dict) {
  const std::size_t k = dict.atoms(), p = dict.pixels();
  if (k == 0) throw DomainError("make_pca_generator: dictionary has no atoms");
  nn::Sequential<T> net;
  auto& l1 = net.add(nn::Linear<T>(k, k, false));
  net.add(nn::Reshape<T>(k, 1, 1));
  auto& l2 = net.add(nn::Linear<T>(k, p, true));
  net.add(nn::Reshape<T>(dict.shape.channels, dict.shape.height, dict.shape.width));
  for (std::size_t i = 0; i < k; ++i) {
    l1.weight()[i * k + i] = static_cast<T>(std::sqrt(std::max(dict.variances[static_cast<Eigen::Index>(i)], 0.0)));
  }
  for (std::size_t r = 0; r < p; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      l2.weight()[r * k + c] = static_cast<T>(dict.basis(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    l2.bias()[r] = static_cast<T>(dict.mean[static_cast<Eigen::Index>(r)]);
  }
  return MultiCodeGenerator<T>("pca", std::move(net), {2, 4}, k, 1);
}

/// Architecture of the small convolutional decoder.
struct ConvGeneratorConfig {
  std::size_t latent_dim = 32;
  std::size_t base_channels = 32;  // channels of the first feature grid
  std::size_t base_size = 4;       // spatial size of the first feature grid
  std::size_t image_size = 64;     // must be base_size * 2^k
  std::size_t image_channels = 3;
  std::size_t min_channels = 8;
  double leak = 0.2;
};

inline nlohmann::json to_json(const ConvGeneratorConfig& c) {
  return {{"latent_dim", c.latent_dim}, {"base_channels", c.base_channels}, {"base_size", c.base_size},
          {"image_size", c.image_size}, {"image_channels", c.image_channels},
          {"min_channels", c.min_channels}, {"leak", c.leak}};
}

inline ConvGeneratorConfig conv_generator_config_from_json(const nlohmann::json& j) {
  ConvGeneratorConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.base_size = j.value("base_size", c.base_size);
  c.image_size = j.value("image_size", c.image_size);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.min_channels = j.value("min_channels", c.min_channels);
  c.leak = j.value("leak", c.leak);
  return c;
}

/// Decoder blocks: [linear, reshape, lrelu], then per doubling
/// [upsample, conv3x3, lrelu], with the last block ending on a plain conv to
/// the image channels. Channel count halves per doubling down to
/// min_channels.
template <typename T>
MultiCodeGenerator<T> make_conv_generator(const ConvGeneratorConfig& cfg, std::uint64_t seed,
                                          std::size_t split_layer = 1) {
  std::size_t doublings = 0;
  for (std::size_t s = cfg.base_size; s < cfg.image_size; s *= 2) ++doublings;
  if (cfg.base_size << doublings != cfg.image_size || doublings == 0) {
    throw DomainError("make_conv_generator: image_size must be base_size times a power of two");
  }
  std::mt19937_64 rng(seed);
  nn::Sequential<T> net;
  std::vector<std::size_t> ends;
  const std::size_t f0 = cfg.base_channels * cfg.base_size * cfg.base_size;
  net.add(nn::Linear<T>(cfg.latent_dim, f0, true)).init_he(rng, 0.5);
  net.add(nn::Reshape<T>(cfg.base_channels, cfg.base_size, cfg.base_size));
  net.add(nn::LeakyRelu<T>(cfg.leak));
  ends.push_back(net.size());
  std::size_t ch = cfg.base_channels;
  for (std::size_t d = 0; d < doublings; ++d) {
    const bool last = d + 1 == doublings;
    const std::size_t out = last ? cfg.image_channels : std::max(cfg.min_channels, ch / 2);
    net.add(nn::Upsample2x<T>());
    net.add(nn::Conv2d<T>(ch, out, 3, true)).init_he(rng, last ? 0.5 : 1.0);
    if (!last) net.add(nn::LeakyRelu<T>(cfg.leak));
    ends.push_back(net.size());
    ch = out;
  }
  return MultiCodeGenerator<T>("conv", std::move(net), std::move(ends), cfg.latent_dim, split_layer);
}

template <typename T>
void save_generator(const std::filesystem::path& dir, const MultiCodeGenerator<T>& gen, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  nn::save_sequential(dir, "generator", gen.network());
  std::ofstream out(dir / "generator_header.json");
  out << nlohmann::json{{"name", gen.name()},
                        {"latent_dim", gen.latent_dim()},
                        {"split_layer", gen.split_layer()},
                        {"block_ends", gen.block_ends()},
                        {"seed", seed},
                        {"checksum", gen.parameter_checksum()}}
             .dump(2)
      << '\n';
}

template <typename T>
MultiCodeGenerator<T> load_generator(const std::filesystem::path& dir) {
  std::ifstream in(dir / "generator_header.json");
  if (!in) throw IoError("load_generator: missing header in " + dir.string());
  nlohmann::json j;
  in >> j;
  return MultiCodeGenerator<T>(j.at("name").get<std::string>(), nn::load_sequential<T>(dir, "generator"),
                               j.at("block_ends").get<std::vector<std::size_t>>(),
                               j.at("latent_dim").get<std::size_t>(), j.at("split_layer").get<std::size_t>());
}

}  // namespace bigprior::priors
