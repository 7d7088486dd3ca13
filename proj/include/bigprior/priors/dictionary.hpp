#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "bigprior/array_io.hpp"
#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior::priors {

/// Affine subspace prior: mean + span of orthonormal atoms.
struct DictionaryPrior {
  Eigen::MatrixXd basis;  // pixels x atoms, orthonormal columns
  Eigen::VectorXd mean;   // pixels
  Eigen::VectorXd variances;  // per-atom variance of the training coefficients
  Shape3 shape;
  ValueRange range = ValueRange::centered;
  ColorSpace space = ColorSpace::rgb;

  std::size_t atoms() const { return static_cast<std::size_t>(basis.cols()); }
  std::size_t pixels() const { return shape.size(); }

  /// Max |D^T D - I|; zero up to round-off for a valid prior.
  double orthonormality_error() const {
    if (basis.cols() == 0) return 0.0;
    const Eigen::MatrixXd gram = basis.transpose() * basis;
    return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  }
};

inline Eigen::VectorXd flatten(const Image& img) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(img.data().size()));
  for (std::size_t i = 0; i < img.data().size(); ++i) v[static_cast<Eigen::Index>(i)] = img.data()[i];
  return v;
}

/// Fits mean and the leading `atoms` principal directions of the centered,
/// flattened images. atoms = 0 yields a mean-only prior.
inline DictionaryPrior fit_dictionary(std::span<const Image> images, std::size_t atoms) {
  if (images.empty() || images.size() < atoms) {
    throw DomainError("fit_dictionary: need at least " + std::to_string(std::max<std::size_t>(atoms, 1)) +
                      " images, got " + std::to_string(images.size()));
  }
  const Image& first = images.front();
  const auto n = static_cast<Eigen::Index>(images.size());
  const auto p = static_cast<Eigen::Index>(first.shape().size());
  if (atoms > static_cast<std::size_t>(p)) throw DomainError("fit_dictionary: more atoms than pixels");

  Eigen::MatrixXd data(p, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require_same_shape(images[static_cast<std::size_t>(j)].shape(), first.shape(), "fit_dictionary");
    data.col(j) = flatten(images[static_cast<std::size_t>(j)]);
  }
  DictionaryPrior prior;
  prior.shape = first.shape();
  prior.range = first.value_range();
  prior.space = first.color_space();
  prior.mean = data.rowwise().mean();
  data.colwise() -= prior.mean;

  if (atoms == 0) {
    prior.basis = Eigen::MatrixXd(p, 0);
    prior.variances = Eigen::VectorXd(0);
    return prior;
  }

  // Eigen-decompose whichever Gram matrix is smaller.
  Eigen::MatrixXd directions;
  Eigen::VectorXd eigenvalues;
  if (n <= p) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(data.transpose() * data);
    eigenvalues = es.eigenvalues().reverse();
    directions = data * es.eigenvectors().rowwise().reverse();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(data * data.transpose());
    eigenvalues = es.eigenvalues().reverse();
    directions = es.eigenvectors().rowwise().reverse();
  }
  const double top = eigenvalues.size() > 0 ? eigenvalues[0] : 0.0;
  Eigen::Index rank = 0;
  while (rank < eigenvalues.size() && eigenvalues[rank] > 1e-9 * std::max(top, 1e-300) && top > 1e-20) ++rank;
  if (rank == 0) throw DomainError("fit_dictionary: degenerate dataset (all images identical), rank 0");
  if (static_cast<Eigen::Index>(atoms) > rank) {
    throw DomainError("fit_dictionary: requested " + std::to_string(atoms) +
                      " atoms but the data has rank " + std::to_string(rank));
  }
  const auto k = static_cast<Eigen::Index>(atoms);
  prior.basis = directions.leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) prior.basis.col(j).normalize();
  // One Gram-Schmidt pass removes round-off from the normalization.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(prior.basis);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    if (q.col(j).dot(prior.basis.col(j)) < 0) q.col(j) *= -1.0;
  }
  prior.basis = q;
  prior.variances = eigenvalues.head(k) / static_cast<double>(n);
  return prior;
}

/// Euclidean projection of y onto the dictionary's affine span. With `topk`,
/// only the topk largest-magnitude coefficients are kept.
inline Image project_dictionary(const DictionaryPrior& prior, const Image& y,
                                std::optional<std::size_t> topk = std::nullopt) {
  require_same_shape(y.shape(), prior.shape, "project_dictionary");
  if (topk && *topk > prior.atoms()) {
    throw DomainError("project_dictionary: topk " + std::to_string(*topk) + " exceeds atom count " +
                      std::to_string(prior.atoms()));
  }
  Eigen::VectorXd v = prior.basis.transpose() * (flatten(y) - prior.mean);
  if (topk && *topk < prior.atoms()) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(v.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return std::abs(v[a]) > std::abs(v[b]); });
    for (std::size_t i = *topk; i < order.size(); ++i) v[order[i]] = 0.0;
  }
  const Eigen::VectorXd out = prior.basis * v + prior.mean;
  Grid g(y.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = static_cast<float>(out[static_cast<Eigen::Index>(i)]);
  return Image(std::move(g), y.value_range(), y.color_space());
}

inline void save_dictionary(const std::filesystem::path& dir, const DictionaryPrior& prior) {
  std::filesystem::create_directories(dir);
  NdArray<double> basis{{static_cast<std::size_t>(prior.basis.rows()), prior.atoms()}, {}};
  basis.data.resize(basis.element_count());
  for (Eigen::Index r = 0; r < prior.basis.rows(); ++r) {
    for (Eigen::Index c = 0; c < prior.basis.cols(); ++c) {
      basis.data[static_cast<std::size_t>(r) * prior.atoms() + static_cast<std::size_t>(c)] = prior.basis(r, c);
    }
  }
  save_array(dir / "basis.pfaf", basis);
  save_array(dir / "mean.pfaf", NdArray<double>{{prior.pixels()}, {prior.mean.begin(), prior.mean.end()}});
  save_array(dir / "variances.pfaf",
             NdArray<double>{{prior.atoms()}, {prior.variances.begin(), prior.variances.end()}});
  std::ofstream out(dir / "dictionary.json");
  out << nlohmann::json{{"kind", "dictionary"},
                        {"atoms", prior.atoms()},
                        {"shape", {prior.shape.channels, prior.shape.height, prior.shape.width}},
                        {"range", to_string(prior.range)},
                        {"colorspace", to_string(prior.space)}}
             .dump(2)
      << '\n';
}

inline DictionaryPrior load_dictionary(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dictionary.json");
  if (!in) throw IoError("load_dictionary: missing " + (dir / "dictionary.json").string());
  nlohmann::json j;
  in >> j;
  DictionaryPrior prior;
  const auto s = j.at("shape");
  prior.shape = {s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()};
  prior.range = j.at("range") == to_string(ValueRange::raw255) ? ValueRange::raw255
                : j.at("range") == to_string(ValueRange::unit) ? ValueRange::unit
                                                               : ValueRange::centered;
  prior.space = j.at("colorspace") == "Gray" ? ColorSpace::gray : ColorSpace::rgb;
  const auto atoms = j.at("atoms").get<std::size_t>();
  auto basis = load_array<double>(dir / "basis.pfaf");
  auto mean = load_array<double>(dir / "mean.pfaf");
  auto vars = load_array<double>(dir / "variances.pfaf");
  if (basis.shape.size() != 2 || basis.shape[0] != prior.pixels() || basis.shape[1] != atoms ||
      mean.data.size() != prior.pixels() || vars.data.size() != atoms) {
    throw IoError("load_dictionary: header does not match arrays in " + dir.string());
  }
  prior.basis.resize(static_cast<Eigen::Index>(prior.pixels()), static_cast<Eigen::Index>(atoms));
  for (std::size_t r = 0; r < prior.pixels(); ++r) {
    for (std::size_t c = 0; c < atoms; ++c) {
      prior.basis(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = basis.data[r * atoms + c];
    }
  }
  prior.mean = Eigen::Map<Eigen::VectorXd>(mean.data.data(), static_cast<Eigen::Index>(mean.data.size()));
  prior.variances = Eigen::Map<Eigen::VectorXd>(vars.data.data(), static_cast<Eigen::Index>(vars.data.size()));
  return prior;
}

}  // namespace bigprior::priors
