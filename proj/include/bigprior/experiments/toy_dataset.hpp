#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior::experiments {

/// Procedural 8-bit scene: a two-color linear gradient background with a
/// few solid rectangles and ellipses on top. Scene `index` of a given seed is
/// always the same image.
inline Image toy_scene(std::size_t size, std::uint64_t seed, std::size_t index) {
  if (size < 4) throw DomainError("toy_scene: size must be at least 4");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto color = [&] { return std::array<double, 3>{u(rng), u(rng), u(rng)}; };

  const double n = static_cast<double>(size);
  Grid g({3, size, size});
  const auto c0 = color(), c1 = color();
  const double angle = u(rng) * 2.0 * 3.141592653589793;
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double t = std::clamp(0.5 + ((x + 0.5) / n - 0.5) * dx + ((y + 0.5) / n - 0.5) * dy, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) g.at(c, y, x) = static_cast<float>((1 - t) * c0[c] + t * c1[c]);
    }
  }
  const int shapes = std::uniform_int_distribution<int>(2, 5)(rng);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = u(rng) < 0.5;
    const double cx = u(rng) * n, cy = u(rng) * n;
    const double rx = (0.08 + 0.25 * u(rng)) * n, ry = (0.08 + 0.25 * u(rng)) * n;
    const auto col = color();
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double px = (x + 0.5 - cx) / rx, py = (y + 0.5 - cy) / ry;
        const bool inside = ellipse ? px * px + py * py <= 1.0 : std::abs(px) <= 1.0 && std::abs(py) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) g.at(c, y, x) = static_cast<float>(col[c]);
      }
    }
  }
  for (auto& v : g.data()) v = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f);
  return Image(std::move(g), ValueRange::raw255, ColorSpace::rgb);
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded disjoint split: a permutation of [0, count) cut at
/// round(train_fraction * count); the test part takes the next
/// round(test_fraction * count) indices. Each part is sorted.
inline Split split_indices(std::size_t count, double train_fraction, double test_fraction, std::uint64_t seed) {
  if (count == 0) throw DomainError("split: empty dataset");
  if (!(train_fraction > 0.0) || !(test_fraction > 0.0) || train_fraction + test_fraction > 1.0 + 1e-12) {
    throw DomainError("split: fractions must be positive and sum to at most 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(count)));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(count)));
  if (n_train == 0 || n_test == 0 || n_train + n_test > count) {
    throw DomainError("split: fractions leave an empty or overlapping split");
  }
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(perm.begin(), perm.end(), rng);
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace bigprior::experiments
