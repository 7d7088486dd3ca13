#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior::nn {

/// Batch of channel-major feature maps, layout (n, c, h, w).
template <typename T>
struct Tensor {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t n_, std::size_t c_, std::size_t h_, std::size_t w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(n_ * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return c * h * w; }
  std::size_t plane() const { return h * w; }
  Shape3 sample_shape() const { return {c, h, w}; }

  T& at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) {
    return data[((i * c + ch) * h + y) * w + x];
  }
  T at(std::size_t i, std::size_t ch, std::size_t y, std::size_t x) const {
    return data[((i * c + ch) * h + y) * w + x];
  }
  std::span<T> sample(std::size_t i) {
    return std::span<T>(data).subspan(i * sample_size(), sample_size());
  }
  std::span<const T> sample(std::size_t i) const {
    return std::span<const T>(data).subspan(i * sample_size(), sample_size());
  }
  T* plane_ptr(std::size_t i, std::size_t ch) { return data.data() + (i * c + ch) * plane(); }
  const T* plane_ptr(std::size_t i, std::size_t ch) const {
    return data.data() + (i * c + ch) * plane();
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  return std::to_string(t.n) + "x" + std::to_string(t.c) + "x" + std::to_string(t.h) + "x" +
         std::to_string(t.w);
}

/// Stacks equally shaped grids into a batch.
template <typename T>
Tensor<T> stack(std::span<const Grid* const> grids) {
  if (grids.empty()) return {};
  const Shape3 s = grids.front()->shape();
  Tensor<T> out(grids.size(), s.channels, s.height, s.width);
  for (std::size_t i = 0; i < grids.size(); ++i) {
    require_same_shape(grids[i]->shape(), s, "stack");
    auto dst = out.sample(i);
    auto src = grids[i]->data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<T>(src[k]);
  }
  return out;
}

template <typename T>
Tensor<T> from_grid(const Grid& g) {
  const Grid* p = &g;
  return stack<T>(std::span<const Grid* const>(&p, 1));
}

template <typename T>
Grid to_grid(const Tensor<T>& t, std::size_t i = 0) {
  Grid g({t.c, t.h, t.w});
  auto src = t.sample(i);
  for (std::size_t k = 0; k < src.size(); ++k) g.data()[k] = static_cast<float>(src[k]);
  return g;
}

}  // namespace bigprior::nn
