#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "bigprior/array_io.hpp"
#include "bigprior/nn/layers.hpp"

namespace bigprior::nn {

/// Ordered chain of layers with value semantics (copies deep-clone layers).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& o) { *this = o; }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      layers_.clear();
      for (const auto& l : o.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(L layer) {
    auto p = std::make_unique<L>(std::move(layer));
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }
  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }

  /// Runs layers [first, last).
  Tensor<T> forward(const Tensor<T>& x, std::vector<Cache<T>>* caches, bool training,
                    std::size_t first = 0, std::size_t last = SIZE_MAX) const {
    last = std::min(last, layers_.size());
    if (caches) caches->assign(last - first, Cache<T>{});
    Tensor<T> h = x;
    for (std::size_t i = first; i < last; ++i) {
      h = layers_[i]->forward(h, caches ? &(*caches)[i - first] : nullptr, training);
    }
    return h;
  }

  /// Back-propagates through layers [first, last) using the caches of the
  /// matching forward call; `grads` (one entry per layer in the range) may be
  /// null.
  Tensor<T> backward(const std::vector<Cache<T>>& caches, const Tensor<T>& grad_out,
                     std::vector<ParamGrads<T>>* grads, std::size_t first = 0,
                     std::size_t last = SIZE_MAX) const {
    last = std::min(last, layers_.size());
    Tensor<T> g = grad_out;
    for (std::size_t i = last; i-- > first;) {
      g = layers_[i]->backward(caches[i - first], g, grads ? &(*grads)[i - first] : nullptr);
    }
    return g;
  }

  std::vector<ParamGrads<T>> zero_grads() const {
    std::vector<ParamGrads<T>> g;
    for (const auto& l : layers_) g.push_back(zero_grads_like(*l));
    return g;
  }

  void update_buffers(const std::vector<Cache<T>>& caches) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->update_buffers(caches[i]);
  }

  std::vector<std::vector<T>*> parameters() {
    std::vector<std::vector<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->parameters()) out.push_back(p);
    }
    return out;
  }
  std::vector<const std::vector<T>*> parameters() const {
    std::vector<const std::vector<T>*> out;
    for (const auto& l : layers_) {
      for (const auto* p : static_cast<const Layer<T>&>(*l).parameters()) out.push_back(p);
    }
    return out;
  }
  std::vector<std::vector<T>*> buffers() {
    std::vector<std::vector<T>*> out;
    for (auto& l : layers_) {
      for (auto* p : l->buffers()) out.push_back(p);
    }
    return out;
  }
  std::vector<const std::vector<T>*> buffers() const {
    std::vector<const std::vector<T>*> out;
    for (const auto& l : layers_) {
      for (const auto* p : static_cast<const Layer<T>&>(*l).buffers()) out.push_back(p);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
  }

  nlohmann::json config() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& l : layers_) arr.push_back(l->config());
    return arr;
  }

  static Sequential from_config(const nlohmann::json& cfg) {
    Sequential s;
    for (const auto& c : cfg) s.add(make_layer<T>(c));
    return s;
  }

  /// Same architecture and values in another scalar type.
  template <typename U>
  Sequential<U> cast() const {
    auto out = Sequential<U>::from_config(config());
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->assign(src[i]->begin(), src[i]->end());
    auto dbuf = out.buffers();
    auto sbuf = buffers();
    for (std::size_t i = 0; i < sbuf.size(); ++i) dbuf[i]->assign(sbuf[i]->begin(), sbuf[i]->end());
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// FNV-1a over the bit patterns of every parameter and buffer.
template <typename T>
std::uint64_t checksum(const Sequential<T>& net) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::vector<T>& v) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto* p : net.parameters()) mix(*p);
  for (const auto* b : net.buffers()) mix(*b);
  return h;
}

/// Persists `net` as `<stem>.json` (layer configs) plus one portable array per
/// parameter and buffer (`<stem>.p<i>.pfaf`, `<stem>.b<i>.pfaf`).
template <typename T>
void save_sequential(const std::filesystem::path& dir, const std::string& stem, const Sequential<T>& net) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / (stem + ".json"));
    if (!out) throw IoError("save_sequential: cannot write " + (dir / (stem + ".json")).string());
    out << nlohmann::json{{"layers", net.config()}}.dump(2) << '\n';
  }
  std::size_t i = 0;
  for (const auto* p : net.parameters()) {
    save_array(dir / (stem + ".p" + std::to_string(i++) + ".pfaf"), NdArray<T>{{p->size()}, *p});
  }
  i = 0;
  for (const auto* b : net.buffers()) {
    save_array(dir / (stem + ".b" + std::to_string(i++) + ".pfaf"), NdArray<T>{{b->size()}, *b});
  }
}

template <typename T>
Sequential<T> load_sequential(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream in(dir / (stem + ".json"));
  if (!in) throw IoError("load_sequential: cannot read " + (dir / (stem + ".json")).string());
  nlohmann::json j;
  in >> j;
  auto net = Sequential<T>::from_config(j.at("layers"));
  std::size_t i = 0;
  for (auto* p : net.parameters()) {
    auto a = load_array<T>(dir / (stem + ".p" + std::to_string(i++) + ".pfaf"));
    if (a.data.size() != p->size()) throw IoError("load_sequential: parameter size mismatch");
    *p = std::move(a.data);
  }
  i = 0;
  for (auto* b : net.buffers()) {
    auto a = load_array<T>(dir / (stem + ".b" + std::to_string(i++) + ".pfaf"));
    if (a.data.size() != b->size()) throw IoError("load_sequential: buffer size mismatch");
    *b = std::move(a.data);
  }
  return net;
}

}  // namespace bigprior::nn
