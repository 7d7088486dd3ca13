#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "bigprior/error.hpp"
#include "bigprior/image.hpp"

namespace bigprior {

/// Dense row-major n-dimensional array.
template <typename T>
struct NdArray {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  friend bool operator==(const NdArray&, const NdArray&) = default;
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else {
    static_assert(std::is_same_v<T, double>, "portable arrays hold f32 or f64");
    return "f64";
  }
}

template <typename U>
U byteswap_bits(U v) {
  U out = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
  }
  return out;
}

template <typename T>
void to_little_endian(std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (auto& v : values) v = std::bit_cast<T>(byteswap_bits(std::bit_cast<U>(v)));
  }
}

}  // namespace detail

/// Writes `PFAF1 <ndim> <d0> ... <f32|f64> LE\n` followed by the raw
/// little-endian payload.
template <typename T>
void save_array(const std::filesystem::path& path, const NdArray<T>& array) {
  if (array.element_count() != array.data.size()) {
    throw ShapeError("save_array: payload does not match shape");
  }
  for (T v : array.data) {
    if (!std::isfinite(v)) throw DomainError("save_array: non-finite entry in " + path.string());
  }
  std::ostringstream header;
  header << "PFAF1 " << array.shape.size();
  for (auto d : array.shape) header << ' ' << d;
  header << ' ' << detail::dtype_name<T>() << " LE\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_array: cannot open " + path.string());
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::vector<T> payload = array.data;
  detail::to_little_endian(payload);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(T)));
  if (!out) throw IoError("save_array: write failed for " + path.string());
}

/// Reads a portable float array. f32 files can be loaded as f64 (widening);
/// f64 files loaded as f32 are rejected.
template <typename T>
NdArray<T> load_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_array: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("load_array: missing header in " + path.string());
  std::istringstream header(line);
  std::string magic;
  std::size_t ndim = 0;
  header >> magic >> ndim;
  if (magic != "PFAF1" || !header) throw IoError("load_array: bad magic in " + path.string());
  NdArray<T> out;
  out.shape.resize(ndim);
  for (auto& d : out.shape) {
    if (!(header >> d)) throw IoError("load_array: truncated shape in " + path.string());
  }
  std::string dtype, endian;
  header >> dtype >> endian;
  if (endian != "LE") throw IoError("load_array: unsupported endianness '" + endian + "'");
  std::string rest;
  if (header >> rest) throw IoError("load_array: trailing header tokens in " + path.string());

  const std::size_t count = out.element_count();
  auto read_payload = [&]<typename S>(std::vector<S>& buf) {
    buf.resize(count);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(S)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(S)) {
      throw IoError("load_array: truncated payload in " + path.string());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
      throw IoError("load_array: payload longer than header declares in " + path.string());
    }
    detail::to_little_endian(buf);
  };

  if (dtype == detail::dtype_name<T>()) {
    read_payload(out.data);
  } else if (dtype == "f32" && std::is_same_v<T, double>) {
    std::vector<float> narrow;
    read_payload(narrow);
    out.data.assign(narrow.begin(), narrow.end());
  } else {
    throw IoError("load_array: header dtype '" + dtype + "' does not match requested " +
                  detail::dtype_name<T>());
  }
  return out;
}

inline NdArray<float> to_array(const Grid& g) {
  return {{g.channels(), g.height(), g.width()}, g.storage()};
}

inline Grid to_grid(NdArray<float> a) {
  if (a.shape.size() != 3) throw ShapeError("to_grid: expected a 3-d array");
  return Grid({a.shape[0], a.shape[1], a.shape[2]}, std::move(a.data));
}

inline void save_grid(const std::filesystem::path& path, const Grid& g) {
  save_array(path, to_array(g));
}

inline Grid load_grid(const std::filesystem::path& path) {
  return to_grid(load_array<float>(path));
}

}  // namespace bigprior
