#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "bigprior/error.hpp"

namespace bigprior::experiments {

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

/// Scatter plot with the correlation coefficient in the title.
inline void write_scatter_svg(const std::filesystem::path& path, std::span<const double> xs, std::span<const double> ys,
                              const std::string& x_label, const std::string& y_label, double r) {
  if (xs.size() != ys.size() || xs.empty()) throw ShapeError("scatter plot: need equal, non-empty columns");
  constexpr double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;
  auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
  auto [ymin_it, ymax_it] = std::minmax_element(ys.begin(), ys.end());
  double x0 = *xmin_it, x1 = *xmax_it, y0 = *ymin_it, y1 = *ymax_it;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  using detail::fmt;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\">\n";
  s += "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + y_label + " vs " + x_label +
       " (r = " + fmt("%.3f", r) + ")</text>\n";
  s += "<line x1=\"60\" y1=\"310\" x2=\"460\" y2=\"310\" stroke=\"black\"/>\n";
  s += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"310\" stroke=\"black\"/>\n";
  s += "<text x=\"260\" y=\"345\" text-anchor=\"middle\" font-size=\"12\">" + x_label + " [" + fmt("%.3g", x0) +
       ", " + fmt("%.3g", x1) + "]</text>\n";
  s += "<text x=\"16\" y=\"175\" font-size=\"12\" transform=\"rotate(-90 16 175)\" text-anchor=\"middle\">" +
       y_label + " [" + fmt("%.3g", y0) + ", " + fmt("%.3g", y1) + "]</text>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += "<circle cx=\"" + fmt("%.2f", px(xs[i])) + "\" cy=\"" + fmt("%.2f", py(ys[i])) +
         "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  s += "</svg>\n";
  detail::write_text(path, s);
}

/// Bar chart of a histogram over [0, 1].
inline void write_histogram_svg(const std::filesystem::path& path, std::span<const std::size_t> counts,
                                const std::string& title) {
  if (counts.empty()) throw ShapeError("histogram plot: no bins");
  constexpr double L = 40, R = 20, T = 40, B = 40, W = 480, H = 300;
  const double peak = static_cast<double>(std::max<std::size_t>(1, *std::max_element(counts.begin(), counts.end())));
  const double bw = (W - L - R) / static_cast<double>(counts.size());
  using detail::fmt;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"300\">\n";
  s += "<rect width=\"480\" height=\"300\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double h = static_cast<double>(counts[i]) / peak * (H - T - B);
    s += "<rect x=\"" + fmt("%.2f", L + bw * static_cast<double>(i)) + "\" y=\"" + fmt("%.2f", H - B - h) +
         "\" width=\"" + fmt("%.2f", bw) + "\" height=\"" + fmt("%.2f", h) + "\" fill=\"darkorange\"/>\n";
  }
  s += "<line x1=\"40\" y1=\"260\" x2=\"460\" y2=\"260\" stroke=\"black\"/>\n";
  s += "<text x=\"40\" y=\"278\" font-size=\"12\">0</text>\n";
  s += "<text x=\"460\" y=\"278\" font-size=\"12\" text-anchor=\"end\">1</text>\n";
  s += "</svg>\n";
  detail::write_text(path, s);
}

}  // namespace bigprior::experiments
