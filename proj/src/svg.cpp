// SPDX-License-Identifier: Apache-2.0
#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pwtk {

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string svg_hd_vs_dice(const std::vector<ScatterPoint>& points) {
  const int W = 640, H = 480, ml = 60, mr = 20, mt = 20, mb = 50;
  double max_d = 0.5, max_h = 10.0;
  for (const auto& p : points) {
    max_d = std::max(max_d, p.dice * 1.15);
    max_h = std::max(max_h, p.hausdorff * 1.15);
  }
  max_d = std::min(max_d, 1.0);

  auto px = [&](double dice) { return ml + dice / max_d * (W - ml - mr); };
  auto py = [&](double hd) { return H - mb - hd / max_h * (H - mt - mb); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" +
       std::to_string(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(H - mb) + "\" x2=\"" +
       std::to_string(W - mr) + "\" y2=\"" + std::to_string(H - mb) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + std::to_string(ml) + "\" y1=\"" + std::to_string(mt) + "\" x2=\"" + std::to_string(ml) +
       "\" y2=\"" + std::to_string(H - mb) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double d = max_d * i / 5.0, h = max_h * i / 5.0;
    s += "<text x=\"" + num(px(d)) + "\" y=\"" + std::to_string(H - mb + 18) +
         "\" font-size=\"11\" text-anchor=\"middle\">" + num(d) + "</text>\n";
    s += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + num(py(h) + 4) +
         "\" font-size=\"11\" text-anchor=\"end\">" + num(h) + "</text>\n";
  }
  s += "<text x=\"" + std::to_string((W + ml - mr) / 2) + "\" y=\"" + std::to_string(H - 12) +
       "\" font-size=\"13\" text-anchor=\"middle\">Dice</text>\n";
  s += "<text x=\"16\" y=\"" + std::to_string((H + mt - mb) / 2) +
       "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       std::to_string((H + mt - mb) / 2) + ")\">Hausdorff distance (mm)</text>\n";

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  int ci = 0;
  for (const auto& p : points) {
    const std::string col = colors[ci++ % 6];
    s += "<circle cx=\"" + num(px(p.dice)) + "\" cy=\"" + num(py(p.hausdorff)) + "\" r=\"5\" fill=\"" + col +
         "\"/>\n";
    s += "<text x=\"" + num(px(p.dice) + 8) + "\" y=\"" + num(py(p.hausdorff) - 6) + "\" font-size=\"12\">" +
         p.label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string svg_nmi_heatmap(const NmiMatrix& m) {
  const int cell = 42, ml = 110, mt = 40, legend = 60;
  const int cols = static_cast<int>(m.map_names.size());
  const int rows = static_cast<int>(m.feature_names.size());
  const int W = ml + cols * cell + legend + 30, H = mt + rows * cell + 30;

  auto color = [](double v) {
    // white -> blue ramp over [0,1]
    const int r = static_cast<int>(255 * (1.0 - v));
    const int g = static_cast<int>(255 * (1.0 - 0.6 * v));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02xff", r, g);
    return std::string(buf);
  };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" +
       std::to_string(H) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int c = 0; c < cols; ++c) {
    s += "<text x=\"" + std::to_string(ml + c * cell + cell / 2) + "\" y=\"" + std::to_string(mt - 10) +
         "\" font-size=\"12\" text-anchor=\"middle\">" + m.map_names[static_cast<std::size_t>(c)] + "</text>\n";
  }
  for (int r = 0; r < rows; ++r) {
    s += "<text x=\"" + std::to_string(ml - 8) + "\" y=\"" + std::to_string(mt + r * cell + cell / 2 + 4) +
         "\" font-size=\"12\" text-anchor=\"end\">" + m.feature_names[static_cast<std::size_t>(r)] + "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = m.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      s += "<rect x=\"" + std::to_string(ml + c * cell) + "\" y=\"" + std::to_string(mt + r * cell) +
           "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
           color(v) + "\" stroke=\"#ddd\"/>\n";
      s += "<text x=\"" + std::to_string(ml + c * cell + cell / 2) + "\" y=\"" +
           std::to_string(mt + r * cell + cell / 2 + 4) + "\" font-size=\"10\" text-anchor=\"middle\">" + num(v) +
           "</text>\n";
    }
  }
  // legend
  const int lx = ml + cols * cell + 20;
  for (int i = 0; i < 100; ++i) {
    const double v = 1.0 - i / 99.0;
    s += "<rect x=\"" + std::to_string(lx) + "\" y=\"" + std::to_string(mt + i * rows * cell / 100) +
         "\" width=\"14\" height=\"" + std::to_string(rows * cell / 100 + 1) + "\" fill=\"" + color(v) + "\"/>\n";
  }
  s += "<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(mt + 10) + "\" font-size=\"11\">1</text>\n";
  s += "<text x=\"" + std::to_string(lx + 18) + "\" y=\"" + std::to_string(mt + rows * cell) +
       "\" font-size=\"11\">0</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace pwtk
