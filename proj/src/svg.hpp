// SPDX-License-Identifier: Apache-2.0
//
// Dependency-free SVG emitters for the two report figures: the
// Hausdorff-versus-Dice scatter (one point per method; closer to the x axis
// and further from the origin is better) and the NMI heatmap.
#pragma once

#include <string>
#include <vector>

#include "metrics.hpp"

namespace pwtk {

struct ScatterPoint {
  std::string label;
  double dice = 0.0;
  double hausdorff = 0.0;
};

std::string svg_hd_vs_dice(const std::vector<ScatterPoint>& points);
std::string svg_nmi_heatmap(const NmiMatrix& matrix);

}  // namespace pwtk
