// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics on binarized predictions: Dice, precision, recall,
// plus surface Hausdorff and average symmetric surface distance in
// millimetres (6-connectivity surfaces, exact anisotropic Euclidean
// distance transform), and histogram-based normalized mutual information.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace pwtk {

Volume3 binarize(const Volume3& prob, double threshold = 0.5);

double dice_binary(const Volume3& a, const Volume3& b);
double precision_binary(const Volume3& pred, const Volume3& truth);
double recall_binary(const Volume3& pred, const Volume3& truth);

struct SurfaceDistances {
  double hausdorff_mm = 0.0;
  double assd_mm = 0.0;
};

// Errors with ErrKind::mask when either mask is empty (distances undefined).
SurfaceDistances surface_distances(const Volume3& a, const Volume3& b);

// Mask voxels with at least one 6-neighbor outside the mask (out-of-bounds
// counts as outside). Returns flat voxel indices.
std::vector<std::size_t> surface_voxels(const Tensor& mask);

// NMI = 2 I(X;Y) / (H(X) + H(Y)) from an equal-width joint histogram over
// each variable's observed range; entropies in nats; clamped to [0,1];
// 0 by convention when H(X) + H(Y) = 0.
double nmi(const std::vector<float>& x, const std::vector<float>& y, int bins = 64);

struct CaseMetrics {
  std::string case_id;
  double dice = 0.0;
  std::optional<double> hausdorff_mm;
  std::optional<double> assd_mm;
  double precision = 0.0;
  double recall = 0.0;
};

struct MetricsReport {
  std::vector<CaseMetrics> rows;
  // Aggregates: mean and sample standard deviation per column; cases with
  // undefined distances are excluded from the distance aggregates.
  double mean_dice = 0.0, sd_dice = 0.0;
  double mean_hd = 0.0, sd_hd = 0.0;
  double mean_assd = 0.0, sd_assd = 0.0;
  double mean_precision = 0.0, sd_precision = 0.0;
  double mean_recall = 0.0, sd_recall = 0.0;
  std::size_t distance_cases = 0;  // rows contributing to distance aggregates
};

CaseMetrics evaluate_case(const std::string& case_id, const Volume3& pred_mask, const Volume3& gt_mask);
MetricsReport aggregate(std::vector<CaseMetrics> rows);

std::string metrics_csv(const MetricsReport& report);
MetricsReport parse_metrics_csv(const std::string& text);

struct NmiMatrix {
  std::vector<std::string> feature_names;  // rows
  std::vector<std::string> map_names;      // columns
  std::vector<double> values;              // row-major
  int bins = 64;

  double at(std::size_t r, std::size_t c) const { return values[r * map_names.size() + c]; }
};

std::string nmi_csv(const NmiMatrix& m);

}  // namespace pwtk
