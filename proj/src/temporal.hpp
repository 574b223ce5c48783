// SPDX-License-Identifier: Apache-2.0
//
// Automatic contrast-peak detection over per-slice statistics and the
// fixed-length temporal window extraction. The peak is found by two-way
// k-means over (mean, std) of the brain-masked signal per time slice; the
// bolus cluster is the one holding the lowest mean, and the peak is the
// earliest argmin inside it.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace pwtk {

inline constexpr int kDefaultWindowLength = 26;

struct SliceStats {
  std::vector<double> mean;  // brain-masked mean per time index
  std::vector<double> stddev;  // population standard deviation
};

struct TemporalWindow {
  std::array<std::size_t, 4> source_dims{};
  int peak_index = 0;
  int start = 0;
  int length = kDefaultWindowLength;
  Volume4 data;  // the selected slices
};

SliceStats slice_stats(const Volume4& pwi, const Volume3& brain_mask);

struct KmeansResult {
  std::vector<int> assignments;
  std::vector<std::array<double, 2>> centroids;
};

// Lloyd's algorithm with k-means++ seeding; callers are expected to pass
// standardized features. Empty clusters are reseeded to the farthest point.
KmeansResult kmeans(const std::vector<std::array<double, 2>>& points, int k, SeededRng rng, int max_iter = 100);

int detect_peak(const SliceStats& stats, SeededRng rng);

TemporalWindow extract_window(const Volume4& pwi, int peak_index, int length = kDefaultWindowLength);

}  // namespace pwtk
