// SPDX-License-Identifier: Apache-2.0
#include "temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pwtk {

SliceStats slice_stats(const Volume4& pwi, const Volume3& brain_mask) {
  require(brain_mask.values.dims() == std::vector<std::size_t>{pwi.nz(), pwi.ny(), pwi.nx()}, ErrKind::shape,
          "brain mask dims must match the PWI spatial dims");
  const std::size_t nvox = pwi.nz() * pwi.ny() * pwi.nx();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < nvox; ++i) {
    if (brain_mask.values[i] > 0.0f) idx.push_back(i);
  }
  require(!idx.empty(), ErrKind::mask, "brain mask is empty");

  SliceStats out;
  const std::size_t T = pwi.nt();
  out.mean.resize(T);
  out.stddev.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const float* slice = pwi.values.data() + t * nvox;
    double sum = 0.0;
    for (auto i : idx) sum += slice[i];
    const double mean = sum / static_cast<double>(idx.size());
    double ss = 0.0;
    for (auto i : idx) {
      const double d = slice[i] - mean;
      ss += d * d;
    }
    out.mean[t] = mean;
    out.stddev[t] = std::sqrt(ss / static_cast<double>(idx.size()));
  }
  return out;
}

namespace {

double sq_dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::array<double, 2>>& points, int k, SeededRng rng, int max_iter) {
  require(k >= 1, ErrKind::parameter, "k must be >= 1");
  const std::size_t n = points.size();
  require(n >= static_cast<std::size_t>(k), ErrKind::parameter, "fewer points than clusters");

  // k-means++ seeding.
  std::vector<std::array<double, 2>> centroids;
  centroids.push_back(points[rng.uniform_index(n)]);
  std::vector<double> d2(n);
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(n);  // all points coincide with a centroid
    }
    centroids.push_back(points[pick]);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }

    std::vector<std::array<double, 2>> sums(k, {0.0, 0.0});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums[assign[i]][0] += points[i][0];
      sums[assign[i]][1] += points[i][1];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed an empty cluster to the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sq_dist(points[i], centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[c] = points[far];
        changed = true;
      } else {
        centroids[c] = {sums[c][0] / counts[c], sums[c][1] / counts[c]};
      }
    }
    if (!changed) break;
  }
  return {std::move(assign), std::move(centroids)};
}

int detect_peak(const SliceStats& stats, SeededRng rng) {
  const std::size_t T = stats.mean.size();
  require(T >= 4, ErrKind::parameter, "peak detection needs at least 4 time slices");
  require(stats.stddev.size() == T, ErrKind::shape, "slice stats length mismatch");

  // Standardize both features; a zero-variance feature carries no
  // information and collapses to zero.
  std::array<double, 2> mu{0.0, 0.0}, sd{0.0, 0.0};
  for (std::size_t t = 0; t < T; ++t) {
    mu[0] += stats.mean[t];
    mu[1] += stats.stddev[t];
  }
  mu[0] /= T;
  mu[1] /= T;
  for (std::size_t t = 0; t < T; ++t) {
    sd[0] += (stats.mean[t] - mu[0]) * (stats.mean[t] - mu[0]);
    sd[1] += (stats.stddev[t] - mu[1]) * (stats.stddev[t] - mu[1]);
  }
  sd[0] = std::sqrt(sd[0] / T);
  sd[1] = std::sqrt(sd[1] / T);
  // Variance below rounding noise counts as constant.
  const double tol0 = 1e-9 * std::max(1.0, std::abs(mu[0]));
  const double tol1 = 1e-9 * std::max(1.0, std::abs(mu[1]));
  const bool flat0 = sd[0] <= tol0, flat1 = sd[1] <= tol1;
  require(!flat0 || !flat1, ErrKind::degenerate, "degenerate signal: slice statistics are constant");

  std::vector<std::array<double, 2>> pts(T);
  for (std::size_t t = 0; t < T; ++t) {
    pts[t] = {flat0 ? 0.0 : (stats.mean[t] - mu[0]) / sd[0],
              flat1 ? 0.0 : (stats.stddev[t] - mu[1]) / sd[1]};
  }

  const KmeansResult km = kmeans(pts, 2, rng.split("kmeans"));

  // The bolus cluster holds the lowest mean; the peak is the earliest
  // argmin of the mean within it.
  int bolus = 0;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < T; ++t) {
    if (stats.mean[t] < lowest) {
      lowest = stats.mean[t];
      bolus = km.assignments[t];
    }
  }
  int peak = -1;
  for (std::size_t t = 0; t < T; ++t) {
    if (km.assignments[t] != bolus) continue;
    if (peak < 0 || stats.mean[t] < stats.mean[peak]) peak = static_cast<int>(t);
  }
  return peak;
}

TemporalWindow extract_window(const Volume4& pwi, int peak_index, int length) {
  const std::size_t T = pwi.nt();
  require(length >= 2, ErrKind::parameter, "window length must be >= 2");
  require(T >= static_cast<std::size_t>(length), ErrKind::data,
          "insufficient acquisitions: need at least " + std::to_string(length) + " time slices");
  require(peak_index >= 0 && static_cast<std::size_t>(peak_index) < T, ErrKind::parameter,
          "peak index out of range");

  int start = peak_index - length / 2;
  start = std::clamp(start, 0, static_cast<int>(T) - length);

  TemporalWindow w;
  w.source_dims = {pwi.nt(), pwi.nz(), pwi.ny(), pwi.nx()};
  w.peak_index = peak_index;
  w.start = start;
  w.length = length;

  const std::size_t nvox = pwi.nz() * pwi.ny() * pwi.nx();
  Tensor t({static_cast<std::size_t>(length), pwi.nz(), pwi.ny(), pwi.nx()});
  for (int s = 0; s < length; ++s) {
    const float* src = pwi.values.data() + (static_cast<std::size_t>(start) + s) * nvox;
    std::copy(src, src + nvox, t.data() + static_cast<std::size_t>(s) * nvox);
  }
  w.data = Volume4(std::move(t), pwi.spacing, pwi.dt);
  return w;
}

}  // namespace pwtk
