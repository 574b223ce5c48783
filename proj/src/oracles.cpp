// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include <cmath>
#include <limits>

#include "metrics.hpp"

namespace pwtk::oracle {

template <typename T>
TensorT<T> conv2d_reference(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias, int stride, int pad) {
  const auto& xd = x.dims();
  const auto& wd = w.dims();
  require(xd.size() == 4 && wd.size() == 4, ErrKind::rank, "conv2d reference expects rank-4 tensors");
  require(wd[1] == xd[1], ErrKind::shape, "conv2d reference channel mismatch");
  const long B = static_cast<long>(xd[0]), C = static_cast<long>(xd[1]);
  const long H = static_cast<long>(xd[2]), W = static_cast<long>(xd[3]);
  const long F = static_cast<long>(wd[0]), K = static_cast<long>(wd[2]);
  const long Ho = (H + 2 * pad - K) / stride + 1;
  const long Wo = (W + 2 * pad - K) / stride + 1;
  TensorT<T> out({static_cast<std::size_t>(B), static_cast<std::size_t>(F), static_cast<std::size_t>(Ho),
                  static_cast<std::size_t>(Wo)});
  for (long b = 0; b < B; ++b) {
    for (long f = 0; f < F; ++f) {
      for (long oy = 0; oy < Ho; ++oy) {
        for (long ox = 0; ox < Wo; ++ox) {
          T acc = bias ? (*bias)[static_cast<std::size_t>(f)] : T(0);
          for (long c = 0; c < C; ++c) {
            for (long u = 0; u < K; ++u) {
              for (long v = 0; v < K; ++v) {
                const long iy = oy * stride - pad + u;
                const long ix = ox * stride - pad + v;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w[static_cast<std::size_t>(((f * C + c) * K + u) * K + v)] *
                       x[static_cast<std::size_t>(((b * C + c) * H + iy) * W + ix)];
              }
            }
          }
          out[static_cast<std::size_t>(((b * F + f) * Ho + oy) * Wo + ox)] = acc;
        }
      }
    }
  }
  return out;
}

template TensorT<float> conv2d_reference(const TensorT<float>&, const TensorT<float>&, const TensorT<float>*, int,
                                         int);
template TensorT<double> conv2d_reference(const TensorT<double>&, const TensorT<double>&, const TensorT<double>*,
                                          int, int);

void adam_reference_step(std::vector<double>& params, const std::vector<double>& grads, AdamRefState& state,
                         double lr, double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  const double lr_t = lr * std::sqrt(c2) / c1;
  const double eps_t = eps * std::sqrt(c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr_t * state.m[i] / (std::sqrt(state.v[i]) + eps_t);
  }
}

BruteDistances brute_force_surface_distances(const Tensor& a, const Tensor& b,
                                             const std::array<double, 3>& spacing) {
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  require(!sa.empty() && !sb.empty(), ErrKind::mask, "surface distance undefined for an empty mask");
  const std::size_t Y = a.dim(1), X = a.dim(2);

  auto coords = [&](std::size_t flat) {
    const std::size_t z = flat / (Y * X);
    const std::size_t y = (flat / X) % Y;
    const std::size_t x = flat % X;
    return std::array<double, 3>{static_cast<double>(z) * spacing[0], static_cast<double>(y) * spacing[1],
                                 static_cast<double>(x) * spacing[2]};
  };
  auto nearest = [&](std::size_t from, const std::vector<std::size_t>& to) {
    const auto p = coords(from);
    double best = std::numeric_limits<double>::infinity();
    for (auto t : to) {
      const auto q = coords(t);
      const double d = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                       (p[2] - q[2]) * (p[2] - q[2]);
      best = std::min(best, d);
    }
    return std::sqrt(best);
  };

  double max_ab = 0.0, max_ba = 0.0, sum = 0.0;
  for (auto i : sa) {
    const double d = nearest(i, sb);
    max_ab = std::max(max_ab, d);
    sum += d;
  }
  for (auto i : sb) {
    const double d = nearest(i, sa);
    max_ba = std::max(max_ba, d);
    sum += d;
  }
  return {std::max(max_ab, max_ba), sum / static_cast<double>(sa.size() + sb.size())};
}

double kmeans_cost(const std::vector<std::array<double, 2>>& points, const std::vector<int>& assign) {
  int k = 0;
  for (int a : assign) k = std::max(k, a + 1);
  std::vector<std::array<double, 2>> mean(static_cast<std::size_t>(k), {0.0, 0.0});
  std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    mean[static_cast<std::size_t>(assign[i])][0] += points[i][0];
    mean[static_cast<std::size_t>(assign[i])][1] += points[i][1];
    ++count[static_cast<std::size_t>(assign[i])];
  }
  for (int c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) continue;
    mean[static_cast<std::size_t>(c)][0] /= static_cast<double>(count[static_cast<std::size_t>(c)]);
    mean[static_cast<std::size_t>(c)][1] /= static_cast<double>(count[static_cast<std::size_t>(c)]);
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& m = mean[static_cast<std::size_t>(assign[i])];
    cost += (points[i][0] - m[0]) * (points[i][0] - m[0]) + (points[i][1] - m[1]) * (points[i][1] - m[1]);
  }
  return cost;
}

double best_two_partition_cost(const std::vector<std::array<double, 2>>& points) {
  const std::size_t n = points.size();
  require(n >= 2 && n <= 20, ErrKind::parameter, "exhaustive 2-partition supports 2..20 points");
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t m = 1; m + 1 < (1u << n); ++m) {
    std::vector<int> assign(n);
    for (std::size_t i = 0; i < n; ++i) assign[i] = (m >> i) & 1u;
    best = std::min(best, kmeans_cost(points, assign));
  }
  return best;
}

}  // namespace pwtk::oracle
