// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations kept deliberately independent of the production
// kernels; the self-test and the test suites compare against these.
#pragma once

#include <array>
#include <vector>

#include "tensor.hpp"

namespace pwtk::oracle {

// Naive cross-correlation; per-element accumulation order matches the
// production kernel's (c, u, v), so double-precision results compare
// bitwise.
template <typename T>
TensorT<T> conv2d_reference(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias, int stride, int pad);

// ADAM in the rescaled-step form: p -= lr_t * m / (sqrt(v) + eps_t) with
// lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t); algebraically equal to the
// bias-corrected update but a different evaluation route.
struct AdamRefState {
  std::vector<double> m, v;
  long t = 0;
};

void adam_reference_step(std::vector<double>& params, const std::vector<double>& grads, AdamRefState& state,
                         double lr, double beta1, double beta2, double eps);

// Quadratic all-pairs surface distances.
struct BruteDistances {
  double hausdorff = 0.0;
  double assd = 0.0;
};

BruteDistances brute_force_surface_distances(const Tensor& a, const Tensor& b,
                                             const std::array<double, 3>& spacing);

// Exhaustive best 2-partition by within-cluster squared distance to the
// cluster mean; only for small point sets.
double best_two_partition_cost(const std::vector<std::array<double, 2>>& points);
double kmeans_cost(const std::vector<std::array<double, 2>>& points, const std::vector<int>& assign);

}  // namespace pwtk::oracle
