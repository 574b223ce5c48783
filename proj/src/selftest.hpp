// SPDX-License-Identifier: Apache-2.0
//
// Built-in verification: finite-difference checks for every differentiable
// kernel and cross-checks of the metric implementations against the
// reference oracles. The `selftest` CLI subcommand runs this; the
// acceptance suite runs the same checks at larger instance counts.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"

namespace pwtk {

struct CheckResult {
  std::string name;
  double worst = 0.0;      // worst observed error
  double threshold = 0.0;  // pass when worst < threshold
  bool pass = false;
};

// Finite-difference gradient checks, `instances` random instances per
// kernel. Kernels: conv2d, relu, sigmoid, tanh, maxpool2, upsample2,
// concat, gru2d (x4 directions), four_dir_gru, soft_dice.
std::vector<CheckResult> kernel_grad_checks(int instances, std::uint64_t seed);

// Metric and optimizer cross-checks against the reference oracles.
std::vector<CheckResult> oracle_checks(int instances, std::uint64_t seed);

// Quick full pass; logs one line per check and returns overall success.
bool run_selftest(std::uint64_t seed = 0);

}  // namespace pwtk
