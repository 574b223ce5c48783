// SPDX-License-Identifier: Apache-2.0
//
// Synthetic perfusion cases with ground truth known by construction: a
// gamma-variate bolus drives an exponential signal drop inside a brain
// ellipse; lesion ellipsoids attenuate and delay the bolus; the standard
// maps are analytic summaries of the generated signal.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace pwtk {

struct LesionSpec {
  std::array<double, 3> center{0, 0, 0};  // (z, y, x) voxels
  std::array<double, 3> radii{1, 1, 1};   // semi-axes, voxels
  double lambda = 0.0;                    // perfusion attenuation in the core, 0 = no contrast, 1 = healthy
  double delay = 0.0;                     // bolus arrival delay in the core, seconds
};

struct PhantomConfig {
  std::array<std::size_t, 4> dims{40, 8, 64, 64};  // (T, Z, Y, X)
  std::array<double, 3> spacing{4.0, 2.0, 2.0};    // mm
  double dt = 1.0;                                  // seconds
  double t0 = 8.0;                                  // bolus arrival, seconds
  double alpha = 2.0;                               // gamma shape
  double beta = 2.0;                                // gamma scale, seconds
  double s0 = 100.0;                                // baseline signal
  double kappa = 0.6;                               // contrast sensitivity
  double noise_sigma = 0.0;                         // additive gaussian noise on the signal
  double gamma_dilation = 1.5;                      // penumbra growth factor (>= 1)
  double core_lambda_threshold = 0.5;               // lambda below this is core
  // Penumbra voxels keep a normal bolus depth and arrival but wash out
  // slower by this factor, so the shell is invisible to the min/argmin map
  // summaries yet present in the raw temporal window.
  double shell_washout = 2.5;
  double adc_healthy = 1400.0;                      // 1e-6 mm^2/s
  double adc_core_scale = 0.45;                     // ADC reduction factor inside the core
  std::vector<LesionSpec> lesions;                  // empty => one default lesion
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhantomCase {
  CaseBundle bundle;        // lesion_gt = follow-up mask
  int true_peak_index = 0;  // argmin of the noiseless brain-mean signal
  Volume3 core_mask;
  Volume3 follow_up_mask;
  PhantomConfig config;     // effective per-case parameters
};

// Gamma-variate bolus normalized to peak 1 at t = t0 + alpha*beta.
double gamma_variate(double t, double t0, double alpha, double beta);

PhantomCase synth_case(const PhantomConfig& config, const std::string& case_id = "case");

// n cases with lesion geometry and bolus parameters drawn per case from
// rng_split(base_seed, case_id); noise level and dims come from `base`.
std::vector<PhantomCase> synth_corpus(int n, std::uint64_t base_seed, const PhantomConfig& base = {});

std::string corpus_case_id(int index);

}  // namespace pwtk
