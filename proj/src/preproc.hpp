// SPDX-License-Identifier: Apache-2.0
//
// Preprocessing chain: spatial resize, physical-unit clipping, per-volume
// linear intensity scaling over the brain mask, and randomized patch
// extraction. Order is resize, clip, scale; clipping constants are in
// physical units so they must precede scaling.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rng.hpp"
#include "temporal.hpp"
#include "tensor.hpp"

namespace pwtk {

struct PreprocConfig {
  std::array<std::size_t, 3> target_dims{32, 256, 256};  // (Z, Y, X); desk-scale override (8, 64, 64)
  std::array<double, 2> tmax_clip{0.0, 20.0};            // seconds
  std::array<double, 2> adc_clip{0.0, 2600.0};           // 1e-6 mm^2/s
  std::array<double, 2> scale_range{0.0, 255.0};
  int patch_size = 88;        // desk-scale 32
  int patches_per_case = 550;  // desk-scale 64
  double lesion_bias = 0.0;   // fraction of patches whose center must lie in the lesion
  int window_length = kDefaultWindowLength;

  void validate() const;
};

struct Patch {
  std::string case_id;
  std::size_t z = 0;
  std::size_t y = 0;  // origin
  std::size_t x = 0;
  // channel-major (C, ps, ps): window_length PWI channels then the six maps
  Tensor channels;
  Tensor gt;  // (ps, ps), binary
};

struct PreprocessedCase {
  std::string case_id;
  TemporalWindow window;           // windowed, resized, scaled PWI
  std::map<std::string, Volume3> maps;  // clipped + scaled
  Volume3 brain_mask;
  Volume3 lesion_gt;  // binary (all zero when the source had none)
  bool has_gt = false;
};

Volume3 clip_map(const Volume3& v, double lo, double hi);

// Affine map sending the observed [min, max] over the mask to
// [out_lo, out_hi]; voxels outside the mask are forced to out_lo.
Volume3 scale_linear(const Volume3& v, const Volume3& mask, double out_lo = 0.0, double out_hi = 255.0);
Volume4 scale_linear(const Volume4& v, const Volume3& mask, double out_lo = 0.0, double out_hi = 255.0);

// Corner-aligned trilinear resampling; 4D inputs are resized per time slice.
Volume3 resize_trilinear(const Volume3& v, const std::array<std::size_t, 3>& target);
Volume4 resize_trilinear(const Volume4& v, const std::array<std::size_t, 3>& target);

// Voxels with positive ADC; the inputs are skull-stripped so this is the
// brain.
Volume3 brain_mask_of(const CaseBundle& bundle);

PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocConfig& config, const SeededRng& rng);

std::vector<Patch> extract_patches(const PreprocessedCase& pc, const PreprocConfig& config, const SeededRng& rng);

// Stacks patches as (N, C+1, ps, ps) with the ground truth as the last
// channel; `channel_names` matches the channel axis.
Tensor stack_patches(const std::vector<Patch>& patches);
std::vector<std::string> patch_channel_names(int window_length);

}  // namespace pwtk
