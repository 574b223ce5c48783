// SPDX-License-Identifier: Apache-2.0
//
// ADAM optimization over patch batches with the soft-dice loss,
// case-level train/validation splitting, and checkpointing. Checkpoint
// file: magic "PWCK", version u32, u64-length-prefixed JSON metadata,
// then the named tensors back to back in the raw tensor format.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"
#include "preproc.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pwtk {

struct AdamConfig {
  double learning_rate = 1e-3;  // desk-scale default; 1e-5 reproduces the reference setup
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<TensorT<T>> m;  // aligned with ParamStore entries
  std::vector<TensorT<T>> v;
  long t = 0;

  void init_like(const ParamStore<T>& params) {
    m.clear();
    v.clear();
    for (const auto& e : params.entries) {
      m.emplace_back(e.value.dims());
      v.emplace_back(e.value.dims());
    }
    t = 0;
  }
};

// Standard bias-corrected update: m and v are exponential moving averages of
// g and g^2; p -= lr * m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<TensorT<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg);

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 4;
  int epochs = 50;
  std::uint64_t seed = 0;
  int val_ratio_num = 7;  // validation share, proportional to the 36:7 reference split
  int val_ratio_den = 43;
  double dice_smoothing = 1e-6;

  void validate() const;
};

struct LossRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dice = 0.0;
};

// One case's extracted patches: (N, C+1, ps, ps) stack, ground truth last.
struct CasePatches {
  std::string case_id;
  Tensor stack;
  int pwi_channels = kDefaultWindowLength;
  int map_channels = 6;
};

struct Checkpoint {
  ModelKind kind = ModelKind::branched;
  ArchConfig arch;
  ParamStore<float> params;
  AdamState<float> adam;
  int epoch = 0;
  double best_val_dice = 0.0;
  std::vector<LossRow> history;
  std::string preproc_echo_json = "{}";  // preprocessing settings the data was built with
};

Checkpoint train(const std::vector<CasePatches>& corpus, ModelKind kind, const ArchConfig& arch,
                 const TrainConfig& cfg);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Case-level split: `val_n` cases (rounded share, at least 1 when the corpus
// has 2+) go to validation. Deterministic in the seed.
void split_cases(std::size_t n_cases, const TrainConfig& cfg, std::vector<std::size_t>& train_idx,
                 std::vector<std::size_t>& val_idx);

// Fixed-batch optimization used by the overfit harness: repeated ADAM steps
// on one batch; returns the per-step loss trace.
std::vector<double> overfit_single_batch(Network<float>& net, const std::vector<Tensor>& batch_inputs,
                                         const Tensor& batch_gt, int steps, const AdamConfig& adam,
                                         double dice_smoothing = 1e-6);

}  // namespace pwtk
