// SPDX-License-Identifier: Apache-2.0
//
// The four segmentation networks: a U-Net trunk feeding a four-direction
// bi-dimensional GRU, with a sigmoid head. The branched variant runs a
// data-driven trunk (1x1 feature expansion/reduction by `expansion_factor`
// in front of its U-Net) next to a standard-maps trunk and fuses their
// post-GRU features through a small merge network.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pwtk {

enum class ModelKind { standard, data_driven, single, branched };

const char* model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ArchConfig {
  int unet_levels = 3;
  int base_filters = 8;
  int kernel = 3;  // fixed 3x3 trunk convolutions
  int gru_hidden = 16;
  int pwi_channels = 26;  // equals the temporal window length
  int map_channels = 6;
  int expansion_factor = 4;
  int merge_filters = 16;
  bool post_fusion_gru = false;

  void validate() const;
};

// Expected input channel counts, in forward() argument order.
std::vector<int> input_channels(ModelKind kind, const ArchConfig& cfg);

template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    TensorT<T> value;
  };
  std::vector<Entry> entries;  // registration order, deterministic
  std::map<std::string, int> by_name;

  int add(const std::string& name, TensorT<T> value) {
    require(!by_name.count(name), ErrKind::parameter, "duplicate parameter name: " + name);
    by_name[name] = static_cast<int>(entries.size());
    entries.push_back({name, std::move(value)});
    return static_cast<int>(entries.size()) - 1;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.value.size();
    return n;
  }
};

template <typename T>
struct ForwardResult {
  int output = -1;                 // probabilities [B,1,H,W]
  std::vector<int> param_leaves;   // aligned with ParamStore entries
  std::vector<int> gru_features;   // post-GRU features per trunk, in trunk order
  std::vector<std::string> trunk_tags;  // names the gru_features entries ("dd", "std", "gru")
};

template <typename T>
class Network {
 public:
  Network(ModelKind kind, const ArchConfig& cfg, const SeededRng& init_rng);

  ModelKind kind() const { return kind_; }
  const ArchConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Inputs must match input_channels(kind, cfg) in order and share H, W.
  ForwardResult<T> forward(ad::Graph<T>& g, const std::vector<const TensorT<T>*>& inputs) const;

  // Post-GRU feature maps of the requested trunk as named 2D-per-batch
  // tensors. Tags: "dd" / "std" on the branched model, "gru" (or the
  // matching trunk tag) on the single-trunk models.
  std::vector<std::pair<std::string, TensorT<T>>> extract_features(ad::Graph<T>& g,
                                                                   const std::vector<const TensorT<T>*>& inputs,
                                                                   const std::string& layer_tag) const;

 private:
  ModelKind kind_;
  ArchConfig cfg_;
  ParamStore<T> params_;
};

extern template class Network<float>;
extern template class Network<double>;
extern template struct ParamStore<float>;
extern template struct ParamStore<double>;

}  // namespace pwtk
