// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiable kernels on a dynamic tape. The set is exactly
// what the segmentation networks need: 2D convolution, pointwise
// nonlinearities, 2x pooling/upsampling, concatenation/slicing, the
// four-direction bi-dimensional GRU (built compositionally so its backward
// is exact by construction), and the soft-dice loss whose backward is the
// analytic dice gradient.
//
// Node values are addressed by integer ids; feature tensors are NCHW with
// the last axis fastest. Graphs are single-threaded per instance; kernel
// inner loops may fan out over disjoint output elements, so results do not
// depend on the worker count.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace pwtk::ad {

enum class GruDirection { si, is, ap, pa };  // scan row-down, row-up, col-right, col-left

inline const char* direction_name(GruDirection d) {
  switch (d) {
    case GruDirection::si: return "si";
    case GruDirection::is: return "is";
    case GruDirection::ap: return "ap";
    case GruDirection::pa: return "pa";
  }
  return "?";
}

// Leaf ids of one direction's parameters: input projections [hid,C,1,1],
// hidden projections [hid,hid,1,1], biases [hid].
struct GruDirLeaves {
  int wz = -1, wr = -1, wh = -1;
  int uz = -1, ur = -1, uh = -1;
  int bz = -1, br = -1, bh = -1;
};

struct GruLeaves {
  std::array<GruDirLeaves, 4> dir;  // indexed by GruDirection
};

template <typename T>
struct SoftDiceResult {
  int loss = -1;             // scalar node: mean over batch members of (1 - dice)
  std::vector<T> dice;       // per-member soft dice
  T mean_dice = T(0);
};

template <typename T>
class Graph {
 public:
  using Tensor = TensorT<T>;

  int leaf(Tensor value, bool requires_grad);
  int constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& data(int id) const { return nodes_[check(id)].value; }
  const char* op_name(int id) const { return nodes_[check(id)].op; }
  const std::vector<int>& op_inputs(int id) const { return nodes_[check(id)].inputs; }
  const Tensor& grad(int id) const;
  const std::vector<std::size_t>& dims(int id) const { return nodes_[check(id)].value.dims(); }
  bool requires_grad(int id) const { return nodes_[check(id)].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // x [B,C,H,W] (*) w [F,C,k,k] + b [F]; pass bias = -1 for none.
  int conv2d(int x, int w, int bias, int stride = 1, int pad = 0);
  int relu(int x);
  int sigmoid(int x);
  int tanh_act(int x);
  int add(int a, int b);
  int mul(int a, int b);
  int affine(int x, T scale, T shift);
  int maxpool2(int x);
  int upsample2(int x);
  int concat(const std::vector<int>& xs, std::size_t axis);
  int concat_channels(const std::vector<int>& xs) { return concat(xs, 1); }
  int slice(int x, std::size_t axis, std::size_t start, std::size_t len);
  int transpose_hw(int x);
  // Weighted full reduction to a scalar; used by the gradient checker.
  int weighted_sum(int x, Tensor weights);

  int gru2d(int x, const GruDirLeaves& p, GruDirection direction);
  int four_dir_gru(int x, const GruLeaves& p);

  // p are probabilities in [0,1]; labels share p's dims with values in
  // {0,1}. Axis 0 is the batch when rank >= 2. smoothing is added to both
  // the numerator and the denominator of the dice ratio.
  SoftDiceResult<T> soft_dice(int p, Tensor labels, T smoothing);

  void backward(int loss_id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char* op = "leaf";       // provenance: operation id
    std::vector<int> inputs;       // provenance: input node references
    std::function<void(Graph&)> back;
  };

  int check(int id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), ErrKind::parameter, "bad node id");
    return id;
  }

  int push(Tensor value, bool requires_grad, const char* op, std::vector<int> inputs,
           std::function<void(Graph&)> back) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, op, std::move(inputs), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tensor& grad_mut(int id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// Central finite differences of a scalar-valued graph against the analytic
// backward pass. `build` receives leaves created from `inputs` (all with
// gradients enabled) and must return the scalar output node. Returns the
// worst relative error max(|a-n|) / max(1, |a|, |n|) over every input
// scalar.
double grad_check(const std::vector<TensorD>& inputs,
                  const std::function<int(Graph<double>&, const std::vector<int>&)>& build, double eps = 1e-5);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace pwtk::ad
