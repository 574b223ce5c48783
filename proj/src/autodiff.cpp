// SPDX-License-Identifier: Apache-2.0
#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace pwtk::ad {

namespace {

void check_nchw(const std::vector<std::size_t>& d, const char* who) {
  require(d.size() == 4, ErrKind::rank, std::string(who) + " expects a rank-4 NCHW tensor");
}

}  // namespace

template <typename T>
int Graph<T>::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, "leaf", {}, nullptr);
}

template <typename T>
const TensorT<T>& Graph<T>::grad(int id) const {
  const Node& n = nodes_[check(id)];
  require(!n.grad.empty(), ErrKind::parameter, "gradient not computed for this node");
  return n.grad;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation with zero padding.

template <typename T>
int Graph<T>::conv2d(int x, int w, int bias, int stride, int pad) {
  const auto xd = dims(x);
  const auto wd = dims(w);
  check_nchw(xd, "conv2d input");
  check_nchw(wd, "conv2d weight");
  require(stride >= 1 && pad >= 0, ErrKind::parameter, "conv2d needs stride >= 1 and pad >= 0");
  require(wd[2] == wd[3] && wd[2] % 2 == 1, ErrKind::parameter, "conv2d kernel must be square and odd");
  require(wd[1] == xd[1], ErrKind::shape, "conv2d channel mismatch");
  if (bias >= 0) {
    require(dims(bias).size() == 1 && dims(bias)[0] == wd[0], ErrKind::shape, "conv2d bias extent mismatch");
  }
  const long B = static_cast<long>(xd[0]), C = static_cast<long>(xd[1]);
  const long H = static_cast<long>(xd[2]), W = static_cast<long>(xd[3]);
  const long F = static_cast<long>(wd[0]), K = static_cast<long>(wd[2]);
  const long Ho = (H + 2 * pad - K) / stride + 1;
  const long Wo = (W + 2 * pad - K) / stride + 1;
  require(Ho >= 1 && Wo >= 1, ErrKind::shape, "conv2d output would be empty");

  Tensor out({static_cast<std::size_t>(B), static_cast<std::size_t>(F), static_cast<std::size_t>(Ho),
              static_cast<std::size_t>(Wo)});
  {
    const T* xp = data(x).data();
    const T* wp = data(w).data();
    const T* bp = bias >= 0 ? data(bias).data() : nullptr;
    // One worker per (b, f) output plane; per-element accumulation order is
    // (c, u, v) regardless of the worker count.
    parallel_for(static_cast<std::size_t>(B * F), [&](std::size_t bf) {
      const long b = static_cast<long>(bf) / F, f = static_cast<long>(bf) % F;
      T* op = out.data() + (b * F + f) * Ho * Wo;
      const T bias_v = bp ? bp[f] : T(0);
      std::fill(op, op + Ho * Wo, bias_v);
      for (long c = 0; c < C; ++c) {
        const T* xc = xp + (b * C + c) * H * W;
        const T* wc = wp + (f * C + c) * K * K;
        for (long u = 0; u < K; ++u) {
          for (long v = 0; v < K; ++v) {
            const T wv = wc[u * K + v];
            for (long oy = 0; oy < Ho; ++oy) {
              const long iy = oy * stride - pad + u;
              if (iy < 0 || iy >= H) continue;
              const T* xrow = xc + iy * W;
              T* orow = op + oy * Wo;
              if (stride == 1) {
                const long shift = v - pad;  // ix = ox + shift
                const long lo = std::max(0L, -shift);
                const long hi = std::min(Wo, W - shift);
                for (long ox = lo; ox < hi; ++ox) orow[ox] += wv * xrow[ox + shift];
              } else {
                for (long ox = 0; ox < Wo; ++ox) {
                  const long ix = ox * stride - pad + v;
                  if (ix < 0 || ix >= W) continue;
                  orow[ox] += wv * xrow[ix];
                }
              }
            }
          }
        }
      }
    });
  }

  const bool rg = requires_grad(x) || requires_grad(w) || (bias >= 0 && requires_grad(bias));
  const int id = push(std::move(out), rg, "conv2d", bias >= 0 ? std::vector<int>{x, w, bias} : std::vector<int>{x, w}, nullptr);
  if (!rg) return id;
  const int s = stride, p = pad;
  nodes_[id].back = [id, x, w, bias, s, p, B, C, F, H, W, K, Ho, Wo](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const T* xp = g.nodes_[x].value.data();
    const T* wp = g.nodes_[w].value.data();

    if (g.nodes_[x].requires_grad) {
      T* gx = g.nodes_[x].grad.data();
      parallel_for(static_cast<std::size_t>(B), [&](std::size_t bu) {
        const long b = static_cast<long>(bu);
        for (long f = 0; f < F; ++f) {
          const T* gyp = gy + (b * F + f) * Ho * Wo;
          for (long c = 0; c < C; ++c) {
            T* gxc = gx + (b * C + c) * H * W;
            const T* wc = wp + (f * C + c) * K * K;
            for (long u = 0; u < K; ++u) {
              for (long v = 0; v < K; ++v) {
                const T wv = wc[u * K + v];
                for (long oy = 0; oy < Ho; ++oy) {
                  const long iy = oy * s - p + u;
                  if (iy < 0 || iy >= H) continue;
                  T* gxrow = gxc + iy * W;
                  const T* gyrow = gyp + oy * Wo;
                  if (s == 1) {
                    const long shift = v - p;
                    const long lo = std::max(0L, -shift);
                    const long hi = std::min(Wo, W - shift);
                    for (long ox = lo; ox < hi; ++ox) gxrow[ox + shift] += wv * gyrow[ox];
                  } else {
                    for (long ox = 0; ox < Wo; ++ox) {
                      const long ix = ox * s - p + v;
                      if (ix < 0 || ix >= W) continue;
                      gxrow[ix] += wv * gyrow[ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
    }

    if (g.nodes_[w].requires_grad) {
      T* gw = g.nodes_[w].grad.data();
      parallel_for(static_cast<std::size_t>(F), [&](std::size_t fu) {
        const long f = static_cast<long>(fu);
        for (long c = 0; c < C; ++c) {
          T* gwc = gw + (f * C + c) * K * K;
          for (long u = 0; u < K; ++u) {
            for (long v = 0; v < K; ++v) {
              T acc = T(0);
              for (long b = 0; b < B; ++b) {
                const T* gyp = gy + (b * F + f) * Ho * Wo;
                const T* xc = xp + (b * C + c) * H * W;
                for (long oy = 0; oy < Ho; ++oy) {
                  const long iy = oy * s - p + u;
                  if (iy < 0 || iy >= H) continue;
                  const T* xrow = xc + iy * W;
                  const T* gyrow = gyp + oy * Wo;
                  if (s == 1) {
                    const long shift = v - p;
                    const long lo = std::max(0L, -shift);
                    const long hi = std::min(Wo, W - shift);
                    for (long ox = lo; ox < hi; ++ox) acc += gyrow[ox] * xrow[ox + shift];
                  } else {
                    for (long ox = 0; ox < Wo; ++ox) {
                      const long ix = ox * s - p + v;
                      if (ix < 0 || ix >= W) continue;
                      acc += gyrow[ox] * xrow[ix];
                    }
                  }
                }
              }
              gwc[u * K + v] += acc;
            }
          }
        }
      });
    }

    if (bias >= 0 && g.nodes_[bias].requires_grad) {
      T* gb = g.nodes_[bias].grad.data();
      for (long f = 0; f < F; ++f) {
        T acc = T(0);
        for (long b = 0; b < B; ++b) {
          const T* gyp = gy + (b * F + f) * Ho * Wo;
          for (long i = 0; i < Ho * Wo; ++i) acc += gyp[i];
        }
        gb[f] += acc;
      }
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// pointwise

template <typename T>
int Graph<T>::relu(int x) {
  Tensor out = data(x);
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "relu", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const T* xp = g.nodes_[x].value.data();
    T* gx = g.nodes_[x].grad.data();
    const std::size_t n = g.nodes_[x].value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += xp[i] > T(0) ? gy[i] : T(0);
  };
  return id;
}

template <typename T>
int Graph<T>::sigmoid(int x) {
  Tensor out = data(x);
  for (auto& v : out.storage()) v = T(1) / (T(1) + std::exp(-v));
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "sigmoid", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const T* yp = g.nodes_[id].value.data();
    T* gx = g.nodes_[x].grad.data();
    const std::size_t n = g.nodes_[x].value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * yp[i] * (T(1) - yp[i]);
  };
  return id;
}

template <typename T>
int Graph<T>::tanh_act(int x) {
  Tensor out = data(x);
  for (auto& v : out.storage()) v = std::tanh(v);
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "tanh", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const T* yp = g.nodes_[id].value.data();
    T* gx = g.nodes_[x].grad.data();
    const std::size_t n = g.nodes_[x].value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (T(1) - yp[i] * yp[i]);
  };
  return id;
}

template <typename T>
int Graph<T>::add(int a, int b) {
  require(data(a).same_dims(data(b)), ErrKind::shape, "add dims mismatch");
  Tensor out = data(a);
  {
    const T* bp = data(b).data();
    T* op = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) op[i] += bp[i];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  const int id = push(std::move(out), rg, "add", std::vector<int>{a, b}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, a, b](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const std::size_t n = g.nodes_[id].value.size();
    if (g.nodes_[a].requires_grad) {
      T* ga = g.nodes_[a].grad.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (g.nodes_[b].requires_grad) {
      T* gb = g.nodes_[b].grad.data();
      for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i];
    }
  };
  return id;
}

template <typename T>
int Graph<T>::mul(int a, int b) {
  require(data(a).same_dims(data(b)), ErrKind::shape, "mul dims mismatch");
  Tensor out = data(a);
  {
    const T* bp = data(b).data();
    T* op = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) op[i] *= bp[i];
  }
  const bool rg = requires_grad(a) || requires_grad(b);
  const int id = push(std::move(out), rg, "mul", std::vector<int>{a, b}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, a, b](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    const std::size_t n = g.nodes_[id].value.size();
    if (g.nodes_[a].requires_grad) {
      T* ga = g.nodes_[a].grad.data();
      const T* bp = g.nodes_[b].value.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += gy[i] * bp[i];
    }
    if (g.nodes_[b].requires_grad) {
      T* gb = g.nodes_[b].grad.data();
      const T* ap = g.nodes_[a].value.data();
      for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i] * ap[i];
    }
  };
  return id;
}

template <typename T>
int Graph<T>::affine(int x, T scale, T shift) {
  Tensor out = data(x);
  for (auto& v : out.storage()) v = scale * v + shift;
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "affine", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x, scale](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    T* gx = g.nodes_[x].grad.data();
    const std::size_t n = g.nodes_[x].value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += scale * gy[i];
  };
  return id;
}

// ---------------------------------------------------------------------------
// pooling / upsampling

template <typename T>
int Graph<T>::maxpool2(int x) {
  const auto xd = dims(x);
  check_nchw(xd, "maxpool2");
  require(xd[2] % 2 == 0 && xd[3] % 2 == 0, ErrKind::shape, "maxpool2 requires even spatial extents");
  const std::size_t B = xd[0], C = xd[1], H = xd[2], W = xd[3];
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor out({B, C, Ho, Wo});
  auto routing = std::make_shared<std::vector<std::uint32_t>>(out.size());
  {
    const T* xp = data(x).data();
    T* op = out.data();
    std::uint32_t* rp = routing->data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T* plane = xp + bc * H * W;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          std::size_t best = (2 * oy) * W + 2 * ox;
          T best_v = plane[best];
          const std::size_t cands[3] = {(2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
                                        (2 * oy + 1) * W + 2 * ox + 1};
          for (std::size_t cand : cands) {
            if (plane[cand] > best_v) {
              best_v = plane[cand];
              best = cand;
            }
          }
          op[bc * Ho * Wo + oy * Wo + ox] = best_v;
          rp[bc * Ho * Wo + oy * Wo + ox] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "maxpool2", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x, routing, B, C, H, W, Ho, Wo](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    T* gx = g.nodes_[x].grad.data();
    const std::uint32_t* rp = routing->data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      T* plane = gx + bc * H * W;
      const T* gyp = gy + bc * Ho * Wo;
      const std::uint32_t* rr = rp + bc * Ho * Wo;
      for (std::size_t i = 0; i < Ho * Wo; ++i) plane[rr[i]] += gyp[i];
    }
  };
  return id;
}

template <typename T>
int Graph<T>::upsample2(int x) {
  const auto xd = dims(x);
  check_nchw(xd, "upsample2");
  const std::size_t B = xd[0], C = xd[1], H = xd[2], W = xd[3];
  Tensor out({B, C, 2 * H, 2 * W});
  {
    const T* xp = data(x).data();
    T* op = out.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T* src = xp + bc * H * W;
      T* dst = op + bc * 4 * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          const T v = src[y * W + xx];
          dst[(2 * y) * 2 * W + 2 * xx] = v;
          dst[(2 * y) * 2 * W + 2 * xx + 1] = v;
          dst[(2 * y + 1) * 2 * W + 2 * xx] = v;
          dst[(2 * y + 1) * 2 * W + 2 * xx + 1] = v;
        }
      }
    }
  }
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "upsample2", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x, B, C, H, W](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    T* gx = g.nodes_[x].grad.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      T* dst = gx + bc * H * W;
      const T* src = gy + bc * 4 * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          dst[y * W + xx] += src[(2 * y) * 2 * W + 2 * xx] + src[(2 * y) * 2 * W + 2 * xx + 1] +
                             src[(2 * y + 1) * 2 * W + 2 * xx] + src[(2 * y + 1) * 2 * W + 2 * xx + 1];
        }
      }
    }
  };
  return id;
}

// ---------------------------------------------------------------------------
// layout ops

template <typename T>
int Graph<T>::concat(const std::vector<int>& xs, std::size_t axis) {
  require(!xs.empty(), ErrKind::parameter, "concat needs at least one input");
  require(axis == 1 || axis == 2, ErrKind::parameter, "concat supports axis 1 or 2");
  const auto first = dims(xs[0]);
  check_nchw(first, "concat");
  std::size_t total = 0;
  for (int x : xs) {
    const auto d = dims(x);
    check_nchw(d, "concat");
    for (std::size_t a = 0; a < 4; ++a) {
      if (a == axis) continue;
      require(d[a] == first[a], ErrKind::shape, "concat dims mismatch off the concat axis");
    }
    total += d[axis];
  }
  std::vector<std::size_t> od = first;
  od[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= od[a];
  for (std::size_t a = axis + 1; a < 4; ++a) inner *= od[a];

  Tensor out(od);
  bool rg = false;
  {
    T* op = out.data();
    std::size_t off = 0;
    for (int x : xs) {
      const std::size_t dx = dims(x)[axis];
      const T* xp = data(x).data();
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy(xp + o * dx * inner, xp + (o + 1) * dx * inner, op + (o * total + off) * inner);
      }
      off += dx;
      rg = rg || requires_grad(x);
    }
  }
  const int id = push(std::move(out), rg, "concat", xs, nullptr);
  if (!rg) return id;
  auto inputs = std::make_shared<std::vector<int>>(xs);
  nodes_[id].back = [id, inputs, axis, outer, inner, total](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    std::size_t off = 0;
    for (int x : *inputs) {
      const std::size_t dx = g.nodes_[x].value.dims()[axis];
      if (g.nodes_[x].requires_grad) {
        T* gx = g.nodes_[x].grad.data();
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = gy + (o * total + off) * inner;
          T* dst = gx + o * dx * inner;
          for (std::size_t i = 0; i < dx * inner; ++i) dst[i] += src[i];
        }
      }
      off += dx;
    }
  };
  return id;
}

template <typename T>
int Graph<T>::slice(int x, std::size_t axis, std::size_t start, std::size_t len) {
  const auto xd = dims(x);
  check_nchw(xd, "slice");
  require(axis < 4, ErrKind::parameter, "slice axis out of range");
  require(len >= 1 && start + len <= xd[axis], ErrKind::shape, "slice range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= xd[a];
  for (std::size_t a = axis + 1; a < 4; ++a) inner *= xd[a];
  const std::size_t D = xd[axis];

  std::vector<std::size_t> od = xd;
  od[axis] = len;
  Tensor out(od);
  {
    const T* xp = data(x).data();
    T* op = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(xp + (o * D + start) * inner, xp + (o * D + start + len) * inner, op + o * len * inner);
    }
  }
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "slice", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x, outer, inner, D, start, len](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    T* gx = g.nodes_[x].grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = gy + o * len * inner;
      T* dst = gx + (o * D + start) * inner;
      for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
  };
  return id;
}

template <typename T>
int Graph<T>::transpose_hw(int x) {
  const auto xd = dims(x);
  check_nchw(xd, "transpose_hw");
  const std::size_t B = xd[0], C = xd[1], H = xd[2], W = xd[3];
  Tensor out({B, C, W, H});
  {
    const T* xp = data(x).data();
    T* op = out.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T* src = xp + bc * H * W;
      T* dst = op + bc * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) dst[xx * H + y] = src[y * W + xx];
      }
    }
  }
  const bool rg = requires_grad(x);
  const int id = push(std::move(out), rg, "transpose_hw", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  nodes_[id].back = [id, x, B, C, H, W](Graph& g) {
    const T* gy = g.nodes_[id].grad.data();
    T* gx = g.nodes_[x].grad.data();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T* src = gy + bc * H * W;  // (W, H) layout
      T* dst = gx + bc * H * W;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) dst[y * W + xx] += src[xx * H + y];
      }
    }
  };
  return id;
}

template <typename T>
int Graph<T>::weighted_sum(int x, Tensor weights) {
  require(weights.same_dims(data(x)), ErrKind::shape, "weighted_sum weight dims mismatch");
  T acc = T(0);
  {
    const T* xp = data(x).data();
    const T* wp = weights.data();
    for (std::size_t i = 0; i < weights.size(); ++i) acc += xp[i] * wp[i];
  }
  const bool rg = requires_grad(x);
  const int id = push(Tensor({1}, std::vector<T>{acc}), rg, "weighted_sum", std::vector<int>{x}, nullptr);
  if (!rg) return id;
  auto wshared = std::make_shared<Tensor>(std::move(weights));
  nodes_[id].back = [id, x, wshared](Graph& g) {
    const T gy = g.nodes_[id].grad[0];
    T* gx = g.nodes_[x].grad.data();
    const T* wp = wshared->data();
    for (std::size_t i = 0; i < wshared->size(); ++i) gx[i] += gy * wp[i];
  };
  return id;
}

// ---------------------------------------------------------------------------
// bi-dimensional GRU
//
// One spatial axis becomes the recurrence axis; every position along the
// other axis advances in parallel as part of the batch. Cell convention:
//   z = sigm(Wz x + Uz h + bz), r = sigm(Wr x + Ur h + br)
//   hcand = tanh(Wh x + Uh (r*h) + bh)
//   h' = (1 - z) * hcand + z * h
// The hidden state is emitted at every step, giving a full-resolution map.

template <typename T>
int Graph<T>::gru2d(int x, const GruDirLeaves& p, GruDirection direction) {
  const auto xd = dims(x);
  check_nchw(xd, "gru2d");
  const bool transposed = direction == GruDirection::ap || direction == GruDirection::pa;
  const bool reversed = direction == GruDirection::is || direction == GruDirection::pa;

  int cur = transposed ? transpose_hw(x) : x;
  const auto cd = dims(cur);
  const std::size_t B = cd[0], H = cd[2], W = cd[3];
  const auto wzd = dims(p.wz);
  require(wzd.size() == 4 && wzd[1] == cd[1], ErrKind::shape, "gru2d input projection channel mismatch");
  const std::size_t hid = wzd[0];

  int h = constant(Tensor({B, hid, 1, W}));
  std::vector<int> rows(H, -1);
  for (std::size_t step = 0; step < H; ++step) {
    const std::size_t row = reversed ? H - 1 - step : step;
    const int xi = slice(cur, 2, row, 1);
    const int z = sigmoid(add(conv2d(xi, p.wz, p.bz), conv2d(h, p.uz, -1)));
    const int r = sigmoid(add(conv2d(xi, p.wr, p.br), conv2d(h, p.ur, -1)));
    const int hc = tanh_act(add(conv2d(xi, p.wh, p.bh), conv2d(mul(r, h), p.uh, -1)));
    h = add(mul(affine(z, T(-1), T(1)), hc), mul(z, h));
    rows[row] = h;
  }
  int out = concat(rows, 2);
  if (transposed) out = transpose_hw(out);
  return out;
}

template <typename T>
int Graph<T>::four_dir_gru(int x, const GruLeaves& p) {
  const GruDirection dirs[4] = {GruDirection::si, GruDirection::is, GruDirection::ap, GruDirection::pa};
  int acc = -1;
  for (int d = 0; d < 4; ++d) {
    const int y = gru2d(x, p.dir[static_cast<std::size_t>(d)], dirs[d]);
    acc = acc < 0 ? y : add(acc, y);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// soft dice

template <typename T>
SoftDiceResult<T> Graph<T>::soft_dice(int p, Tensor labels, T smoothing) {
  const auto pd = dims(p);
  require(labels.dims() == pd, ErrKind::shape, "soft_dice probability/label dims mismatch");
  require(smoothing >= T(0), ErrKind::parameter, "soft_dice smoothing must be non-negative");
  const std::size_t members = pd.size() >= 2 ? pd[0] : 1;
  const std::size_t n = data(p).size() / members;

  SoftDiceResult<T> res;
  res.dice.resize(members);
  auto sum_a = std::make_shared<std::vector<T>>(members);  // 2*sum(p*g) + eps
  auto sum_b = std::make_shared<std::vector<T>>(members);  // sum(p^2) + sum(g^2) + eps
  {
    const T* pp = data(p).data();
    const T* gp = labels.data();
    T total = T(0);
    for (std::size_t m = 0; m < members; ++m) {
      T spg = T(0), spp = T(0), sgg = T(0);
      const T* pm = pp + m * n;
      const T* gm = gp + m * n;
      for (std::size_t i = 0; i < n; ++i) {
        spg += pm[i] * gm[i];
        spp += pm[i] * pm[i];
        sgg += gm[i] * gm[i];
      }
      (*sum_a)[m] = T(2) * spg + smoothing;
      (*sum_b)[m] = spp + sgg + smoothing;
      require((*sum_b)[m] > T(0), ErrKind::degenerate,
              "soft_dice denominator is zero; enable smoothing for empty inputs");
      res.dice[m] = (*sum_a)[m] / (*sum_b)[m];
      total += res.dice[m];
    }
    res.mean_dice = total / static_cast<T>(members);
  }

  const T loss_v = T(1) - res.mean_dice;
  const bool rg = requires_grad(p);
  const int id = push(Tensor({1}, std::vector<T>{loss_v}), rg, "soft_dice", std::vector<int>{p}, nullptr);
  res.loss = id;
  if (!rg) return res;

  auto glabels = std::make_shared<Tensor>(std::move(labels));
  nodes_[id].back = [id, p, glabels, sum_a, sum_b, members, n](Graph& g) {
    const T gy = g.nodes_[id].grad[0];
    const T* pp = g.nodes_[p].value.data();
    const T* gp = glabels->data();
    T* gx = g.nodes_[p].grad.data();
    const T scale = -gy / static_cast<T>(members);  // d(1 - mean dice)/d dice_m
    for (std::size_t m = 0; m < members; ++m) {
      const T a = (*sum_a)[m], b = (*sum_b)[m];
      const T inv_b2 = T(1) / (b * b);
      const T* pm = pp + m * n;
      const T* gm = gp + m * n;
      T* gxm = gx + m * n;
      // d dice / d p_j = (2 g_j b - 2 p_j a) / b^2
      for (std::size_t i = 0; i < n; ++i) {
        gxm[i] += scale * (T(2) * gm[i] * b - T(2) * pm[i] * a) * inv_b2;
      }
    }
  };
  return res;
}

// ---------------------------------------------------------------------------

template <typename T>
void Graph<T>::backward(int loss_id) {
  check(loss_id);
  require(nodes_[loss_id].value.size() == 1, ErrKind::parameter, "backward starts from a scalar node");
  require(nodes_[loss_id].requires_grad, ErrKind::parameter, "loss does not depend on any trainable input");
  for (auto& node : nodes_) {
    if (node.requires_grad) node.grad = Tensor(node.value.dims());
  }
  nodes_[loss_id].grad[0] = T(1);
  for (int i = loss_id; i >= 0; --i) {
    if (nodes_[i].requires_grad && nodes_[i].back) nodes_[i].back(*this);
  }
}

template class Graph<float>;
template class Graph<double>;

// ---------------------------------------------------------------------------

double grad_check(const std::vector<TensorD>& inputs,
                  const std::function<int(Graph<double>&, const std::vector<int>&)>& build, double eps) {
  require(!inputs.empty(), ErrKind::parameter, "grad_check needs at least one input");

  Graph<double> g;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& t : inputs) ids.push_back(g.leaf(t, true));
  const int loss = build(g, ids);
  require(g.data(loss).size() == 1, ErrKind::parameter, "grad_check output must be scalar");
  g.backward(loss);
  std::vector<TensorD> analytic;
  analytic.reserve(inputs.size());
  for (int id : ids) analytic.push_back(g.grad(id));

  auto eval = [&](const std::vector<TensorD>& in) {
    Graph<double> h;
    std::vector<int> hid;
    hid.reserve(in.size());
    for (const auto& t : in) hid.push_back(h.leaf(t, false));
    const int out = build(h, hid);
    return h.data(out)[0];
  };

  double worst = 0.0;
  std::vector<TensorD> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = probe[i][j];
      probe[i][j] = keep + eps;
      const double fp = eval(probe);
      probe[i][j] = keep - eps;
      const double fm = eval(probe);
      probe[i][j] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace pwtk::ad
