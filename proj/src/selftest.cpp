// SPDX-License-Identifier: Apache-2.0
#include "selftest.hpp"

#include <cmath>
#include <functional>

#include <json.hpp>

#include "autodiff.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "oracles.hpp"
#include "train.hpp"

namespace pwtk {

namespace {

using ad::Graph;

TensorD rand_tensor(SeededRng& rng, std::vector<std::size_t> dims, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(dims));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero keep finite differences off the ReLU kink.
TensorD rand_tensor_off_kink(SeededRng& rng, std::vector<std::size_t> dims) {
  TensorD t(std::move(dims));
  for (auto& v : t.storage()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

TensorD rand_weights(SeededRng& rng, const std::vector<std::size_t>& dims) {
  TensorD t(dims);
  for (auto& v : t.storage()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double check_conv2d(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(3);
  const std::size_t F = 1 + rng.uniform_index(3);
  const std::size_t K = rng.uniform() < 0.5 ? 1 : 3;
  const std::size_t H = K + rng.uniform_index(4), W = K + rng.uniform_index(4);
  const int stride = rng.uniform() < 0.7 ? 1 : 2;
  const int pad = static_cast<int>(rng.uniform_index(2));

  std::vector<TensorD> inputs{rand_tensor(rng, {B, C, H, W}), rand_tensor(rng, {F, C, K, K}),
                              rand_tensor(rng, {F})};
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    const int y = g.conv2d(ids[0], ids[1], ids[2], stride, pad);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_pointwise(SeededRng rng, int which) {
  const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(3);
  const std::size_t H = 2 + rng.uniform_index(4), W = 2 + rng.uniform_index(4);
  std::vector<TensorD> inputs{which == 0 ? rand_tensor_off_kink(rng, {B, C, H, W})
                                         : rand_tensor(rng, {B, C, H, W}, -2.0, 2.0)};
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    int y = ids[0];
    if (which == 0) y = g.relu(y);
    if (which == 1) y = g.sigmoid(y);
    if (which == 2) y = g.tanh_act(y);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_maxpool2(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(2);
  const std::size_t H = 2 * (1 + rng.uniform_index(3)), W = 2 * (1 + rng.uniform_index(3));
  std::vector<TensorD> inputs{rand_tensor(rng, {B, C, H, W})};
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    const int y = g.maxpool2(ids[0]);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_upsample2(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(2);
  const std::size_t H = 1 + rng.uniform_index(4), W = 1 + rng.uniform_index(4);
  std::vector<TensorD> inputs{rand_tensor(rng, {B, C, H, W})};
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    const int y = g.upsample2(ids[0]);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_concat(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), H = 2 + rng.uniform_index(3), W = 2 + rng.uniform_index(3);
  std::vector<TensorD> inputs{rand_tensor(rng, {B, 1 + rng.uniform_index(3), H, W}),
                              rand_tensor(rng, {B, 1 + rng.uniform_index(3), H, W})};
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    const int y = g.concat_channels({ids[0], ids[1]});
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

std::vector<TensorD> gru_inputs(SeededRng& rng, std::size_t C, std::size_t hid, std::size_t B, std::size_t H,
                                std::size_t W) {
  std::vector<TensorD> inputs;
  inputs.push_back(rand_tensor(rng, {B, C, H, W}));
  for (int i = 0; i < 3; ++i) inputs.push_back(rand_tensor(rng, {hid, C, 1, 1}));    // wz wr wh
  for (int i = 0; i < 3; ++i) inputs.push_back(rand_tensor(rng, {hid, hid, 1, 1}));  // uz ur uh
  for (int i = 0; i < 3; ++i) inputs.push_back(rand_tensor(rng, {hid}, -0.5, 0.5));  // bz br bh
  return inputs;
}

ad::GruDirLeaves leaves_from(const std::vector<int>& ids, std::size_t base) {
  ad::GruDirLeaves p;
  p.wz = ids[base + 0];
  p.wr = ids[base + 1];
  p.wh = ids[base + 2];
  p.uz = ids[base + 3];
  p.ur = ids[base + 4];
  p.uh = ids[base + 5];
  p.bz = ids[base + 6];
  p.br = ids[base + 7];
  p.bh = ids[base + 8];
  return p;
}

double check_gru2d(SeededRng rng, ad::GruDirection dir) {
  const std::size_t B = 1, C = 1 + rng.uniform_index(2), hid = 1 + rng.uniform_index(2);
  const std::size_t H = 2 + rng.uniform_index(3), W = 2 + rng.uniform_index(3);
  auto inputs = gru_inputs(rng, C, hid, B, H, W);
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    const int y = g.gru2d(ids[0], leaves_from(ids, 1), dir);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_four_dir_gru(SeededRng rng) {
  const std::size_t B = 1, C = 1 + rng.uniform_index(2), hid = 1 + rng.uniform_index(2);
  const std::size_t H = 2 + rng.uniform_index(3), W = 2 + rng.uniform_index(3);
  std::vector<TensorD> inputs;
  inputs.push_back(rand_tensor(rng, {B, C, H, W}));
  for (int d = 0; d < 4; ++d) {
    auto dir_in = gru_inputs(rng, C, hid, B, H, W);
    for (std::size_t i = 1; i < dir_in.size(); ++i) inputs.push_back(std::move(dir_in[i]));
  }
  const SeededRng wr = rng.split("ws");
  return ad::grad_check(inputs, [&](Graph<double>& g, const std::vector<int>& ids) {
    SeededRng wcopy = wr;
    ad::GruLeaves gl;
    for (std::size_t d = 0; d < 4; ++d) gl.dir[d] = leaves_from(ids, 1 + 9 * d);
    const int y = g.four_dir_gru(ids[0], gl);
    return g.weighted_sum(y, rand_weights(wcopy, g.dims(y)));
  });
}

double check_soft_dice(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), H = 2 + rng.uniform_index(4), W = 2 + rng.uniform_index(4);
  TensorD p({B, 1, H, W});
  TensorD gt({B, 1, H, W});
  for (auto& v : p.storage()) v = rng.uniform(0.05, 0.95);
  for (auto& v : gt.storage()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return ad::grad_check({p}, [&](Graph<double>& g, const std::vector<int>& ids) {
    return g.soft_dice(ids[0], gt, 1e-6).loss;
  });
}

CheckResult worst_of(const std::string& name, int instances, std::uint64_t seed, double threshold,
                     const std::function<double(SeededRng)>& one) {
  CheckResult r;
  r.name = name;
  r.threshold = threshold;
  const SeededRng root = SeededRng(seed).split(name);
  for (int i = 0; i < instances; ++i) {
    r.worst = std::max(r.worst, one(root.split(static_cast<std::uint64_t>(i))));
  }
  r.pass = r.worst < threshold;
  return r;
}

}  // namespace

std::vector<CheckResult> kernel_grad_checks(int instances, std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(worst_of("conv2d", instances, seed, 1e-6, check_conv2d));
  out.push_back(worst_of("relu", instances, seed, 1e-5, [](SeededRng r) { return check_pointwise(r, 0); }));
  out.push_back(worst_of("sigmoid", instances, seed, 1e-5, [](SeededRng r) { return check_pointwise(r, 1); }));
  out.push_back(worst_of("tanh", instances, seed, 1e-5, [](SeededRng r) { return check_pointwise(r, 2); }));
  out.push_back(worst_of("maxpool2", instances, seed, 1e-5, check_maxpool2));
  out.push_back(worst_of("upsample2", instances, seed, 1e-5, check_upsample2));
  out.push_back(worst_of("concat", instances, seed, 1e-5, check_concat));
  out.push_back(worst_of("gru2d_si", instances, seed, 1e-5,
                         [](SeededRng r) { return check_gru2d(r, ad::GruDirection::si); }));
  out.push_back(worst_of("gru2d_is", instances, seed, 1e-5,
                         [](SeededRng r) { return check_gru2d(r, ad::GruDirection::is); }));
  out.push_back(worst_of("gru2d_ap", instances, seed, 1e-5,
                         [](SeededRng r) { return check_gru2d(r, ad::GruDirection::ap); }));
  out.push_back(worst_of("gru2d_pa", instances, seed, 1e-5,
                         [](SeededRng r) { return check_gru2d(r, ad::GruDirection::pa); }));
  out.push_back(worst_of("four_dir_gru", instances, seed, 1e-5, check_four_dir_gru));
  out.push_back(worst_of("soft_dice", instances, seed, 1e-6, check_soft_dice));
  return out;
}

namespace {

double check_conv_vs_reference(SeededRng rng) {
  const std::size_t B = 1 + rng.uniform_index(2), C = 1 + rng.uniform_index(3), F = 1 + rng.uniform_index(3);
  const std::size_t K = rng.uniform() < 0.5 ? 1 : 3;
  const std::size_t H = K + rng.uniform_index(4), W = K + rng.uniform_index(4);
  const int stride = rng.uniform() < 0.7 ? 1 : 2;
  const int pad = static_cast<int>(rng.uniform_index(2));
  TensorD x = rand_tensor(rng, {B, C, H, W});
  TensorD w = rand_tensor(rng, {F, C, K, K});
  TensorD b = rand_tensor(rng, {F});

  Graph<double> g;
  const int y = g.conv2d(g.constant(x), g.constant(w), g.constant(b), stride, pad);
  const TensorD ref = oracle::conv2d_reference(x, w, &b, stride, pad);
  const auto& got = g.data(y);
  require(got.same_dims(ref), ErrKind::shape, "conv reference dims mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    // Bitwise agreement: identical accumulation order in both routes.
    if (got[i] != ref[i]) worst = std::max(worst, 1.0);
  }
  return worst;
}

double check_adam_vs_reference(SeededRng rng) {
  const std::size_t n = 4 + rng.uniform_index(5);
  std::vector<double> p_ref(n), grads(n);
  for (auto& v : p_ref) v = rng.uniform(-1.0, 1.0);

  ParamStore<double> store;
  store.add("p", TensorD({n}, std::vector<double>(p_ref)));
  AdamState<double> state;
  state.init_like(store);
  AdamConfig cfg;
  cfg.learning_rate = 0.01;

  oracle::AdamRefState ref_state;
  double worst = 0.0;
  for (int step = 0; step < 20; ++step) {
    for (auto& v : grads) v = rng.uniform(-1.0, 1.0);
    adam_step(store, {TensorD({n}, std::vector<double>(grads))}, state, cfg);
    oracle::adam_reference_step(p_ref, grads, ref_state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(store.entries[0].value[i] - p_ref[i]));
    }
  }
  return worst;
}

double check_distances_vs_brute(SeededRng rng) {
  const std::size_t Z = 2 + rng.uniform_index(7), Y = 2 + rng.uniform_index(7), X = 2 + rng.uniform_index(7);
  const std::array<double, 3> spacing{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
  auto random_mask = [&](double fill) {
    Tensor t({Z, Y, X});
    bool any = false;
    for (auto& v : t.storage()) {
      v = rng.uniform() < fill ? 1.0f : 0.0f;
      any = any || v > 0.0f;
    }
    if (!any) t[rng.uniform_index(t.size())] = 1.0f;
    return t;
  };
  const Tensor a = random_mask(rng.uniform(0.1, 0.5));
  const Tensor b = random_mask(rng.uniform(0.1, 0.5));
  const auto brute = oracle::brute_force_surface_distances(a, b, spacing);
  const auto fast = surface_distances(Volume3(a, spacing), Volume3(b, spacing));
  return std::max(std::abs(brute.hausdorff - fast.hausdorff_mm), std::abs(brute.assd - fast.assd_mm));
}

double check_nmi_conventions(SeededRng rng) {
  const std::size_t n = 4096;
  std::vector<float> x(n), c(n, 1.0f);
  for (auto& v : x) v = static_cast<float>(rng.uniform());
  double worst = std::abs(nmi(x, x) - 1.0);
  worst = std::max(worst, std::abs(nmi(x, c)));  // constant partner => 0
  return worst;
}

}  // namespace

std::vector<CheckResult> oracle_checks(int instances, std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(worst_of("conv2d_vs_reference", instances, seed, 0.5, check_conv_vs_reference));
  out.push_back(worst_of("adam_vs_reference", instances, seed, 1e-12, check_adam_vs_reference));
  out.push_back(worst_of("surface_vs_brute_force", instances, seed, 1e-9, check_distances_vs_brute));
  out.push_back(worst_of("nmi_conventions", 1, seed, 1e-9, check_nmi_conventions));
  return out;
}

bool run_selftest(std::uint64_t seed) {
  bool ok = true;
  auto report = [&](const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
      ok = ok && r.pass;
      log_step("selftest", r.pass ? "pass" : "fail",
               nlohmann::json{{"check", r.name}, {"worst", r.worst}, {"threshold", r.threshold}}.dump());
    }
  };
  report(kernel_grad_checks(3, seed));
  report(oracle_checks(5, seed));
  return ok;
}

}  // namespace pwtk
