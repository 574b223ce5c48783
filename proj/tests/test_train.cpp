// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "oracles.hpp"
#include "phantom.hpp"
#include "preproc.hpp"
#include "raw_io.hpp"
#include "train.hpp"

using namespace pwtk;

TEST_SUITE_BEGIN("train");

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.unet_levels = 1;
  a.base_filters = 2;
  a.gru_hidden = 2;
  a.pwi_channels = 4;
  a.map_channels = 6;
  a.merge_filters = 2;
  return a;
}

// Tiny synthetic corpus: phantom cases preprocessed at miniature scale.
std::vector<CasePatches> tiny_corpus(int n_cases, int patches, std::uint64_t seed) {
  PhantomConfig pcfg;
  pcfg.dims = {16, 2, 16, 16};
  pcfg.t0 = 3.0;
  pcfg.noise_sigma = 1.0;
  PreprocConfig cfg;
  cfg.target_dims = {2, 16, 16};
  cfg.patch_size = 8;
  cfg.patches_per_case = patches;
  cfg.window_length = 4;
  cfg.lesion_bias = 0.5;

  std::vector<CasePatches> out;
  for (int i = 0; i < n_cases; ++i) {
    PhantomConfig c = pcfg;
    c.seed = seed + static_cast<std::uint64_t>(i);
    LesionSpec l;
    l.center = {1.0, 6.0 + i, 8.0};
    l.radii = {1.2, 4.0, 4.0};
    l.lambda = 0.1;
    c.lesions = {l};
    const PhantomCase pc = synth_case(c, corpus_case_id(i));
    const SeededRng rng = SeededRng(seed).split(pc.bundle.case_id);
    const PreprocessedCase prep = preprocess_case(pc.bundle, cfg, rng);
    CasePatches cp;
    cp.case_id = pc.bundle.case_id;
    cp.stack = stack_patches(extract_patches(prep, cfg, rng));
    cp.pwi_channels = 4;
    cp.map_channels = 6;
    out.push_back(std::move(cp));
  }
  return out;
}

}  // namespace

TEST_CASE("adam zero gradient is a fixpoint") {
  ParamStore<double> store;
  store.add("p", TensorD({3}, {1.0, -2.0, 0.5}));
  AdamState<double> state;
  state.init_like(store);
  AdamConfig cfg;
  adam_step(store, {TensorD({3})}, state, cfg);
  CHECK(state.t == 1);
  CHECK(store.entries[0].value.storage() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam first step moves by about lr in the gradient sign") {
  ParamStore<double> store;
  store.add("p", TensorD({2}, {0.0, 0.0}));
  AdamState<double> state;
  state.init_like(store);
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  adam_step(store, {TensorD({2}, {0.37, -42.0})}, state, cfg);
  // Bias correction makes m_hat / sqrt(v_hat) = sign(g) at t = 1.
  CHECK(store.entries[0].value[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(store.entries[0].value[1] == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam updates are elementwise") {
  ParamStore<double> store;
  store.add("p", TensorD({2}, {5.0, 5.0}));
  AdamState<double> state;
  state.init_like(store);
  AdamConfig cfg;
  for (int s = 0; s < 7; ++s) adam_step(store, {TensorD({2}, {1.3, 1.3})}, state, cfg);
  CHECK(store.entries[0].value[0] == store.entries[0].value[1]);
}

TEST_CASE("adam matches the reference formulation on random sequences") {
  SeededRng rng(55);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 3 + rng.uniform_index(6);
    std::vector<double> ref(n);
    for (auto& v : ref) v = rng.uniform(-2.0, 2.0);
    ParamStore<double> store;
    store.add("p", TensorD({n}, std::vector<double>(ref)));
    AdamState<double> state;
    state.init_like(store);
    AdamConfig cfg;
    cfg.learning_rate = rng.uniform(1e-4, 1e-2);
    oracle::AdamRefState ref_state;
    std::vector<double> grads(n);
    for (int s = 0; s < 50; ++s) {
      for (auto& v : grads) v = rng.uniform(-1.0, 1.0);
      adam_step(store, {TensorD({n}, std::vector<double>(grads))}, state, cfg);
      oracle::adam_reference_step(ref, grads, ref_state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(store.entries[0].value[i] - ref[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("case split is disjoint, covering, and proportional") {
  TrainConfig cfg;
  cfg.seed = 3;
  std::vector<std::size_t> train_idx, val_idx;
  SUBCASE("43 cases reproduce the 36/7 reference split") {
    split_cases(43, cfg, train_idx, val_idx);
    CHECK(val_idx.size() == 7);
    CHECK(train_idx.size() == 36);
  }
  SUBCASE("40 cases") {
    split_cases(40, cfg, train_idx, val_idx);
    CHECK(val_idx.size() == 7);  // round(40 * 7/43)
  }
  SUBCASE("disjoint and covering") {
    split_cases(12, cfg, train_idx, val_idx);
    std::vector<bool> seen(12, false);
    for (auto i : train_idx) seen[i] = true;
    for (auto i : val_idx) {
      CHECK(!seen[i]);
      seen[i] = true;
    }
    for (bool s : seen) CHECK(s);
  }
  SUBCASE("single case trains without validation") {
    split_cases(1, cfg, train_idx, val_idx);
    CHECK(val_idx.empty());
    CHECK(train_idx.size() == 1);
  }
}

TEST_CASE("training is deterministic in the seed") {
  const auto corpus = tiny_corpus(3, 4, 17);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.adam.learning_rate = 1e-3;
  cfg.seed = 5;
  const Checkpoint c1 = train(corpus, ModelKind::standard, tiny_arch(), cfg);
  const Checkpoint c2 = train(corpus, ModelKind::standard, tiny_arch(), cfg);
  REQUIRE(c1.history.size() == c2.history.size());
  for (std::size_t i = 0; i < c1.history.size(); ++i) {
    CHECK(c1.history[i].train_loss == c2.history[i].train_loss);
    CHECK(c1.history[i].val_dice == c2.history[i].val_dice);
  }
  for (std::size_t i = 0; i < c1.params.entries.size(); ++i) {
    CHECK(c1.params.entries[i].value.storage() == c2.params.entries[i].value.storage());
  }
}

TEST_CASE("zero learning rate freezes the loss history") {
  const auto corpus = tiny_corpus(3, 4, 23);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.adam.learning_rate = 0.0;
  cfg.seed = 5;
  const Checkpoint c = train(corpus, ModelKind::standard, tiny_arch(), cfg);
  REQUIRE(c.history.size() == 3);
  // Per-member dice makes the epochs mean independent of the shuffle.
  CHECK(c.history[1].train_loss == doctest::Approx(c.history[0].train_loss).epsilon(1e-12));
  CHECK(c.history[2].train_loss == doctest::Approx(c.history[0].train_loss).epsilon(1e-12));
  CHECK(c.history[1].val_dice == doctest::Approx(c.history[0].val_dice).epsilon(1e-12));
}

TEST_CASE("mini overfit run reduces the loss") {
  const auto corpus = tiny_corpus(1, 2, 31);
  Network<float> net(ModelKind::standard, tiny_arch(), SeededRng(2));
  // One fixed batch: the two patches of the single case.
  const std::size_t ps = 8;
  Tensor maps({2, 6, ps, ps});
  Tensor gt({2, 1, ps, ps});
  const std::size_t plane = ps * ps;
  for (std::size_t b = 0; b < 2; ++b) {
    const float* src = corpus[0].stack.data() + b * 11 * plane;
    std::copy(src + 4 * plane, src + 10 * plane, maps.data() + b * 6 * plane);
    std::copy(src + 10 * plane, src + 11 * plane, gt.data() + b * plane);
  }
  AdamConfig adam;
  adam.learning_rate = 1e-2;
  const auto trace = overfit_single_batch(net, {maps}, gt, 120, adam);
  REQUIRE(trace.size() == 120);
  const double first = trace.front();
  double best = 1e9;
  for (double v : trace) best = std::min(best, v);
  CHECK(best < first);
  CHECK(best < 0.5);
}

TEST_CASE("checkpoint round trip is bitwise and validates the architecture") {
  const auto corpus = tiny_corpus(2, 3, 41);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.seed = 9;
  Checkpoint ckpt = train(corpus, ModelKind::branched, tiny_arch(), cfg);
  ckpt.preproc_echo_json = "{\"seed\":9}";

  const std::string dir = (std::filesystem::temp_directory_path() / "pwtk_ckpt_test").string();
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/model.pwck";
  save_checkpoint(path, ckpt);

  SUBCASE("bitwise parameter round trip") {
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.kind == ModelKind::branched);
    CHECK(back.epoch == ckpt.epoch);
    REQUIRE(back.params.entries.size() == ckpt.params.entries.size());
    for (std::size_t i = 0; i < ckpt.params.entries.size(); ++i) {
      CHECK(back.params.entries[i].name == ckpt.params.entries[i].name);
      CHECK(back.params.entries[i].value.storage() == ckpt.params.entries[i].value.storage());
      CHECK(back.adam.m[i].storage() == ckpt.adam.m[i].storage());
      CHECK(back.adam.v[i].storage() == ckpt.adam.v[i].storage());
    }
    CHECK(back.adam.t == ckpt.adam.t);
  }

  SUBCASE("forward outputs are identical after reload") {
    const Checkpoint back = load_checkpoint(path);
    Network<float> n1(ckpt.kind, ckpt.arch, SeededRng(0));
    Network<float> n2(back.kind, back.arch, SeededRng(0));
    for (std::size_t i = 0; i < ckpt.params.entries.size(); ++i) {
      n1.params().entries[i].value = ckpt.params.entries[i].value;
      n2.params().entries[i].value = back.params.entries[i].value;
    }
    SeededRng rng(3);
    Tensor pwi({1, 4, 8, 8});
    Tensor maps({1, 6, 8, 8});
    for (auto& v : pwi.storage()) v = static_cast<float>(rng.uniform());
    for (auto& v : maps.storage()) v = static_cast<float>(rng.uniform());
    ad::Graph<float> g1, g2;
    const auto f1 = n1.forward(g1, {&pwi, &maps});
    const auto f2 = n2.forward(g2, {&pwi, &maps});
    CHECK(g1.data(f1.output).storage() == g2.data(f2.output).storage());
  }

  SUBCASE("a kind mismatch is rejected") {
    auto bytes = read_file_bytes(path);
    // "branched" and "standard" have equal length; swapping the metadata
    // kind must trip the parameter-table validation.
    const std::string from = "\"branched\"", to = "\"standard\"";
    for (std::size_t i = 0; i + from.size() < bytes.size(); ++i) {
      if (std::memcmp(bytes.data() + i, from.data(), from.size()) == 0) {
        std::memcpy(bytes.data() + i, to.data(), to.size());
        break;
      }
    }
    const std::string bad = dir + "/wrong_kind.pwck";
    write_file_bytes(bad, bytes);
    try {
      load_checkpoint(bad);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrKind::incompatible);
    }
  }

  SUBCASE("corrupted magic is a format error") {
    auto bytes = read_file_bytes(path);
    bytes[0] = 'X';
    const std::string bad = dir + "/bad_magic.pwck";
    write_file_bytes(bad, bytes);
    try {
      load_checkpoint(bad);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrKind::format);
    }
  }
}

TEST_CASE("empty corpus is rejected") {
  TrainConfig cfg;
  CHECK_THROWS_AS(train({}, ModelKind::standard, tiny_arch(), cfg), Error);
}

TEST_SUITE_END();
