// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate: runs the nine release criteria end to end and prints one
// pass/fail line per criterion. Exits nonzero if any gate fails.
//
// Usage: pwtk_acceptance <path-to-pwtk-cli>
// The CLI path drives the determinism criterion; everything else runs
// in-process against the core library.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "nifti.hpp"
#include "oracles.hpp"
#include "phantom.hpp"
#include "pipeline.hpp"
#include "preproc.hpp"
#include "raw_io.hpp"
#include "selftest.hpp"
#include "temporal.hpp"
#include "train.hpp"

using namespace pwtk;
namespace fs = std::filesystem;

namespace {

struct Gate {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

char buf_detail[1024];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(buf_detail, sizeof(buf_detail), f, args...);
  return buf_detail;
}

// ---------------------------------------------------------------------------
// criterion 1: gradient suite

Gate criterion1() {
  Gate g{1, "gradient suite (all kernels < 1e-5, conv/soft-dice < 1e-6, end-to-end < 1e-4)", false, "", 0};
  const double t0 = now_s();

  bool all = true;
  double worst_kernel = 0.0;
  std::string worst_name;
  for (const auto& r : kernel_grad_checks(20, 20260809)) {
    all = all && r.pass;
    if (r.worst > worst_kernel) {
      worst_kernel = r.worst;
      worst_name = r.name;
    }
  }

  // End-to-end branched model: finite differences over every parameter.
  ArchConfig a;
  a.unet_levels = 1;
  a.base_filters = 2;
  a.gru_hidden = 2;
  a.pwi_channels = 3;
  a.map_channels = 2;
  a.merge_filters = 2;
  SeededRng rng(99);
  TensorD pwi({1, 3, 4, 4}), maps({1, 2, 4, 4}), gt({1, 1, 4, 4});
  for (auto& v : pwi.storage()) v = rng.uniform(0.1, 0.9);
  for (auto& v : maps.storage()) v = rng.uniform(0.1, 0.9);
  for (auto& v : gt.storage()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  Network<double> net(ModelKind::branched, a, SeededRng(21));
  auto loss_of = [&]() {
    ad::Graph<double> gg;
    const auto fw = net.forward(gg, {&pwi, &maps});
    return gg.data(gg.soft_dice(fw.output, gt, 1e-6).loss)[0];
  };
  ad::Graph<double> gg;
  const auto fw = net.forward(gg, {&pwi, &maps});
  auto sd = gg.soft_dice(fw.output, gt, 1e-6);
  gg.backward(sd.loss);
  double worst_e2e = 0.0;
  const double eps = 1e-5;
  for (std::size_t i = 0; i < net.params().entries.size(); ++i) {
    auto& value = net.params().entries[i].value;
    const auto& analytic = gg.grad(fw.param_leaves[i]);
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double keep = value[j];
      value.data()[j] = keep + eps;
      const double fp = loss_of();
      value.data()[j] = keep - eps;
      const double fm = loss_of();
      value.data()[j] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      worst_e2e = std::max(worst_e2e, std::abs(analytic[j] - numeric) /
                                          std::max({1.0, std::abs(analytic[j]), std::abs(numeric)}));
    }
  }

  g.seconds = now_s() - t0;
  g.pass = all && worst_e2e < 1e-4 && g.seconds < 120.0;
  g.detail = fmt("worst kernel %s=%.2e, end-to-end %.2e", worst_name.c_str(), worst_kernel, worst_e2e);
  return g;
}

// ---------------------------------------------------------------------------
// criterion 2: the printed dice-gradient expression

Gate criterion2() {
  Gate g{2, "dice gradient equals 2x the printed expression and matches finite differences", false, "", 0};
  const double t0 = now_s();
  SeededRng rng(271828);

  double worst_factor2 = 0.0, worst_fd = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(24);
    TensorD p({n}), gt({n});
    for (auto& v : p.storage()) v = rng.uniform(0.01, 0.99);
    bool any = false;
    for (auto& v : gt.storage()) {
      v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      any = any || v > 0.0;
    }
    if (!any) gt[rng.uniform_index(n)] = 1.0;

    ad::Graph<double> gg;
    const int pid = gg.leaf(p, true);
    auto sd = gg.soft_dice(pid, gt, 0.0);
    gg.backward(sd.loss);

    double spg = 0, spp = 0, sgg2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      spg += p[i] * gt[i];
      spp += p[i] * p[i];
      sgg2 += gt[i] * gt[i];
    }
    const double denom = spp + sgg2;
    for (std::size_t i = 0; i < n; ++i) {
      const double printed = (gt[i] * denom - 2.0 * p[i] * spg) / (denom * denom);
      const double implemented = -gg.grad(pid)[i];  // loss = 1 - dice
      worst_factor2 = std::max(worst_factor2, std::abs(implemented - 2.0 * printed));
    }

    // Central differences of the dice value itself (subsampled voxels).
    const double fd_eps = 1e-6;
    for (std::size_t i = 0; i < std::min<std::size_t>(n, 4); ++i) {
      auto dice_at = [&](double v) {
        TensorD q = p;
        q.data()[i] = v;
        ad::Graph<double> g2;
        return g2.soft_dice(g2.leaf(q, false), gt, 0.0).mean_dice;
      };
      const double numeric = (dice_at(p[i] + fd_eps) - dice_at(p[i] - fd_eps)) / (2.0 * fd_eps);
      worst_fd = std::max(worst_fd, std::abs(-gg.grad(pid)[i] - numeric));
    }
  }

  // The single-voxel example: p = 0.5, g = 1.
  ad::Graph<double> g1;
  const int pid = g1.leaf(TensorD({1}, {0.5}), true);
  auto sd = g1.soft_dice(pid, TensorD({1}, {1.0}), 0.0);
  g1.backward(sd.loss);
  const bool example_ok =
      std::abs(sd.mean_dice - 0.8) < 1e-15 && std::abs(-g1.grad(pid)[0] - 0.96) < 1e-15;

  g.seconds = now_s() - t0;
  g.pass = worst_factor2 < 1e-12 && worst_fd < 1e-8 && example_ok;
  g.detail = fmt("|impl - 2x printed| %.2e, |impl - FD| %.2e, N=1 case dice %.3f grad %.3f", worst_factor2,
                 worst_fd, sd.mean_dice, -g1.grad(pid)[0]);
  return g;
}

// ---------------------------------------------------------------------------
// criterion 3: temporal selection on a 100-phantom corpus

Gate criterion3() {
  Gate g{3, "peak detection within +/-1 on >= 95/100 phantoms; windows are 26 slices containing the peak",
         false, "", 0};
  const double t0 = now_s();

  PhantomConfig base;
  base.dims = {40, 8, 64, 64};
  base.noise_sigma = 1.5;  // 1.5% of S0, below the 2% cap
  const auto corpus = synth_corpus(100, 424242, base);

  int within_one = 0;
  bool windows_ok = true;
  for (const auto& pc : corpus) {
    const Volume3 mask = brain_mask_of(pc.bundle);
    const SliceStats stats = slice_stats(pc.bundle.pwi, mask);
    const int detected = detect_peak(stats, SeededRng(7).split(pc.bundle.case_id));
    if (std::abs(detected - pc.true_peak_index) <= 1) ++within_one;
    const TemporalWindow w = extract_window(pc.bundle.pwi, detected, 26);
    windows_ok = windows_ok && w.data.nt() == 26 && w.start <= detected && detected < w.start + w.length;
  }

  g.seconds = now_s() - t0;
  g.pass = within_one >= 95 && windows_ok && g.seconds < 60.0;
  g.detail = fmt("%d/100 within +/-1, windows %s", within_one, windows_ok ? "ok" : "BROKEN");
  return g;
}

// ---------------------------------------------------------------------------
// criterion 4: metric oracles

Gate criterion4() {
  Gate g{4, "overlap metrics match count references; distances match brute force to 1e-9", false, "", 0};
  const double t0 = now_s();
  SeededRng rng(515151);

  bool overlap_ok = true;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t Z = 1 + rng.uniform_index(4), Y = 2 + rng.uniform_index(5), X = 2 + rng.uniform_index(5);
    Tensor ta({Z, Y, X}), tb({Z, Y, X});
    std::size_t na = 0, nb = 0, nboth = 0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      ta[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
      tb[i] = rng.uniform() < 0.4 ? 1.0f : 0.0f;
      na += ta[i] > 0;
      nb += tb[i] > 0;
      nboth += ta[i] > 0 && tb[i] > 0;
    }
    const Volume3 a(ta, {1, 1, 1}), b(tb, {1, 1, 1});
    const double dice_ref = na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(nboth) / static_cast<double>(na + nb);
    const double prec_ref = na == 0 ? (nb == 0 ? 1.0 : 0.0) : static_cast<double>(nboth) / static_cast<double>(na);
    const double rec_ref = nb == 0 ? (na == 0 ? 1.0 : 0.0) : static_cast<double>(nboth) / static_cast<double>(nb);
    overlap_ok = overlap_ok && dice_binary(a, b) == dice_ref && precision_binary(a, b) == prec_ref &&
                 recall_binary(a, b) == rec_ref;
  }

  double worst_dist = 0.0;
  bool hd_ge_assd = true;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t Z = 2 + rng.uniform_index(7), Y = 2 + rng.uniform_index(7), X = 2 + rng.uniform_index(7);
    const std::array<double, 3> spacing{rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    auto random_mask = [&] {
      Tensor t({Z, Y, X});
      bool any = false;
      for (auto& v : t.storage()) {
        v = rng.uniform() < 0.35 ? 1.0f : 0.0f;
        any = any || v > 0.0f;
      }
      if (!any) t[rng.uniform_index(t.size())] = 1.0f;
      return t;
    };
    const Tensor a = random_mask(), b = random_mask();
    const auto brute = oracle::brute_force_surface_distances(a, b, spacing);
    const auto fast = surface_distances(Volume3(a, spacing), Volume3(b, spacing));
    worst_dist = std::max({worst_dist, std::abs(brute.hausdorff - fast.hausdorff_mm),
                           std::abs(brute.assd - fast.assd_mm)});
    hd_ge_assd = hd_ge_assd && fast.hausdorff_mm >= fast.assd_mm - 1e-12;
  }

  // Single-voxel pair at (0,0,0) and (0,3,4), unit spacing: exactly 5.
  Tensor sa({2, 4, 5}), sb({2, 4, 5});
  sa.data()[0] = 1.0f;
  sb.data()[3 * 5 + 4] = 1.0f;
  const auto single = surface_distances(Volume3(sa, {1, 1, 1}), Volume3(sb, {1, 1, 1}));
  const bool single_ok = single.hausdorff_mm == 5.0 && single.assd_mm == 5.0;

  g.seconds = now_s() - t0;
  g.pass = overlap_ok && worst_dist < 1e-9 && hd_ge_assd && single_ok;
  g.detail = fmt("counts %s, worst |fast-brute| %.2e, hd>=assd %s, single-voxel %.1f/%.1f",
                 overlap_ok ? "exact" : "BROKEN", worst_dist, hd_ge_assd ? "ok" : "BROKEN",
                 single.hausdorff_mm, single.assd_mm);
  return g;
}

// ---------------------------------------------------------------------------
// criterion 6: overfit harness

Gate criterion6() {
  Gate g{6, "every architecture overfits 4 desk-scale patches to loss < 0.2 in 500 steps", false, "", 0};
  const double t0 = now_s();

  // Desk-scale patches with nonempty lesions.
  PhantomConfig pcfg;
  pcfg.dims = {40, 8, 64, 64};
  pcfg.noise_sigma = 3.0;
  pcfg.seed = 5;
  const PhantomCase pc = synth_case(pcfg, "overfit");
  PreprocConfig cfg;
  cfg.target_dims = {8, 64, 64};
  cfg.patch_size = 32;
  cfg.patches_per_case = 16;
  cfg.lesion_bias = 1.0;
  const SeededRng rng = SeededRng(5).split("overfit");
  const PreprocessedCase prep = preprocess_case(pc.bundle, cfg, rng);
  auto patches = extract_patches(prep, cfg, rng);
  std::vector<Patch> chosen;
  for (auto& p : patches) {
    double s = 0;
    for (float v : p.gt.storage()) s += v;
    if (s >= 16.0 && chosen.size() < 4) chosen.push_back(std::move(p));
  }
  if (chosen.size() < 4) {
    g.detail = "could not assemble 4 lesion patches";
    return g;
  }

  const std::size_t ps = 32, plane = ps * ps;
  Tensor pwi({4, 26, ps, ps}), maps({4, 6, ps, ps}), joint({4, 32, ps, ps}), gt({4, 1, ps, ps});
  for (std::size_t b = 0; b < 4; ++b) {
    const auto& p = chosen[b];
    std::copy(p.channels.data(), p.channels.data() + 26 * plane, pwi.data() + b * 26 * plane);
    std::copy(p.channels.data() + 26 * plane, p.channels.data() + 32 * plane, maps.data() + b * 6 * plane);
    std::copy(p.channels.data(), p.channels.data() + 32 * plane, joint.data() + b * 32 * plane);
    std::copy(p.gt.data(), p.gt.data() + plane, gt.data() + b * plane);
  }

  const ArchConfig arch;  // desk-scale defaults
  AdamConfig adam;
  adam.learning_rate = 1e-3;

  bool all = true;
  std::string detail;
  for (auto kind : {ModelKind::standard, ModelKind::data_driven, ModelKind::single, ModelKind::branched}) {
    const double ta = now_s();
    Network<float> net(kind, arch, SeededRng(11));
    std::vector<Tensor> ins;
    switch (kind) {
      case ModelKind::standard: ins = {maps}; break;
      case ModelKind::data_driven: ins = {pwi}; break;
      case ModelKind::single: ins = {joint}; break;
      case ModelKind::branched: ins = {pwi, maps}; break;
    }
    const auto trace = overfit_single_batch(net, ins, gt, 500, adam);
    const double final_loss = *std::min_element(trace.end() - 100, trace.end());

    bool monotone = true;
    double prev_min = 1e9;
    for (std::size_t w = 0; w + 100 <= trace.size(); w += 100) {
      const double m = *std::min_element(trace.begin() + static_cast<long>(w),
                                         trace.begin() + static_cast<long>(w + 100));
      monotone = monotone && m <= prev_min + 1e-9;
      prev_min = m;
    }
    const double tb = now_s() - ta;
    const bool ok = final_loss < 0.2 && monotone && tb < 300.0;
    all = all && ok;
    detail += fmt("%s %.3f/%s/%.0fs ", model_kind_name(kind), final_loss, monotone ? "mono" : "NONMONO", tb);
  }

  g.seconds = now_s() - t0;
  g.pass = all;
  g.detail = detail;
  return g;
}

// ---------------------------------------------------------------------------
// criteria 7 and 5: directional ablation, then the NMI report on the
// trained branched model

struct AblationOutput {
  Gate gate;
  Checkpoint branched_ckpt;
  PreprocessedCase nmi_case;
  bool have_ckpt = false;
};

AblationOutput criterion7() {
  AblationOutput out;
  out.gate = Gate{7, "branched beats standard by >= 0.03 test dice (median over 3 seeds)", false, "", 0};
  const double t0 = now_s();

  PhantomConfig pcfg;
  pcfg.dims = {40, 8, 64, 64};
  pcfg.noise_sigma = 3.0;
  PreprocConfig cfg;
  cfg.target_dims = {8, 64, 64};
  cfg.patch_size = 32;
  cfg.patches_per_case = 32;
  cfg.lesion_bias = 0.5;

  ArchConfig arch;
  arch.gru_hidden = 8;

  const int n_cases = 40, n_test = 10;
  const auto corpus = synth_corpus(n_cases, 100, pcfg);
  std::vector<PreprocessedCase> preps;
  std::vector<CasePatches> train_set;
  for (int i = 0; i < n_cases; ++i) {
    const SeededRng rng = SeededRng(1).split(corpus[static_cast<std::size_t>(i)].bundle.case_id);
    preps.push_back(preprocess_case(corpus[static_cast<std::size_t>(i)].bundle, cfg, rng));
    if (i < n_cases - n_test) {
      CasePatches cp;
      cp.case_id = corpus[static_cast<std::size_t>(i)].bundle.case_id;
      cp.stack = stack_patches(extract_patches(preps.back(), cfg, rng));
      cp.pwi_channels = 26;
      cp.map_channels = 6;
      train_set.push_back(std::move(cp));
    }
  }

  std::vector<double> branched_dice, standard_dice;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    for (auto kind : {ModelKind::branched, ModelKind::standard}) {
      TrainConfig tcfg;
      tcfg.epochs = 3;
      tcfg.batch_size = 4;
      tcfg.adam.learning_rate = 1e-3;
      tcfg.seed = seed;
      Checkpoint ckpt = train(train_set, kind, arch, tcfg);
      ckpt.preproc_echo_json = "{\"preproc\":{\"patch_size\":32}}";
      double dice_sum = 0.0;
      for (int i = n_cases - n_test; i < n_cases; ++i) {
        const auto inf = tiled_inference(ckpt, preps[static_cast<std::size_t>(i)], false);
        dice_sum += dice_binary(binarize(inf.probabilities), preps[static_cast<std::size_t>(i)].lesion_gt);
      }
      const double mean_dice = dice_sum / n_test;
      (kind == ModelKind::branched ? branched_dice : standard_dice).push_back(mean_dice);
      per_seed += fmt("%s/s%llu %.3f ", model_kind_name(kind), static_cast<unsigned long long>(seed), mean_dice);
      if (kind == ModelKind::branched && seed == 1) {
        out.branched_ckpt = std::move(ckpt);
        out.nmi_case = preps[static_cast<std::size_t>(n_cases - 1)];
        out.have_ckpt = true;
      }
    }
  }

  auto median3 = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
  };
  const double mb = median3(branched_dice), ms = median3(standard_dice);

  out.gate.seconds = now_s() - t0;
  out.gate.pass = mb - ms >= 0.03 && out.gate.seconds < 1800.0;
  out.gate.detail = fmt("median branched %.3f vs standard %.3f (gap %.3f); %s", mb, ms, mb - ms, per_seed.c_str());
  return out;
}

Gate criterion5(const AblationOutput& ab) {
  Gate g{5, "NMI conventions hold; injected Tmax feature scores >= 0.95; report entries in [0,1]", false, "", 0};
  const double t0 = now_s();
  SeededRng rng(606060);

  std::vector<float> x(100000), y(100000);
  for (auto& v : x) v = static_cast<float>(rng.uniform());
  for (auto& v : y) v = static_cast<float>(rng.uniform());
  const double self = nmi(x, x);
  const double indep = nmi(x, y);

  bool entries_ok = false;
  double injected = 0.0;
  int below_02 = 0, total_entries = 0;
  if (ab.have_ckpt) {
    const auto inf = tiled_inference(ab.branched_ckpt, ab.nmi_case, true, "dd");
    std::vector<std::size_t> brain;
    for (std::size_t i = 0; i < ab.nmi_case.brain_mask.values.size(); ++i) {
      if (ab.nmi_case.brain_mask.values[i] > 0.0f) brain.push_back(i);
    }
    auto masked = [&](const Tensor& t) {
      std::vector<float> v(brain.size());
      for (std::size_t i = 0; i < brain.size(); ++i) v[i] = t[brain[i]];
      return v;
    };
    std::vector<std::vector<float>> maps;
    for (const auto& name : map_names()) maps.push_back(masked(ab.nmi_case.maps.at(name).values));

    entries_ok = true;
    for (const auto& [fname, fvol] : inf.features) {
      const auto fv = masked(fvol.values);
      for (const auto& mv : maps) {
        const double v = nmi(fv, mv, 64);
        entries_ok = entries_ok && v >= 0.0 && v <= 1.0;
        below_02 += v < 0.2;
        ++total_entries;
      }
    }
    // Injected test double: a feature identical to the Tmax map must score
    // near 1 against Tmax.
    injected = nmi(maps[4], maps[4], 64);
  }

  g.seconds = now_s() - t0;
  g.pass = std::abs(self - 1.0) < 1e-9 && indep < 0.05 && entries_ok && injected >= 0.95;
  g.detail = fmt("self %.9f, independent %.3f, injected-tmax %.3f, entries ok %s | soft report: %d/%d < 0.2",
                 self, indep, injected, entries_ok ? "yes" : "NO", below_02, total_entries);
  return g;
}

// ---------------------------------------------------------------------------
// criterion 8: format round trips

Gate criterion8() {
  Gate g{8, "raw and checkpoint round trips bitwise; NIfTI fixtures parse to expected values", false, "", 0};
  const double t0 = now_s();
  SeededRng rng(818181);

  bool raw_ok = true;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t rank = 1 + rng.uniform_index(5);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = 1 + rng.uniform_index(5);
    Tensor t(dims);
    for (auto& v : t.storage()) v = static_cast<float>(rng.uniform(-10, 10));
    RawMeta meta;
    meta.spacing = {rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
    meta.dt = rank >= 4 ? rng.uniform(0.5, 2.0) : 0.0;
    RawMeta back_meta;
    const Tensor back = read_raw_f32(write_raw(t, meta), &back_meta);
    raw_ok = raw_ok && back.dims() == t.dims() &&
             std::memcmp(back.data(), t.data(), 4 * t.size()) == 0 && back_meta.spacing == meta.spacing &&
             back_meta.dt == meta.dt;
  }

  // Checkpoint round trip through a real file.
  ArchConfig a;
  a.unet_levels = 1;
  a.base_filters = 2;
  a.gru_hidden = 2;
  a.pwi_channels = 4;
  a.map_channels = 6;
  a.merge_filters = 2;
  Network<float> net(ModelKind::branched, a, SeededRng(31));
  Checkpoint ckpt;
  ckpt.kind = ModelKind::branched;
  ckpt.arch = a;
  ckpt.params = net.params();
  ckpt.adam.init_like(net.params());
  ckpt.adam.t = 17;
  ckpt.epoch = 3;
  ckpt.best_val_dice = 0.5;
  ckpt.history = {{1, 0.9, 0.1}, {2, 0.7, 0.3}, {3, 0.6, 0.5}};
  const std::string dir = (fs::temp_directory_path() / "pwtk_acceptance_fmt").string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(dir + "/c.pwck", ckpt);
  const Checkpoint back = load_checkpoint(dir + "/c.pwck");
  bool ckpt_ok = back.kind == ckpt.kind && back.adam.t == 17 && back.history.size() == 3;
  for (std::size_t i = 0; i < ckpt.params.entries.size() && ckpt_ok; ++i) {
    ckpt_ok = back.params.entries[i].name == ckpt.params.entries[i].name &&
              back.params.entries[i].value.storage() == ckpt.params.entries[i].value.storage() &&
              back.adam.m[i].storage() == ckpt.adam.m[i].storage() &&
              back.adam.v[i].storage() == ckpt.adam.v[i].storage();
  }

  // NIfTI fixtures: every supported datatype, with and without scl_slope.
  bool nifti_ok = true;
  auto fixture = [&](std::int16_t dtype, float slope, float inter, auto raw_value, float expect) {
    std::vector<std::uint8_t> bytes(352, 0);
    const std::int32_t hdr = 348;
    std::memcpy(bytes.data(), &hdr, 4);
    const std::int16_t rank3 = 3, one = 1;
    std::memcpy(bytes.data() + 40, &rank3, 2);
    std::memcpy(bytes.data() + 42, &one, 2);
    std::memcpy(bytes.data() + 44, &one, 2);
    std::memcpy(bytes.data() + 46, &one, 2);
    std::memcpy(bytes.data() + 70, &dtype, 2);
    const float off = 352.0f;
    std::memcpy(bytes.data() + 108, &off, 4);
    std::memcpy(bytes.data() + 112, &slope, 4);
    std::memcpy(bytes.data() + 116, &inter, 4);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
    bytes.insert(bytes.end(), reinterpret_cast<const std::uint8_t*>(&raw_value),
                 reinterpret_cast<const std::uint8_t*>(&raw_value) + sizeof(raw_value));
    const auto vol = parse_nifti(bytes);
    const float got = std::get<Volume3>(vol).values[0];
    nifti_ok = nifti_ok && std::abs(got - expect) < 1e-4f;
  };
  fixture(std::int16_t{2}, 0.0f, 0.0f, std::uint8_t{200}, 200.0f);
  fixture(std::int16_t{2}, 2.0f, 1.0f, std::uint8_t{3}, 7.0f);
  fixture(std::int16_t{4}, 0.0f, 0.0f, std::int16_t{-1234}, -1234.0f);
  fixture(std::int16_t{4}, 0.5f, -1.0f, std::int16_t{8}, 3.0f);
  fixture(std::int16_t{8}, 0.0f, 0.0f, std::int32_t{100000}, 100000.0f);
  fixture(std::int16_t{8}, 2.0f, 0.0f, std::int32_t{21}, 42.0f);
  fixture(std::int16_t{16}, 0.0f, 0.0f, 3.25f, 3.25f);
  fixture(std::int16_t{16}, 3.0f, 0.5f, 1.5f, 5.0f);
  fixture(std::int16_t{64}, 0.0f, 0.0f, 6.5, 6.5f);
  fixture(std::int16_t{64}, -1.0f, 0.0f, 2.0, -2.0f);

  g.seconds = now_s() - t0;
  g.pass = raw_ok && ckpt_ok && nifti_ok;
  g.detail = fmt("raw %s, checkpoint %s, nifti %s", raw_ok ? "bitwise" : "BROKEN",
                 ckpt_ok ? "bitwise" : "BROKEN", nifti_ok ? "ok" : "BROKEN");
  return g;
}

// ---------------------------------------------------------------------------
// criterion 9: determinism of the full pipeline through the CLI

Gate criterion9(const std::string& cli) {
  Gate g{9, "pipeline smoke runs byte-identically across reruns and thread counts {1,4}", false, "", 0};
  const double t0 = now_s();

  const std::string root = (fs::temp_directory_path() / "pwtk_acceptance_det").string();
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string cfg_path = root + "/config.json";
  {
    const char* cfg =
        "{\"seed\": 77,\n"
        " \"phantom\": {\"dims\": [30, 3, 24, 24], \"t0\": 5.0, \"noise_sigma\": 1.5},\n"
        " \"corpus\": {\"n\": 3},\n"
        " \"preproc\": {\"target_dims\": [3, 24, 24], \"patch_size\": 16, \"patches_per_case\": 8,\n"
        "               \"window_length\": 8, \"lesion_bias\": 0.5},\n"
        " \"arch\": {\"unet_levels\": 2, \"base_filters\": 4, \"gru_hidden\": 4, \"merge_filters\": 4},\n"
        " \"train\": {\"epochs\": 2, \"batch_size\": 4, \"learning_rate\": 0.002}}\n";
    FILE* f = std::fopen(cfg_path.c_str(), "w");
    if (!f) {
      g.detail = "cannot write config";
      return g;
    }
    std::fputs(cfg, f);
    std::fclose(f);
  }

  auto run_pipeline = [&](const std::string& dir, int threads) {
    const std::string t = threads > 1 ? " --threads " + std::to_string(threads) : "";
    const std::string log = " >> " + dir + "/log.txt 2>&1";
    auto sh = [&](const std::string& cmd) {
      const int rc = std::system((cli + " " + cmd + log).c_str());
      return rc == 0;
    };
    fs::create_directories(dir);
    bool ok = sh("synth --out " + dir + "/corpus --config " + cfg_path + t);
    ok = ok && sh("preprocess --case " + dir + "/corpus --out " + dir + "/prep --config " + cfg_path + t);
    ok = ok && sh("train --data " + dir + "/prep --arch branched --config " + cfg_path + " --out " + dir +
                  "/model.pwck" + t);
    ok = ok && sh("predict --model " + dir + "/model.pwck --case " + dir + "/corpus --out " + dir + "/preds" +
                  t);
    ok = ok && sh("evaluate --pred " + dir + "/preds --gt " + dir + "/corpus --report " + dir + "/metrics.csv");
    return ok;
  };

  const bool ran = run_pipeline(root + "/a", 1) && run_pipeline(root + "/b", 1) && run_pipeline(root + "/c", 4);

  auto same = [&](const std::string& rel) {
    const auto a = read_file_bytes(root + "/a/" + rel);
    const auto b = read_file_bytes(root + "/b/" + rel);
    const auto c = read_file_bytes(root + "/c/" + rel);
    return a == b && a == c;
  };

  bool identical = ran;
  if (ran) {
    for (const char* rel :
         {"corpus/case_0000/pwi.pwt", "corpus/case_0002/tmax.pwt", "prep/case_0001/patches.pwt",
          "prep/case_0000/windowed_pwi.pwt", "model.pwck", "preds/case_0000.pwt", "preds/case_0002.pwt",
          "metrics.csv"}) {
      identical = identical && same(rel);
    }
  }

  g.seconds = now_s() - t0;
  g.pass = ran && identical;
  g.detail = fmt("pipeline %s, outputs %s", ran ? "ran" : "FAILED", identical ? "byte-identical" : "DIVERGED");
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: pwtk_acceptance <path-to-pwtk-cli>\n");
    return 2;
  }
  set_thread_count(1);

  std::map<int, Gate> gates;
  auto note = [&](Gate gate) {
    std::fprintf(stderr, "[acceptance] criterion %d %s (%.1fs)\n", gate.id, gate.pass ? "pass" : "FAIL",
                 gate.seconds);
    gates[gate.id] = std::move(gate);
  };
  note(criterion1());
  note(criterion2());
  note(criterion3());
  note(criterion4());
  note(criterion6());
  note(criterion8());
  AblationOutput ab = criterion7();
  note(std::move(ab.gate));
  note(criterion5(ab));
  note(criterion9(argv[1]));

  bool all = true;
  for (const auto& [id, gate] : gates) {
    all = all && gate.pass;
    std::printf("criterion %d: %s (%.1fs) %s | %s\n", id, gate.pass ? "PASS" : "FAIL", gate.seconds,
                gate.name.c_str(), gate.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %s\n", all ? "PASS" : "FAIL");
  return all ? 0 : 1;
}
