// SPDX-License-Identifier: Apache-2.0
#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metrics.hpp"
#include "nifti.hpp"
#include "raw_io.hpp"
#include "svg.hpp"

namespace pwtk {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json(const std::string& text, const std::string& what) {
  if (text.empty()) return json::object();
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrKind::usage, what + " is not valid JSON");
  require(j.is_object(), ErrKind::usage, what + " must be a JSON object");
  return j;
}

void check_keys(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      fail(ErrKind::usage, "unknown config key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

void get_dims4(const json& obj, const char* key, std::array<std::size_t, 4>& out) {
  if (!obj.contains(key)) return;
  const auto v = obj.at(key).get<std::vector<std::size_t>>();
  require(v.size() == 4, ErrKind::usage, std::string(key) + " must have 4 entries (T, Z, Y, X)");
  std::copy(v.begin(), v.end(), out.begin());
}

void get_dims3(const json& obj, const char* key, std::array<std::size_t, 3>& out) {
  if (!obj.contains(key)) return;
  const auto v = obj.at(key).get<std::vector<std::size_t>>();
  require(v.size() == 3, ErrKind::usage, std::string(key) + " must have 3 entries (Z, Y, X)");
  std::copy(v.begin(), v.end(), out.begin());
}

void get_range(const json& obj, const char* key, std::array<double, 2>& out) {
  if (!obj.contains(key)) return;
  const auto v = obj.at(key).get<std::vector<double>>();
  require(v.size() == 2, ErrKind::usage, std::string(key) + " must be [lo, hi]");
  out = {v[0], v[1]};
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& text) {
  const json j = parse_json(text, "pipeline config");
  check_keys(j, {"seed", "threads", "phantom", "corpus", "preproc", "arch", "train"}, "config root");

  PipelineConfig cfg;
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } else if (const char* env = std::getenv("PWTK_SEED"); env && *env) {
    cfg.seed = std::strtoull(env, nullptr, 10);
  }
  if (j.contains("threads")) set_thread_count(j.at("threads").get<int>());

  if (j.contains("phantom")) {
    const json& p = j.at("phantom");
    check_keys(p,
               {"dims", "spacing", "dt", "t0", "alpha", "beta", "s0", "kappa", "noise_sigma", "gamma_dilation",
                "core_lambda_threshold", "shell_washout", "adc_healthy", "adc_core_scale", "lesions"},
               "phantom");
    get_dims4(p, "dims", cfg.phantom.dims);
    if (p.contains("spacing")) {
      const auto v = p.at("spacing").get<std::vector<double>>();
      require(v.size() == 3, ErrKind::usage, "spacing must be [sz, sy, sx]");
      std::copy(v.begin(), v.end(), cfg.phantom.spacing.begin());
    }
    get_to(p, "dt", cfg.phantom.dt);
    get_to(p, "t0", cfg.phantom.t0);
    get_to(p, "alpha", cfg.phantom.alpha);
    get_to(p, "beta", cfg.phantom.beta);
    get_to(p, "s0", cfg.phantom.s0);
    get_to(p, "kappa", cfg.phantom.kappa);
    get_to(p, "noise_sigma", cfg.phantom.noise_sigma);
    get_to(p, "gamma_dilation", cfg.phantom.gamma_dilation);
    get_to(p, "core_lambda_threshold", cfg.phantom.core_lambda_threshold);
    get_to(p, "shell_washout", cfg.phantom.shell_washout);
    get_to(p, "adc_healthy", cfg.phantom.adc_healthy);
    get_to(p, "adc_core_scale", cfg.phantom.adc_core_scale);
    if (p.contains("lesions")) {
      for (const auto& lj : p.at("lesions")) {
        check_keys(lj, {"center", "radii", "lambda", "delay"}, "lesion");
        LesionSpec l;
        const auto c = lj.at("center").get<std::vector<double>>();
        const auto r = lj.at("radii").get<std::vector<double>>();
        require(c.size() == 3 && r.size() == 3, ErrKind::usage, "lesion center/radii must be [z, y, x]");
        std::copy(c.begin(), c.end(), l.center.begin());
        std::copy(r.begin(), r.end(), l.radii.begin());
        get_to(lj, "lambda", l.lambda);
        get_to(lj, "delay", l.delay);
        cfg.phantom.lesions.push_back(l);
      }
      cfg.phantom_lesions_fixed = !cfg.phantom.lesions.empty();
    }
  }

  if (j.contains("corpus")) {
    check_keys(j.at("corpus"), {"n"}, "corpus");
    get_to(j.at("corpus"), "n", cfg.corpus_n);
    require(cfg.corpus_n >= 1, ErrKind::usage, "corpus n must be >= 1");
  }

  if (j.contains("preproc")) {
    const json& p = j.at("preproc");
    check_keys(p,
               {"target_dims", "tmax_clip", "adc_clip", "scale_range", "patch_size", "patches_per_case",
                "lesion_bias", "window_length"},
               "preproc");
    get_dims3(p, "target_dims", cfg.preproc.target_dims);
    get_range(p, "tmax_clip", cfg.preproc.tmax_clip);
    get_range(p, "adc_clip", cfg.preproc.adc_clip);
    get_range(p, "scale_range", cfg.preproc.scale_range);
    get_to(p, "patch_size", cfg.preproc.patch_size);
    get_to(p, "patches_per_case", cfg.preproc.patches_per_case);
    get_to(p, "lesion_bias", cfg.preproc.lesion_bias);
    get_to(p, "window_length", cfg.preproc.window_length);
    cfg.preproc.validate();
  }

  if (j.contains("arch")) {
    const json& a = j.at("arch");
    check_keys(a,
               {"unet_levels", "base_filters", "kernel", "gru_hidden", "pwi_channels", "map_channels",
                "expansion_factor", "merge_filters", "post_fusion_gru"},
               "arch");
    get_to(a, "unet_levels", cfg.arch.unet_levels);
    get_to(a, "base_filters", cfg.arch.base_filters);
    get_to(a, "kernel", cfg.arch.kernel);
    get_to(a, "gru_hidden", cfg.arch.gru_hidden);
    get_to(a, "pwi_channels", cfg.arch.pwi_channels);
    get_to(a, "map_channels", cfg.arch.map_channels);
    get_to(a, "expansion_factor", cfg.arch.expansion_factor);
    get_to(a, "merge_filters", cfg.arch.merge_filters);
    get_to(a, "post_fusion_gru", cfg.arch.post_fusion_gru);
    cfg.arch.validate();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"learning_rate", "batch_size", "epochs", "beta1", "beta2", "epsilon", "val_ratio",
                "dice_smoothing"},
               "train");
    get_to(t, "learning_rate", cfg.train.adam.learning_rate);
    get_to(t, "batch_size", cfg.train.batch_size);
    get_to(t, "epochs", cfg.train.epochs);
    get_to(t, "beta1", cfg.train.adam.beta1);
    get_to(t, "beta2", cfg.train.adam.beta2);
    get_to(t, "epsilon", cfg.train.adam.epsilon);
    get_to(t, "dice_smoothing", cfg.train.dice_smoothing);
    if (t.contains("val_ratio")) {
      const auto v = t.at("val_ratio").get<std::vector<int>>();
      require(v.size() == 2, ErrKind::usage, "val_ratio must be [num, den]");
      cfg.train.val_ratio_num = v[0];
      cfg.train.val_ratio_den = v[1];
    }
    cfg.train.validate();
  }

  cfg.train.seed = cfg.seed;
  return cfg;
}

std::string PipelineConfig::preproc_echo_json() const {
  json p;
  p["target_dims"] = preproc.target_dims;
  p["tmax_clip"] = preproc.tmax_clip;
  p["adc_clip"] = preproc.adc_clip;
  p["scale_range"] = preproc.scale_range;
  p["patch_size"] = preproc.patch_size;
  p["patches_per_case"] = preproc.patches_per_case;
  p["lesion_bias"] = preproc.lesion_bias;
  p["window_length"] = preproc.window_length;
  return json{{"seed", seed}, {"preproc", p}}.dump();
}

// ---------------------------------------------------------------------------
// case io

namespace {

std::string find_tensor_file(const std::string& dir, const std::string& stem) {
  for (const char* ext : {".pwt", ".nii", ".nii.gz"}) {
    const std::string p = dir + "/" + stem + ext;
    if (fs::exists(p)) return p;
  }
  return {};
}

Volume3 load_any_volume3(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pwt") return load_volume3(path);
  auto v = load_nifti(path);
  require(std::holds_alternative<Volume3>(v), ErrKind::rank, path + ": expected a 3D volume");
  return std::get<Volume3>(std::move(v));
}

Volume4 load_any_volume4(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pwt") return load_volume4(path);
  auto v = load_nifti(path);
  require(std::holds_alternative<Volume4>(v), ErrKind::rank, path + ": expected a 4D volume");
  return std::get<Volume4>(std::move(v));
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
  const auto b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

}  // namespace

bool looks_like_case_dir(const std::string& dir) { return !find_tensor_file(dir, "pwi").empty(); }

std::vector<std::string> list_case_dirs(const std::string& root) {
  require(fs::is_directory(root), ErrKind::io, root + " is not a directory");
  if (looks_like_case_dir(root)) return {root};
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && looks_like_case_dir(e.path().string())) dirs.push_back(e.path().string());
  }
  std::sort(dirs.begin(), dirs.end());
  require(!dirs.empty(), ErrKind::data, "no case directories under " + root);
  return dirs;
}

CaseBundle load_case_dir(const std::string& dir) {
  CaseBundle b;
  b.case_id = fs::path(dir).filename().string();
  const std::string pwi = find_tensor_file(dir, "pwi");
  require(!pwi.empty(), ErrKind::data, dir + " has no pwi tensor");
  b.pwi = load_any_volume4(pwi);
  for (const auto& name : map_names()) {
    const std::string p = find_tensor_file(dir, name);
    require(!p.empty(), ErrKind::data, dir + " has no " + name + " map");
    b.maps[name] = load_any_volume3(p);
  }
  if (const std::string gt = find_tensor_file(dir, "gt"); !gt.empty()) {
    b.lesion_gt = load_any_volume3(gt);
  }
  return b;
}

void save_case_dir(const std::string& dir, const PhantomCase& pc, std::uint64_t seed,
                   const std::string& config_echo_json) {
  fs::create_directories(dir);
  save_volume4(dir + "/pwi.pwt", pc.bundle.pwi);
  for (const auto& name : map_names()) save_volume3(dir + "/" + name + ".pwt", pc.bundle.maps.at(name));
  save_volume3(dir + "/gt.pwt", pc.follow_up_mask);
  json meta;
  meta["case_id"] = pc.bundle.case_id;
  meta["true_peak_index"] = pc.true_peak_index;
  meta["seed"] = seed;
  meta["config"] = json::parse(config_echo_json);
  write_text(dir + "/meta.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// stages

void run_synth(const std::string& config_json, const std::string& out_dir) {
  const PipelineConfig cfg = parse_pipeline_config(config_json);
  json echo;
  echo["dims"] = cfg.phantom.dims;
  echo["dt"] = cfg.phantom.dt;
  echo["noise_sigma"] = cfg.phantom.noise_sigma;
  echo["gamma_dilation"] = cfg.phantom.gamma_dilation;
  echo["n"] = cfg.corpus_n;

  if (cfg.phantom_lesions_fixed) {
    // Explicit lesions: every case reuses the configured geometry, only the
    // noise stream varies.
    for (int i = 0; i < cfg.corpus_n; ++i) {
      PhantomConfig pc = cfg.phantom;
      pc.seed = cfg.seed ^ (0x517cc1b727220a95ULL * static_cast<std::uint64_t>(i + 1));
      const std::string id = corpus_case_id(i);
      PhantomCase c = synth_case(pc, id);
      save_case_dir(out_dir + "/" + id, c, cfg.seed, echo.dump());
      log_step("synth", "case", json{{"case_id", id}, {"true_peak_index", c.true_peak_index}}.dump());
    }
  } else {
    PhantomConfig base = cfg.phantom;
    auto cases = synth_corpus(cfg.corpus_n, cfg.seed, base);
    for (const auto& c : cases) {
      save_case_dir(out_dir + "/" + c.bundle.case_id, c, cfg.seed, echo.dump());
      log_step("synth", "case",
               json{{"case_id", c.bundle.case_id}, {"true_peak_index", c.true_peak_index}}.dump());
    }
  }
}

void run_window(const std::string& case_dir, const std::string& out_pwt, int length,
                std::optional<std::uint64_t> seed_override) {
  std::uint64_t seed = 0;
  if (seed_override) {
    seed = *seed_override;
  } else if (const char* env = std::getenv("PWTK_SEED"); env && *env) {
    seed = std::strtoull(env, nullptr, 10);
  }
  const CaseBundle bundle = load_case_dir(case_dir);
  const Volume3 mask = brain_mask_of(bundle);
  const SliceStats stats = slice_stats(bundle.pwi, mask);
  const int peak = detect_peak(stats, SeededRng(seed).split("peak"));
  const TemporalWindow w = extract_window(bundle.pwi, peak, length);
  save_volume4(out_pwt, w.data);

  fs::path sidecar(out_pwt);
  sidecar.replace_extension(".json");
  write_text(sidecar.string(),
             json{{"peak_index", w.peak_index}, {"start", w.start}, {"length", w.length}}.dump(2) + "\n");
  log_step("window", "done", json{{"case", bundle.case_id}, {"peak_index", peak}, {"start", w.start}}.dump());
}

namespace {

void preprocess_one(const CaseBundle& bundle, const PipelineConfig& cfg, const std::string& out_case_dir) {
  const SeededRng case_rng = SeededRng(cfg.seed).split(bundle.case_id);
  const PreprocessedCase pc = preprocess_case(bundle, cfg.preproc, case_rng);
  const auto patches = extract_patches(pc, cfg.preproc, case_rng);

  fs::create_directories(out_case_dir);
  save_volume4(out_case_dir + "/windowed_pwi.pwt", pc.window.data);
  for (const auto& name : map_names()) save_volume3(out_case_dir + "/" + name + ".pwt", pc.maps.at(name));
  save_volume3(out_case_dir + "/mask.pwt", pc.brain_mask);
  save_volume3(out_case_dir + "/gt.pwt", pc.lesion_gt);
  save_raw_file(out_case_dir + "/patches.pwt", stack_patches(patches));

  json index;
  index["case_id"] = pc.case_id;
  json channels = json::array();
  for (const auto& n : patch_channel_names(cfg.preproc.window_length)) channels.push_back(n);
  channels.push_back("gt");
  index["channels"] = channels;
  index["pwi_channels"] = cfg.preproc.window_length;
  index["map_channels"] = static_cast<int>(map_names().size());
  index["window"] = {{"peak_index", pc.window.peak_index}, {"start", pc.window.start}, {"length", pc.window.length}};
  json plist = json::array();
  for (const auto& p : patches) plist.push_back({{"z", p.z}, {"y", p.y}, {"x", p.x}});
  index["patches"] = plist;
  index["config"] = json::parse(cfg.preproc_echo_json());
  write_text(out_case_dir + "/patches.json", index.dump(2) + "\n");
  log_step("preprocess", "case",
           json{{"case_id", pc.case_id}, {"peak_index", pc.window.peak_index}, {"patches", patches.size()}}.dump());
}

}  // namespace

void run_preprocess(const std::string& case_or_corpus_dir, const std::string& out_dir,
                    const std::string& config_json) {
  const PipelineConfig cfg = parse_pipeline_config(config_json);
  const auto dirs = list_case_dirs(case_or_corpus_dir);
  for (const auto& d : dirs) {
    const CaseBundle bundle = load_case_dir(d);
    const std::string out_case =
        dirs.size() == 1 && d == case_or_corpus_dir ? out_dir : out_dir + "/" + bundle.case_id;
    preprocess_one(bundle, cfg, out_case);
  }
}

CasePatches load_case_patches(const std::string& case_dir) {
  CasePatches cp;
  cp.case_id = fs::path(case_dir).filename().string();
  cp.stack = load_raw_file(case_dir + "/patches.pwt");
  const json index = json::parse(read_text(case_dir + "/patches.json"));
  cp.pwi_channels = index.at("pwi_channels").get<int>();
  cp.map_channels = index.at("map_channels").get<int>();
  require(cp.stack.rank() == 4, ErrKind::format, case_dir + ": patches.pwt must be rank 4");
  require(cp.stack.dim(1) == static_cast<std::size_t>(cp.pwi_channels + cp.map_channels + 1), ErrKind::format,
          case_dir + ": patch channel count mismatch");
  return cp;
}

void run_train(const std::string& data_dir, const std::string& arch_name, const std::string& config_json,
               const std::string& out_ckpt, bool paper_hparams) {
  PipelineConfig cfg = parse_pipeline_config(config_json);
  if (paper_hparams) cfg.train.adam.learning_rate = 1e-5;
  const ModelKind kind = model_kind_from_name(arch_name);

  require(fs::is_directory(data_dir), ErrKind::io, data_dir + " is not a directory");
  std::vector<std::string> case_dirs;
  for (const auto& e : fs::directory_iterator(data_dir)) {
    if (e.is_directory() && fs::exists(e.path() / "patches.pwt")) case_dirs.push_back(e.path().string());
  }
  if (case_dirs.empty() && fs::exists(fs::path(data_dir) / "patches.pwt")) case_dirs.push_back(data_dir);
  std::sort(case_dirs.begin(), case_dirs.end());
  require(!case_dirs.empty(), ErrKind::data, "no preprocessed cases under " + data_dir);

  std::vector<CasePatches> corpus;
  for (const auto& d : case_dirs) corpus.push_back(load_case_patches(d));

  // The data fixes the input channel contract.
  ArchConfig arch = cfg.arch;
  arch.pwi_channels = corpus[0].pwi_channels;
  arch.map_channels = corpus[0].map_channels;

  log_step("train", "start",
           json{{"arch", model_kind_name(kind)},
                {"cases", corpus.size()},
                {"lr", cfg.train.adam.learning_rate},
                {"epochs", cfg.train.epochs}}
               .dump());
  Checkpoint ckpt = train(corpus, kind, arch, cfg.train);
  ckpt.preproc_echo_json = cfg.preproc_echo_json();
  save_checkpoint(out_ckpt, ckpt);

  std::string csv = "epoch,train_loss,val_dice\n";
  for (const auto& r : ckpt.history) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f\n", r.epoch, r.train_loss, r.val_dice);
    csv += buf;
  }
  const fs::path loss_path = fs::path(out_ckpt).parent_path() / "loss.csv";
  write_text(loss_path.string(), csv);
  log_step("train", "done",
           json{{"checkpoint", out_ckpt}, {"best_epoch", ckpt.epoch}, {"best_val_dice", ckpt.best_val_dice}}.dump());
}

// ---------------------------------------------------------------------------
// inference

InferenceResult tiled_inference(const Checkpoint& ckpt, const PreprocessedCase& pc, bool want_features,
                                const std::string& feature_tag) {
  Network<float> net(ckpt.kind, ckpt.arch, SeededRng(0));
  // Install trained parameters.
  require(net.params().entries.size() == ckpt.params.entries.size(), ErrKind::incompatible,
          "checkpoint does not match the architecture");
  for (std::size_t i = 0; i < ckpt.params.entries.size(); ++i) {
    net.params().entries[i].value = ckpt.params.entries[i].value;
  }

  const std::size_t Z = pc.brain_mask.nz(), Y = pc.brain_mask.ny(), X = pc.brain_mask.nx();
  const std::size_t wl = static_cast<std::size_t>(pc.window.length);
  // Tile with the training patch size; overlap averaging at stride patch/2.
  std::size_t ps = std::min(Y, X);
  {
    const json echo = json::parse(ckpt.preproc_echo_json, nullptr, false);
    if (!echo.is_discarded() && echo.contains("preproc") && echo["preproc"].contains("patch_size")) {
      ps = std::min<std::size_t>(echo["preproc"]["patch_size"].get<std::size_t>(), ps);
    }
  }
  const std::size_t stride = std::max<std::size_t>(1, ps / 2);

  require(static_cast<int>(wl) == ckpt.arch.pwi_channels, ErrKind::incompatible,
          "window length does not match the checkpoint's input contract");

  std::vector<std::size_t> ys{0}, xs{0};
  while (ys.back() + ps < Y) ys.push_back(std::min(ys.back() + stride, Y - ps));
  while (xs.back() + ps < X) xs.push_back(std::min(xs.back() + stride, X - ps));
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

  InferenceResult res;
  res.probabilities = Volume3(Tensor({Z, Y, X}), pc.brain_mask.spacing);
  Tensor counts({Z, Y, X});
  const std::size_t hid = static_cast<std::size_t>(ckpt.arch.gru_hidden);
  std::vector<Tensor> feat_sums;
  if (want_features) feat_sums.assign(hid, Tensor({Z, Y, X}));

  const auto& mnames = map_names();
  const std::size_t nvox = Z * Y * X;
  for (std::size_t z = 0; z < Z; ++z) {
    for (const auto y0 : ys) {
      for (const auto x0 : xs) {
        auto gather_plane = [&](const float* src, float* dst) {
          for (std::size_t r = 0; r < ps; ++r) {
            const float* s = src + (y0 + r) * X + x0;
            std::copy(s, s + ps, dst + r * ps);
          }
        };
        Tensor pwi_t({1, wl, ps, ps});
        for (std::size_t c = 0; c < wl; ++c) {
          gather_plane(pc.window.data.values.data() + c * nvox + z * Y * X, pwi_t.data() + c * ps * ps);
        }
        Tensor maps_t({1, mnames.size(), ps, ps});
        for (std::size_t m = 0; m < mnames.size(); ++m) {
          gather_plane(pc.maps.at(mnames[m]).values.data() + z * Y * X, maps_t.data() + m * ps * ps);
        }

        ad::Graph<float> g;
        std::vector<const Tensor*> ins;
        Tensor joint;
        switch (ckpt.kind) {
          case ModelKind::standard:
            ins = {&maps_t};
            break;
          case ModelKind::data_driven:
            ins = {&pwi_t};
            break;
          case ModelKind::single: {
            joint = Tensor({1, wl + mnames.size(), ps, ps});
            std::copy(pwi_t.data(), pwi_t.data() + pwi_t.size(), joint.data());
            std::copy(maps_t.data(), maps_t.data() + maps_t.size(), joint.data() + pwi_t.size());
            ins = {&joint};
            break;
          }
          case ModelKind::branched:
            ins = {&pwi_t, &maps_t};
            break;
        }
        ForwardResult<float> fw = net.forward(g, ins);

        const Tensor& prob = g.data(fw.output);
        for (std::size_t r = 0; r < ps; ++r) {
          for (std::size_t c2 = 0; c2 < ps; ++c2) {
            const std::size_t at = (z * Y + y0 + r) * X + x0 + c2;
            res.probabilities.values[at] += prob[r * ps + c2];
            counts[at] += 1.0f;
          }
        }
        if (want_features) {
          int pick = -1;
          for (std::size_t i = 0; i < fw.trunk_tags.size(); ++i) {
            if (fw.trunk_tags[i] == feature_tag || (feature_tag == "gru" && fw.trunk_tags.size() == 1)) {
              pick = static_cast<int>(i);
            }
          }
          require(pick >= 0, ErrKind::parameter,
                  "model has no feature tap '" + feature_tag + "'; use a branched checkpoint");
          const Tensor& f = g.data(fw.gru_features[static_cast<std::size_t>(pick)]);
          for (std::size_t h = 0; h < hid; ++h) {
            for (std::size_t r = 0; r < ps; ++r) {
              for (std::size_t c2 = 0; c2 < ps; ++c2) {
                feat_sums[h][(z * Y + y0 + r) * X + x0 + c2] += f[(h * ps + r) * ps + c2];
              }
            }
          }
        }
      }
    }
  }

  for (std::size_t i = 0; i < nvox; ++i) {
    const float c = counts[i] > 0.0f ? counts[i] : 1.0f;
    const float mask = pc.brain_mask.values[i];
    res.probabilities.values[i] = res.probabilities.values[i] / c * mask;
    if (want_features) {
      for (std::size_t h = 0; h < hid; ++h) feat_sums[h][i] /= c;
    }
  }
  if (want_features) {
    for (std::size_t h = 0; h < hid; ++h) {
      res.features.emplace_back("feature_" + std::to_string(h),
                                Volume3(std::move(feat_sums[h]), pc.brain_mask.spacing));
    }
  }
  return res;
}

namespace {

PreprocessedCase preprocess_for_inference(const Checkpoint& ckpt, const std::string& case_dir,
                                          const std::string& config_json) {
  // The checkpoint's embedded preprocessing settings drive inference; an
  // explicit config overrides them.
  json merged = json::parse(ckpt.preproc_echo_json);
  const json extra = parse_json(config_json, "pipeline config");
  for (auto it = extra.begin(); it != extra.end(); ++it) merged[it.key()] = it.value();
  PipelineConfig cfg = parse_pipeline_config(merged.dump());
  cfg.preproc.window_length = ckpt.arch.pwi_channels;

  const CaseBundle bundle = load_case_dir(case_dir);
  return preprocess_case(bundle, cfg.preproc, SeededRng(cfg.seed).split(bundle.case_id));
}

}  // namespace

void run_predict(const std::string& ckpt_path, const std::string& case_or_corpus_dir, const std::string& out_path,
                 const std::string& config_json) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const auto dirs = list_case_dirs(case_or_corpus_dir);
  const bool single = dirs.size() == 1 && dirs[0] == case_or_corpus_dir;
  for (const auto& d : dirs) {
    const PreprocessedCase pc = preprocess_for_inference(ckpt, d, config_json);
    const InferenceResult inf = tiled_inference(ckpt, pc, false);
    const std::string out = single ? out_path : out_path + "/" + pc.case_id + ".pwt";
    save_volume3(out, inf.probabilities);
    log_step("predict", "case", json{{"case_id", pc.case_id}, {"out", out}}.dump());
  }
}

void run_evaluate(const std::string& pred_dir, const std::string& gt_dir, const std::string& report_csv) {
  const auto dirs = list_case_dirs(gt_dir);
  std::vector<CaseMetrics> rows;
  for (const auto& d : dirs) {
    const std::string case_id = fs::path(d).filename().string();
    const std::string gt_path = find_tensor_file(d, "gt");
    require(!gt_path.empty(), ErrKind::data, d + " has no ground-truth mask");
    std::string pred_path = pred_dir + "/" + case_id + ".pwt";
    if (!fs::exists(pred_path)) {
      const std::string alt = pred_dir + "/" + case_id + "/pred.pwt";
      require(fs::exists(alt), ErrKind::data, "prediction missing for case " + case_id);
      pred_path = alt;
    }
    const Volume3 gt = binarize(load_any_volume3(gt_path));
    const Volume3 pred = binarize(load_volume3(pred_path));
    require(pred.values.same_dims(gt.values), ErrKind::shape,
            case_id + ": prediction and ground-truth grids differ");
    rows.push_back(evaluate_case(case_id, pred, gt));
    const auto& m = rows.back();
    log_step("evaluate", "case",
             json{{"case_id", case_id},
                  {"dice", m.dice},
                  {"distances_defined", m.hausdorff_mm.has_value()}}
                 .dump());
  }
  const MetricsReport report = aggregate(std::move(rows));
  write_text(report_csv, metrics_csv(report));
  log_step("evaluate", "done",
           json{{"cases", report.rows.size()},
                {"mean_dice", report.mean_dice},
                {"distance_cases", report.distance_cases}}
               .dump());
}

void run_nmi(const std::string& ckpt_path, const std::string& case_dir, const std::string& out_csv, int bins,
             const std::string& config_json) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  require(ckpt.kind == ModelKind::branched, ErrKind::incompatible,
          "feature complementarity analysis needs a branched checkpoint");
  const auto dirs = list_case_dirs(case_dir);
  require(dirs.size() == 1, ErrKind::usage, "nmi expects a single case directory");
  const PreprocessedCase pc = preprocess_for_inference(ckpt, dirs[0], config_json);
  const InferenceResult inf = tiled_inference(ckpt, pc, true, "dd");

  std::vector<std::size_t> brain;
  for (std::size_t i = 0; i < pc.brain_mask.values.size(); ++i) {
    if (pc.brain_mask.values[i] > 0.0f) brain.push_back(i);
  }

  auto masked = [&](const Tensor& t) {
    std::vector<float> v(brain.size());
    for (std::size_t i = 0; i < brain.size(); ++i) v[i] = t[brain[i]];
    return v;
  };

  NmiMatrix m;
  m.bins = bins;
  m.map_names = map_names();
  std::vector<std::vector<float>> map_vals;
  for (const auto& name : m.map_names) map_vals.push_back(masked(pc.maps.at(name).values));
  for (const auto& [fname, fvol] : inf.features) {
    m.feature_names.push_back(fname);
    const auto fv = masked(fvol.values);
    for (const auto& mv : map_vals) m.values.push_back(nmi(fv, mv, bins));
  }
  write_text(out_csv, nmi_csv(m));
  log_step("nmi", "done", json{{"case", pc.case_id}, {"features", m.feature_names.size()}}.dump());
}

void run_report(const std::vector<std::string>& metrics_csvs, const std::vector<std::string>& labels,
                const std::string& nmi_csv_path, const std::string& out_dir) {
  require(!metrics_csvs.empty() || !nmi_csv_path.empty(), ErrKind::usage,
          "report needs at least one metrics csv or an nmi csv");
  fs::create_directories(out_dir);

  if (!metrics_csvs.empty()) {
    std::vector<ScatterPoint> pts;
    for (std::size_t i = 0; i < metrics_csvs.size(); ++i) {
      const MetricsReport r = parse_metrics_csv(read_text(metrics_csvs[i]));
      ScatterPoint p;
      p.label = i < labels.size() && !labels[i].empty() ? labels[i] : fs::path(metrics_csvs[i]).stem().string();
      p.dice = r.mean_dice;
      p.hausdorff = r.mean_hd;
      pts.push_back(p);
    }
    write_text(out_dir + "/hd_vs_dice.svg", svg_hd_vs_dice(pts));
  }

  if (!nmi_csv_path.empty()) {
    const std::string text = read_text(nmi_csv_path);
    NmiMatrix m;
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrKind::format, "empty nmi csv");
    {
      std::istringstream hs(line);
      std::string col;
      std::getline(hs, col, ',');  // "feature"
      while (std::getline(hs, col, ',')) m.map_names.push_back(col);
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');
      m.feature_names.push_back(cell);
      while (std::getline(ls, cell, ',')) m.values.push_back(std::stod(cell));
    }
    require(m.values.size() == m.feature_names.size() * m.map_names.size(), ErrKind::format,
            "nmi csv is ragged");
    write_text(out_dir + "/nmi_heatmap.svg", svg_nmi_heatmap(m));
  }
  log_step("report", "done", json{{"out", out_dir}}.dump());
}

}  // namespace pwtk
