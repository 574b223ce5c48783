// SPDX-License-Identifier: Apache-2.0
#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <json.hpp>

#include "raw_io.hpp"

namespace pwtk {

using nlohmann::json;

template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<TensorT<T>>& grads, AdamState<T>& state,
               const AdamConfig& cfg) {
  require(grads.size() == params.entries.size(), ErrKind::shape, "gradient list does not match parameters");
  require(state.m.size() == params.entries.size(), ErrKind::shape, "optimizer state does not match parameters");
  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.t)));
  const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.t)));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& p = params.entries[i].value;
    const auto& g = grads[i];
    require(g.same_dims(p), ErrKind::shape, "gradient dims mismatch for " + params.entries[i].name);
    T* pp = p.data();
    const T* gp = g.data();
    T* mp = state.m[i].data();
    T* vp = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      mp[j] = b1 * mp[j] + (T(1) - b1) * gp[j];
      vp[j] = b2 * vp[j] + (T(1) - b2) * gp[j] * gp[j];
      const T mhat = mp[j] / c1;
      const T vhat = vp[j] / c2;
      pp[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(ParamStore<float>&, const std::vector<Tensor>&, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ParamStore<double>&, const std::vector<TensorD>&, AdamState<double>&,
                                const AdamConfig&);

void TrainConfig::validate() const {
  require(adam.learning_rate >= 0.0, ErrKind::parameter, "learning rate must be non-negative");
  require(batch_size >= 1, ErrKind::parameter, "batch size must be >= 1");
  require(epochs >= 1, ErrKind::parameter, "epochs must be >= 1");
  require(val_ratio_num >= 1 && val_ratio_den > val_ratio_num, ErrKind::parameter, "bad validation ratio");
  require(dice_smoothing >= 0.0, ErrKind::parameter, "dice smoothing must be non-negative");
}

void split_cases(std::size_t n_cases, const TrainConfig& cfg, std::vector<std::size_t>& train_idx,
                 std::vector<std::size_t>& val_idx) {
  require(n_cases >= 1, ErrKind::data, "empty corpus");
  std::vector<std::size_t> order(n_cases);
  for (std::size_t i = 0; i < n_cases; ++i) order[i] = i;
  SeededRng rng = SeededRng(cfg.seed).split("case-split");
  for (std::size_t i = n_cases; i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }
  std::size_t val_n = 0;
  if (n_cases >= 2) {
    const double share = static_cast<double>(cfg.val_ratio_num) / static_cast<double>(cfg.val_ratio_den);
    val_n = static_cast<std::size_t>(std::llround(share * static_cast<double>(n_cases)));
    val_n = std::clamp<std::size_t>(val_n, 1, n_cases - 1);
  }
  val_idx.assign(order.begin(), order.begin() + static_cast<long>(val_n));
  train_idx.assign(order.begin() + static_cast<long>(val_n), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
}

namespace {

struct PatchRef {
  std::size_t case_idx;
  std::size_t patch_idx;
};

struct BatchTensors {
  std::vector<Tensor> inputs;
  Tensor gt;
};

// Gathers one batch in the layout the model kind consumes.
BatchTensors assemble_batch(const std::vector<CasePatches>& corpus, const std::vector<PatchRef>& refs,
                            ModelKind kind) {
  const auto& first = corpus[refs[0].case_idx];
  const std::size_t ps = first.stack.dim(2);
  const std::size_t wl = static_cast<std::size_t>(first.pwi_channels);
  const std::size_t mc = static_cast<std::size_t>(first.map_channels);
  const std::size_t B = refs.size();
  const std::size_t plane = ps * ps;
  const std::size_t stride = (wl + mc + 1) * plane;

  BatchTensors out;
  out.gt = Tensor({B, 1, ps, ps});
  auto gather = [&](std::size_t ch0, std::size_t nch) {
    Tensor t({B, nch, ps, ps});
    for (std::size_t b = 0; b < B; ++b) {
      const auto& cp = corpus[refs[b].case_idx];
      const float* src = cp.stack.data() + refs[b].patch_idx * stride + ch0 * plane;
      std::copy(src, src + nch * plane, t.data() + b * nch * plane);
    }
    return t;
  };
  switch (kind) {
    case ModelKind::standard:
      out.inputs.push_back(gather(wl, mc));
      break;
    case ModelKind::data_driven:
      out.inputs.push_back(gather(0, wl));
      break;
    case ModelKind::single:
      out.inputs.push_back(gather(0, wl + mc));
      break;
    case ModelKind::branched:
      out.inputs.push_back(gather(0, wl));
      out.inputs.push_back(gather(wl, mc));
      break;
  }
  for (std::size_t b = 0; b < B; ++b) {
    const auto& cp = corpus[refs[b].case_idx];
    const float* src = cp.stack.data() + refs[b].patch_idx * stride + (wl + mc) * plane;
    std::copy(src, src + plane, out.gt.data() + b * plane);
  }
  return out;
}

// Runs one batch; returns the per-member soft dice so callers can
// aggregate in a batching-independent order.
std::vector<float> batch_pass(Network<float>& net, const BatchTensors& batch, double smoothing,
                              const AdamConfig* opt, AdamState<float>* state) {
  ad::Graph<float> g;
  std::vector<const Tensor*> ins;
  for (const auto& t : batch.inputs) ins.push_back(&t);
  ForwardResult<float> fw = net.forward(g, ins);
  auto sd = g.soft_dice(fw.output, batch.gt, static_cast<float>(smoothing));
  if (opt) {
    g.backward(sd.loss);
    std::vector<Tensor> grads;
    grads.reserve(net.params().entries.size());
    for (std::size_t i = 0; i < net.params().entries.size(); ++i) {
      const int leaf = fw.param_leaves[i];
      require(leaf >= 0, ErrKind::shape, "parameter unused in forward pass: " + net.params().entries[i].name);
      grads.push_back(g.grad(leaf));
    }
    adam_step(net.params(), grads, *state, *opt);
  }
  return sd.dice;
}

}  // namespace

Checkpoint train(const std::vector<CasePatches>& corpus, ModelKind kind, const ArchConfig& arch,
                 const TrainConfig& cfg) {
  cfg.validate();
  arch.validate();
  require(!corpus.empty(), ErrKind::data, "empty corpus");
  for (const auto& c : corpus) {
    require(c.stack.rank() == 4, ErrKind::shape, "patch stacks are (N, C+1, ps, ps)");
    require(c.stack.dim(1) == static_cast<std::size_t>(c.pwi_channels + c.map_channels + 1), ErrKind::shape,
            "patch stack channel count mismatch for case " + c.case_id);
  }

  std::vector<std::size_t> train_cases, val_cases;
  split_cases(corpus.size(), cfg, train_cases, val_cases);

  std::vector<PatchRef> train_refs, val_refs;
  for (auto ci : train_cases) {
    for (std::size_t p = 0; p < corpus[ci].stack.dim(0); ++p) train_refs.push_back({ci, p});
  }
  for (auto ci : val_cases) {
    for (std::size_t p = 0; p < corpus[ci].stack.dim(0); ++p) val_refs.push_back({ci, p});
  }
  require(!train_refs.empty(), ErrKind::data, "no training patches after the split");

  const SeededRng root(cfg.seed);
  Network<float> net(kind, arch, root.split("init"));
  AdamState<float> state;
  state.init_like(net.params());

  Checkpoint best;
  best.kind = kind;
  best.arch = arch;
  best.params = net.params();
  best.adam = state;
  best.best_val_dice = -1.0;

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    SeededRng shuffle_rng = root.split("epoch/" + std::to_string(epoch));
    std::vector<std::size_t> order(train_refs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    }

    // Per-member losses land in a fixed-order table, so the epoch mean does
    // not depend on the shuffle or the batching.
    std::vector<double> member_loss(train_refs.size(), 0.0);
    for (std::size_t at = 0; at < order.size(); at += bs) {
      std::vector<PatchRef> refs;
      std::vector<std::size_t> ids;
      for (std::size_t i = at; i < std::min(at + bs, order.size()); ++i) {
        refs.push_back(train_refs[order[i]]);
        ids.push_back(order[i]);
      }
      BatchTensors batch = assemble_batch(corpus, refs, kind);
      const auto dice = batch_pass(net, batch, cfg.dice_smoothing, &cfg.adam, &state);
      for (std::size_t i = 0; i < ids.size(); ++i) member_loss[ids[i]] = 1.0 - static_cast<double>(dice[i]);
    }
    double loss_sum = 0.0;
    for (double v : member_loss) loss_sum += v;
    const double train_loss = loss_sum / static_cast<double>(member_loss.size());

    double val_dice = 0.0;
    if (!val_refs.empty()) {
      double dice_sum = 0.0;
      for (std::size_t at = 0; at < val_refs.size(); at += bs) {
        std::vector<PatchRef> refs(val_refs.begin() + static_cast<long>(at),
                                   val_refs.begin() + static_cast<long>(std::min(at + bs, val_refs.size())));
        BatchTensors batch = assemble_batch(corpus, refs, kind);
        const auto dice = batch_pass(net, batch, cfg.dice_smoothing, nullptr, nullptr);
        for (float d : dice) dice_sum += static_cast<double>(d);
      }
      val_dice = dice_sum / static_cast<double>(val_refs.size());
    }

    best.history.push_back({epoch, train_loss, val_dice});
    if (val_refs.empty() || val_dice > best.best_val_dice) {
      best.best_val_dice = val_dice;
      best.epoch = epoch;
      best.params = net.params();
      best.adam = state;
    }
    log_step("train", "epoch",
             json{{"epoch", epoch}, {"train_loss", train_loss}, {"val_dice", val_dice}}.dump());
  }
  return best;
}

std::vector<double> overfit_single_batch(Network<float>& net, const std::vector<Tensor>& batch_inputs,
                                         const Tensor& batch_gt, int steps, const AdamConfig& adam,
                                         double dice_smoothing) {
  AdamState<float> state;
  state.init_like(net.params());
  BatchTensors batch;
  batch.inputs = batch_inputs;
  batch.gt = batch_gt;
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const auto dice = batch_pass(net, batch, dice_smoothing, &adam, &state);
    double loss = 0.0;
    for (float d : dice) loss += 1.0 - static_cast<double>(d);
    trace.push_back(loss / static_cast<double>(dice.size()));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kCkptMagic[4] = {'P', 'W', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

json arch_to_json(const ArchConfig& a) {
  return json{{"unet_levels", a.unet_levels},       {"base_filters", a.base_filters},
              {"kernel", a.kernel},                 {"gru_hidden", a.gru_hidden},
              {"pwi_channels", a.pwi_channels},     {"map_channels", a.map_channels},
              {"expansion_factor", a.expansion_factor}, {"merge_filters", a.merge_filters},
              {"post_fusion_gru", a.post_fusion_gru}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.unet_levels = j.at("unet_levels").get<int>();
  a.base_filters = j.at("base_filters").get<int>();
  a.kernel = j.at("kernel").get<int>();
  a.gru_hidden = j.at("gru_hidden").get<int>();
  a.pwi_channels = j.at("pwi_channels").get<int>();
  a.map_channels = j.at("map_channels").get<int>();
  a.expansion_factor = j.at("expansion_factor").get<int>();
  a.merge_filters = j.at("merge_filters").get<int>();
  a.post_fusion_gru = j.at("post_fusion_gru").get<bool>();
  return a;
}

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
  const auto bytes = write_raw(t);
  out.insert(out.end(), bytes.begin(), bytes.end());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json meta;
  meta["kind"] = model_kind_name(ckpt.kind);
  meta["arch"] = arch_to_json(ckpt.arch);
  meta["epoch"] = ckpt.epoch;
  meta["best_val_dice"] = ckpt.best_val_dice;
  meta["adam_t"] = ckpt.adam.t;
  meta["preproc"] = json::parse(ckpt.preproc_echo_json);
  json hist = json::array();
  for (const auto& r : ckpt.history) hist.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_dice", r.val_dice}});
  meta["history"] = hist;
  json names = json::array();
  for (const auto& e : ckpt.params.entries) names.push_back(e.name);
  meta["tensors"] = names;

  const std::string meta_s = meta.dump();
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCkptMagic, kCkptMagic + 4);
  const std::uint32_t ver = kCkptVersion;
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&ver), reinterpret_cast<const std::uint8_t*>(&ver) + 4);
  const std::uint64_t len = meta_s.size();
  out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(&len), reinterpret_cast<const std::uint8_t*>(&len) + 8);
  out.insert(out.end(), meta_s.begin(), meta_s.end());
  for (std::size_t i = 0; i < ckpt.params.entries.size(); ++i) {
    append_tensor(out, ckpt.params.entries[i].value);
    append_tensor(out, ckpt.adam.m[i]);
    append_tensor(out, ckpt.adam.v[i]);
  }
  write_file_bytes(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  require(bytes.size() >= 16, ErrKind::format, "checkpoint too short");
  require(std::memcmp(bytes.data(), kCkptMagic, 4) == 0, ErrKind::format, "bad checkpoint magic");
  std::uint32_t ver = 0;
  std::memcpy(&ver, bytes.data() + 4, 4);
  require(ver == kCkptVersion, ErrKind::format, "unsupported checkpoint version");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  require(16 + len <= bytes.size(), ErrKind::format, "checkpoint metadata truncated");
  json meta = json::parse(std::string(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len)),
                          nullptr, false);
  require(!meta.is_discarded(), ErrKind::format, "checkpoint metadata is not valid JSON");

  Checkpoint ckpt;
  ckpt.kind = model_kind_from_name(meta.at("kind").get<std::string>());
  ckpt.arch = arch_from_json(meta.at("arch"));
  ckpt.epoch = meta.at("epoch").get<int>();
  ckpt.best_val_dice = meta.at("best_val_dice").get<double>();
  ckpt.adam.t = meta.at("adam_t").get<long>();
  ckpt.preproc_echo_json = meta.at("preproc").dump();
  for (const auto& r : meta.at("history")) {
    ckpt.history.push_back({r.at("epoch").get<int>(), r.at("train_loss").get<double>(), r.at("val_dice").get<double>()});
  }

  // The declared architecture fixes the legal parameter table.
  Network<float> reference(ckpt.kind, ckpt.arch, SeededRng(0));
  const auto names = meta.at("tensors");
  require(names.size() == reference.params().entries.size(), ErrKind::incompatible,
          "checkpoint parameter count does not match the declared architecture");

  std::size_t pos = 16 + static_cast<std::size_t>(len);
  auto next_tensor = [&]() {
    // Raw tensors are self-delimiting; parse the header to find the end.
    require(pos + 16 <= bytes.size(), ErrKind::format, "checkpoint tensor block truncated");
    std::uint32_t rank = 0;
    std::memcpy(&rank, bytes.data() + pos + 12, 4);
    require(rank >= 1 && rank <= kMaxRank, ErrKind::format, "checkpoint tensor rank out of range");
    std::size_t n = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      std::uint64_t d = 0;
      require(pos + 16 + 8 * (a + 1) <= bytes.size(), ErrKind::format, "checkpoint tensor block truncated");
      std::memcpy(&d, bytes.data() + pos + 16 + 8 * a, 8);
      n *= static_cast<std::size_t>(d);
    }
    const std::size_t total = 16 + 8 * rank + 32 + 4 * n;
    require(pos + total <= bytes.size(), ErrKind::format, "checkpoint tensor block truncated");
    Tensor t = read_raw_f32(std::vector<std::uint8_t>(bytes.begin() + static_cast<long>(pos),
                                                      bytes.begin() + static_cast<long>(pos + total)));
    pos += total;
    return t;
  };

  for (std::size_t i = 0; i < reference.params().entries.size(); ++i) {
    const std::string name = names[i].get<std::string>();
    require(name == reference.params().entries[i].name, ErrKind::incompatible,
            "checkpoint parameter name mismatch: " + name);
    Tensor value = next_tensor();
    Tensor m = next_tensor();
    Tensor v = next_tensor();
    require(value.same_dims(reference.params().entries[i].value), ErrKind::incompatible,
            "checkpoint parameter dims mismatch: " + name);
    ckpt.params.add(name, std::move(value));
    ckpt.adam.m.push_back(std::move(m));
    ckpt.adam.v.push_back(std::move(v));
  }
  require(pos == bytes.size(), ErrKind::format, "trailing bytes after checkpoint tensors");
  return ckpt;
}

}  // namespace pwtk
