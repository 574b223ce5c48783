// SPDX-License-Identifier: Apache-2.0
#include "model.hpp"

#include <cmath>

namespace pwtk {

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::standard: return "standard";
    case ModelKind::data_driven: return "data-driven";
    case ModelKind::single: return "single";
    case ModelKind::branched: return "branched";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "standard") return ModelKind::standard;
  if (name == "data-driven" || name == "data_driven") return ModelKind::data_driven;
  if (name == "single") return ModelKind::single;
  if (name == "branched") return ModelKind::branched;
  fail(ErrKind::usage, "unknown architecture: " + name);
}

void ArchConfig::validate() const {
  require(unet_levels >= 1, ErrKind::parameter, "unet_levels must be >= 1");
  require(base_filters >= 1, ErrKind::parameter, "base_filters must be >= 1");
  require(kernel == 3, ErrKind::parameter, "trunk convolutions are fixed at 3x3");
  require(gru_hidden >= 1, ErrKind::parameter, "gru_hidden must be >= 1");
  require(pwi_channels >= 1, ErrKind::parameter, "pwi_channels must be >= 1");
  require(map_channels >= 1, ErrKind::parameter, "map_channels must be >= 1");
  require(expansion_factor >= 1, ErrKind::parameter, "expansion_factor must be >= 1");
  require(merge_filters >= 1, ErrKind::parameter, "merge_filters must be >= 1");
}

std::vector<int> input_channels(ModelKind kind, const ArchConfig& cfg) {
  switch (kind) {
    case ModelKind::standard: return {cfg.map_channels};
    case ModelKind::data_driven: return {cfg.pwi_channels};
    case ModelKind::single: return {cfg.pwi_channels + cfg.map_channels};
    case ModelKind::branched: return {cfg.pwi_channels, cfg.map_channels};
  }
  return {};
}

namespace {

// One topology walk serves two phases: parameter registration (no graph)
// and graph construction. Channel arithmetic is shared, so the parameter
// table and the wiring cannot drift apart.
template <typename T>
struct Builder {
  ad::Graph<T>* g = nullptr;  // null in registration phase
  ParamStore<T>* store = nullptr;
  std::vector<int>* leaves = nullptr;  // forward phase, aligned with entries
  const SeededRng* init = nullptr;     // registration phase
  const ArchConfig* cfg = nullptr;

  struct Feat {
    int node = -1;
    int ch = 0;
  };

  int param(const std::string& name, std::vector<std::size_t> dims, std::size_t fan_in, bool zero_init) {
    if (!g) {
      TensorT<T> t(dims);
      if (!zero_init) {
        SeededRng r = init->split(name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(r.uniform(-bound, bound));
      }
      store->add(name, std::move(t));
      return -1;
    }
    auto it = store->by_name.find(name);
    require(it != store->by_name.end(), ErrKind::incompatible, "parameter missing from store: " + name);
    int& leaf = (*leaves)[static_cast<std::size_t>(it->second)];
    if (leaf < 0) leaf = g->leaf(store->entries[static_cast<std::size_t>(it->second)].value, true);
    return leaf;
  }

  Feat conv(Feat x, const std::string& name, int cout, int k, int pad, bool relu_after) {
    const std::size_t ck = static_cast<std::size_t>(k);
    const int w = param(name + ".w",
                        {static_cast<std::size_t>(cout), static_cast<std::size_t>(x.ch), ck, ck},
                        static_cast<std::size_t>(x.ch) * ck * ck, false);
    const int b = param(name + ".b", {static_cast<std::size_t>(cout)}, 1, true);
    if (!g) return {-1, cout};
    int y = g->conv2d(x.node, w, b, 1, pad);
    if (relu_after) y = g->relu(y);
    return {y, cout};
  }

  Feat pool(Feat x) { return {g ? g->maxpool2(x.node) : -1, x.ch}; }
  Feat up(Feat x) { return {g ? g->upsample2(x.node) : -1, x.ch}; }
  Feat cat(Feat a, Feat b) { return {g ? g->concat_channels({a.node, b.node}) : -1, a.ch + b.ch}; }

  Feat unet(Feat x, const std::string& prefix) {
    std::vector<Feat> skips;
    for (int l = 0; l < cfg->unet_levels; ++l) {
      const int f = cfg->base_filters << l;
      const std::string lv = prefix + ".enc" + std::to_string(l);
      x = conv(x, lv + ".c1", f, 3, 1, true);
      x = conv(x, lv + ".c2", f, 3, 1, true);
      skips.push_back(x);
      x = pool(x);
    }
    const int fb = cfg->base_filters << (cfg->unet_levels - 1);
    x = conv(x, prefix + ".bot.c1", fb, 3, 1, true);
    x = conv(x, prefix + ".bot.c2", fb, 3, 1, true);
    for (int l = cfg->unet_levels - 1; l >= 0; --l) {
      const int f = cfg->base_filters << l;
      const std::string lv = prefix + ".dec" + std::to_string(l);
      x = up(x);
      x = cat(x, skips[static_cast<std::size_t>(l)]);
      x = conv(x, lv + ".c1", f, 3, 1, true);
      x = conv(x, lv + ".c2", f, 3, 1, true);
    }
    return x;
  }

  ad::GruDirLeaves gru_dir(const std::string& prefix, int cin, int hid) {
    const std::size_t h = static_cast<std::size_t>(hid), c = static_cast<std::size_t>(cin);
    ad::GruDirLeaves p;
    p.wz = param(prefix + ".wz", {h, c, 1, 1}, c, false);
    p.wr = param(prefix + ".wr", {h, c, 1, 1}, c, false);
    p.wh = param(prefix + ".wh", {h, c, 1, 1}, c, false);
    p.uz = param(prefix + ".uz", {h, h, 1, 1}, h, false);
    p.ur = param(prefix + ".ur", {h, h, 1, 1}, h, false);
    p.uh = param(prefix + ".uh", {h, h, 1, 1}, h, false);
    p.bz = param(prefix + ".bz", {h}, 1, true);
    p.br = param(prefix + ".br", {h}, 1, true);
    p.bh = param(prefix + ".bh", {h}, 1, true);
    return p;
  }

  Feat gru4(Feat x, const std::string& prefix) {
    ad::GruLeaves leaves;
    const char* dn[4] = {"si", "is", "ap", "pa"};
    for (int d = 0; d < 4; ++d) {
      leaves.dir[static_cast<std::size_t>(d)] = gru_dir(prefix + "." + dn[d], x.ch, cfg->gru_hidden);
    }
    if (!g) return {-1, cfg->gru_hidden};
    return {g->four_dir_gru(x.node, leaves), cfg->gru_hidden};
  }

  Feat head(Feat x, const std::string& prefix) {
    x = conv(x, prefix, 1, 1, 0, false);
    if (g) x.node = g->sigmoid(x.node);
    return x;
  }

  Feat trunk_dd(Feat x) {
    const int expanded = cfg->pwi_channels * cfg->expansion_factor;
    x = conv(x, "dd.expand", expanded, 1, 0, true);
    x = conv(x, "dd.reduce", cfg->pwi_channels, 1, 0, true);
    x = unet(x, "dd.unet");
    return gru4(x, "dd.gru");
  }

  Feat trunk_std(Feat x) {
    x = unet(x, "std.unet");
    return gru4(x, "std.gru");
  }

  // Returns {output, gru features per trunk}.
  std::pair<Feat, std::vector<Feat>> build(ModelKind kind, const std::vector<Feat>& inputs) {
    switch (kind) {
      case ModelKind::standard: {
        Feat f = trunk_std(inputs[0]);
        return {head(f, "head"), {f}};
      }
      case ModelKind::data_driven: {
        Feat f = trunk_dd(inputs[0]);
        return {head(f, "head"), {f}};
      }
      case ModelKind::single: {
        Feat f = unet(inputs[0], "unet");
        f = gru4(f, "gru");
        return {head(f, "head"), {f}};
      }
      case ModelKind::branched: {
        Feat dd = trunk_dd(inputs[0]);
        Feat st = trunk_std(inputs[1]);
        Feat m = cat(dd, st);
        m = conv(m, "merge.c1", cfg->merge_filters, 3, 1, true);
        m = conv(m, "merge.c2", cfg->merge_filters, 3, 1, true);
        if (cfg->post_fusion_gru) m = gru4(m, "merge.gru");
        return {head(m, "head"), {dd, st}};
      }
    }
    fail(ErrKind::parameter, "unknown model kind");
  }
};

}  // namespace

template <typename T>
Network<T>::Network(ModelKind kind, const ArchConfig& cfg, const SeededRng& init_rng) : kind_(kind), cfg_(cfg) {
  cfg_.validate();
  Builder<T> b;
  b.store = &params_;
  b.init = &init_rng;
  b.cfg = &cfg_;
  std::vector<typename Builder<T>::Feat> ins;
  for (int ch : input_channels(kind_, cfg_)) ins.push_back({-1, ch});
  b.build(kind_, ins);
}

template <typename T>
ForwardResult<T> Network<T>::forward(ad::Graph<T>& g, const std::vector<const TensorT<T>*>& inputs) const {
  const auto expect = input_channels(kind_, cfg_);
  require(inputs.size() == expect.size(), ErrKind::shape,
          std::string(model_kind_name(kind_)) + " expects " + std::to_string(expect.size()) + " input(s)");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& d = inputs[i]->dims();
    require(d.size() == 4, ErrKind::rank, "model inputs are NCHW");
    require(d[1] == static_cast<std::size_t>(expect[i]), ErrKind::shape,
            "input " + std::to_string(i) + " must carry " + std::to_string(expect[i]) + " channels");
    require(d[0] == inputs[0]->dims()[0] && d[2] == inputs[0]->dims()[2] && d[3] == inputs[0]->dims()[3],
            ErrKind::shape, "model inputs must share batch and spatial dims");
  }

  ForwardResult<T> res;
  res.param_leaves.assign(params_.entries.size(), -1);

  Builder<T> b;
  b.g = &g;
  b.store = const_cast<ParamStore<T>*>(&params_);
  b.leaves = &res.param_leaves;
  b.cfg = &cfg_;

  std::vector<typename Builder<T>::Feat> ins;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ins.push_back({g.constant(*inputs[i]), static_cast<int>(inputs[i]->dims()[1])});
  }
  auto [out, taps] = b.build(kind_, ins);
  res.output = out.node;
  for (const auto& t : taps) res.gru_features.push_back(t.node);
  if (kind_ == ModelKind::branched) {
    res.trunk_tags = {"dd", "std"};
  } else if (kind_ == ModelKind::data_driven) {
    res.trunk_tags = {"dd"};
  } else if (kind_ == ModelKind::standard) {
    res.trunk_tags = {"std"};
  } else {
    res.trunk_tags = {"gru"};
  }
  return res;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> Network<T>::extract_features(
    ad::Graph<T>& g, const std::vector<const TensorT<T>*>& inputs, const std::string& layer_tag) const {
  ForwardResult<T> res = forward(g, inputs);
  int pick = -1;
  for (std::size_t i = 0; i < res.trunk_tags.size(); ++i) {
    if (res.trunk_tags[i] == layer_tag || (layer_tag == "gru" && res.trunk_tags.size() == 1)) {
      pick = static_cast<int>(i);
      break;
    }
  }
  require(pick >= 0, ErrKind::parameter,
          "model kind " + std::string(model_kind_name(kind_)) + " has no feature tap '" + layer_tag + "'");

  const int node = res.gru_features[static_cast<std::size_t>(pick)];
  const TensorT<T>& f = g.data(node);
  const std::size_t B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  std::vector<std::pair<std::string, TensorT<T>>> out;
  out.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    TensorT<T> m({B, H, W});
    for (std::size_t b2 = 0; b2 < B; ++b2) {
      const T* src = f.data() + (b2 * C + c) * H * W;
      std::copy(src, src + H * W, m.data() + b2 * H * W);
    }
    out.emplace_back("feature_" + std::to_string(c), std::move(m));
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template struct ParamStore<float>;
template struct ParamStore<double>;

}  // namespace pwtk
