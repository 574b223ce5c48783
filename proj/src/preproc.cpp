// SPDX-License-Identifier: Apache-2.0
#include "preproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace pwtk {

void PreprocConfig::validate() const {
  for (auto d : target_dims) require(d >= 1, ErrKind::parameter, "target dims must be >= 1");
  require(tmax_clip[0] < tmax_clip[1], ErrKind::parameter, "empty Tmax clip range");
  require(adc_clip[0] < adc_clip[1], ErrKind::parameter, "empty ADC clip range");
  require(scale_range[0] < scale_range[1], ErrKind::parameter, "empty scale range");
  require(patch_size >= 1, ErrKind::parameter, "patch size must be >= 1");
  require(static_cast<std::size_t>(patch_size) <= std::min(target_dims[1], target_dims[2]), ErrKind::parameter,
          "patch size exceeds the target in-plane extent");
  require(patches_per_case >= 1, ErrKind::parameter, "patches per case must be >= 1");
  require(lesion_bias >= 0.0 && lesion_bias <= 1.0, ErrKind::parameter, "lesion bias must lie in [0,1]");
  require(window_length >= 2, ErrKind::parameter, "window length must be >= 2");
}

Volume3 clip_map(const Volume3& v, double lo, double hi) {
  require(lo < hi, ErrKind::parameter, "empty clip range");
  Volume3 out = v;
  const float flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  for (auto& x : out.values.storage()) x = std::clamp(x, flo, fhi);
  return out;
}

namespace {

struct MaskRange {
  float lo, hi;
};

MaskRange masked_range(const Tensor& values, const Volume3& mask, std::size_t time_slices) {
  const std::size_t nvox = mask.values.size();
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (std::size_t t = 0; t < time_slices; ++t) {
    const float* p = values.data() + t * nvox;
    for (std::size_t i = 0; i < nvox; ++i) {
      if (mask.values[i] <= 0.0f) continue;
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
  }
  require(lo < hi, ErrKind::degenerate, "degenerate intensity range: volume is constant over the mask");
  return {lo, hi};
}

void apply_scale(Tensor& values, const Volume3& mask, std::size_t time_slices, MaskRange r, double out_lo,
                 double out_hi) {
  const float a = static_cast<float>((out_hi - out_lo) / (static_cast<double>(r.hi) - r.lo));
  const float lo = static_cast<float>(out_lo);
  const std::size_t nvox = mask.values.size();
  for (std::size_t t = 0; t < time_slices; ++t) {
    float* p = values.data() + t * nvox;
    for (std::size_t i = 0; i < nvox; ++i) {
      p[i] = mask.values[i] > 0.0f ? lo + a * (p[i] - r.lo) : lo;
    }
  }
}

}  // namespace

Volume3 scale_linear(const Volume3& v, const Volume3& mask, double out_lo, double out_hi) {
  require(out_lo < out_hi, ErrKind::parameter, "empty output range");
  require(mask.values.same_dims(v.values), ErrKind::shape, "mask dims mismatch");
  Volume3 out = v;
  apply_scale(out.values, mask, 1, masked_range(out.values, mask, 1), out_lo, out_hi);
  return out;
}

Volume4 scale_linear(const Volume4& v, const Volume3& mask, double out_lo, double out_hi) {
  require(out_lo < out_hi, ErrKind::parameter, "empty output range");
  require(mask.values.dims() == std::vector<std::size_t>{v.nz(), v.ny(), v.nx()}, ErrKind::shape,
          "mask dims mismatch");
  Volume4 out = v;
  // One joint range for the whole 4D stack keeps the temporal shape intact.
  apply_scale(out.values, mask, v.nt(), masked_range(out.values, mask, v.nt()), out_lo, out_hi);
  return out;
}

namespace {

// Corner-aligned source coordinate for output index i.
inline double src_coord(std::size_t i, std::size_t n_out, std::size_t n_in) {
  if (n_out <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
}

void resize_slices(const float* src, float* dst, const std::array<std::size_t, 3>& in,
                   const std::array<std::size_t, 3>& out) {
  const std::size_t zi = in[0], yi = in[1], xi = in[2];
  const std::size_t zo = out[0], yo = out[1], xo = out[2];
  parallel_for(zo, [&](std::size_t z) {
    const double fz = src_coord(z, zo, zi);
    const std::size_t z0 = static_cast<std::size_t>(fz);
    const std::size_t z1 = std::min(z0 + 1, zi - 1);
    const double wz = fz - static_cast<double>(z0);
    for (std::size_t y = 0; y < yo; ++y) {
      const double fy = src_coord(y, yo, yi);
      const std::size_t y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, yi - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < xo; ++x) {
        const double fx = src_coord(x, xo, xi);
        const std::size_t x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, xi - 1);
        const double wx = fx - static_cast<double>(x0);
        auto v = [&](std::size_t zz, std::size_t yy, std::size_t xx) {
          return static_cast<double>(src[(zz * yi + yy) * xi + xx]);
        };
        const double c00 = v(z0, y0, x0) * (1 - wx) + v(z0, y0, x1) * wx;
        const double c01 = v(z0, y1, x0) * (1 - wx) + v(z0, y1, x1) * wx;
        const double c10 = v(z1, y0, x0) * (1 - wx) + v(z1, y0, x1) * wx;
        const double c11 = v(z1, y1, x0) * (1 - wx) + v(z1, y1, x1) * wx;
        const double c0 = c00 * (1 - wy) + c01 * wy;
        const double c1 = c10 * (1 - wy) + c11 * wy;
        dst[(z * yo + y) * xo + x] = static_cast<float>(c0 * (1 - wz) + c1 * wz);
      }
    }
  });
}

std::array<double, 3> rescaled_spacing(const std::array<double, 3>& spacing, const std::array<std::size_t, 3>& in,
                                       const std::array<std::size_t, 3>& out) {
  std::array<double, 3> sp{};
  for (int a = 0; a < 3; ++a) {
    sp[a] = spacing[a] * static_cast<double>(in[a]) / static_cast<double>(out[a]);
  }
  return sp;
}

}  // namespace

Volume3 resize_trilinear(const Volume3& v, const std::array<std::size_t, 3>& target) {
  for (auto d : target) require(d >= 1, ErrKind::parameter, "target dims must be >= 1");
  const std::array<std::size_t, 3> in{v.nz(), v.ny(), v.nx()};
  if (in == target) return v;
  Tensor t({target[0], target[1], target[2]});
  resize_slices(v.values.data(), t.data(), in, target);
  return Volume3(std::move(t), rescaled_spacing(v.spacing, in, target));
}

Volume4 resize_trilinear(const Volume4& v, const std::array<std::size_t, 3>& target) {
  for (auto d : target) require(d >= 1, ErrKind::parameter, "target dims must be >= 1");
  const std::array<std::size_t, 3> in{v.nz(), v.ny(), v.nx()};
  if (in == target) return v;
  const std::size_t T = v.nt();
  const std::size_t nin = in[0] * in[1] * in[2];
  const std::size_t nout = target[0] * target[1] * target[2];
  Tensor t({T, target[0], target[1], target[2]});
  for (std::size_t k = 0; k < T; ++k) {
    resize_slices(v.values.data() + k * nin, t.data() + k * nout, in, target);
  }
  return Volume4(std::move(t), rescaled_spacing(v.spacing, in, target), v.dt);
}

Volume3 brain_mask_of(const CaseBundle& bundle) {
  auto it = bundle.maps.find("adc");
  require(it != bundle.maps.end(), ErrKind::data, "case has no ADC map");
  Volume3 mask = it->second;
  std::size_t count = 0;
  for (auto& x : mask.values.storage()) {
    x = x > 0.0f ? 1.0f : 0.0f;
    count += x > 0.0f;
  }
  require(count > 0, ErrKind::mask, "brain mask is empty (no positive ADC voxels)");
  return mask;
}

namespace {

Volume3 binarize_mask(const Volume3& v) {
  Volume3 out = v;
  for (auto& x : out.values.storage()) x = x > 0.5f ? 1.0f : 0.0f;
  return out;
}

}  // namespace

PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocConfig& config, const SeededRng& rng) {
  config.validate();
  bundle.check_consistent();

  // Peak detection runs on the native-resolution signal.
  Volume3 native_mask = brain_mask_of(bundle);
  const SliceStats stats = slice_stats(bundle.pwi, native_mask);
  const int peak = detect_peak(stats, rng.split("peak"));
  TemporalWindow window = extract_window(bundle.pwi, peak, config.window_length);

  PreprocessedCase out;
  out.case_id = bundle.case_id;

  // Resize, then clip in physical units, then scale per volume.
  window.data = resize_trilinear(window.data, config.target_dims);
  out.brain_mask = binarize_mask(resize_trilinear(native_mask, config.target_dims));
  require(
      std::any_of(out.brain_mask.values.storage().begin(), out.brain_mask.values.storage().end(),
                  [](float x) { return x > 0.0f; }),
      ErrKind::mask, "brain mask is empty after resizing");

  for (const auto& name : map_names()) {
    Volume3 m = resize_trilinear(bundle.maps.at(name), config.target_dims);
    if (name == "tmax") m = clip_map(m, config.tmax_clip[0], config.tmax_clip[1]);
    if (name == "adc") m = clip_map(m, config.adc_clip[0], config.adc_clip[1]);
    out.maps[name] = scale_linear(m, out.brain_mask, config.scale_range[0], config.scale_range[1]);
  }
  window.data = scale_linear(window.data, out.brain_mask, config.scale_range[0], config.scale_range[1]);
  out.window = std::move(window);

  if (bundle.lesion_gt) {
    out.lesion_gt = binarize_mask(resize_trilinear(*bundle.lesion_gt, config.target_dims));
    out.has_gt = true;
  } else {
    out.lesion_gt = Volume3(Tensor({config.target_dims[0], config.target_dims[1], config.target_dims[2]}),
                            out.brain_mask.spacing);
  }
  return out;
}

std::vector<std::string> patch_channel_names(int window_length) {
  std::vector<std::string> names;
  for (int i = 0; i < window_length; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "pwi%02d", i);
    names.emplace_back(buf);
  }
  for (const auto& m : map_names()) names.push_back(m);
  return names;
}

std::vector<Patch> extract_patches(const PreprocessedCase& pc, const PreprocConfig& config, const SeededRng& rng) {
  config.validate();
  const std::size_t Z = pc.brain_mask.nz(), Y = pc.brain_mask.ny(), X = pc.brain_mask.nx();
  const std::size_t ps = static_cast<std::size_t>(config.patch_size);
  require(ps <= Y && ps <= X, ErrKind::parameter, "patch size exceeds volume extent");

  // Valid origins per slice: the patch fits and its center is in-mask.
  // Lesion-biased sampling additionally requires the center in the lesion.
  const std::size_t cy_off = ps / 2, cx_off = ps / 2;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> brain_pos(Z), lesion_pos(Z);
  std::vector<std::size_t> brain_slices, lesion_slices;
  for (std::size_t z = 0; z < Z; ++z) {
    for (std::size_t y = 0; y + ps <= Y; ++y) {
      for (std::size_t x = 0; x + ps <= X; ++x) {
        const std::size_t cz = (z * Y + y + cy_off) * X + x + cx_off;
        if (pc.brain_mask.values[cz] > 0.0f) {
          brain_pos[z].emplace_back(y, x);
          if (pc.lesion_gt.values[cz] > 0.0f) lesion_pos[z].emplace_back(y, x);
        }
      }
    }
    if (!brain_pos[z].empty()) brain_slices.push_back(z);
    if (!lesion_pos[z].empty()) lesion_slices.push_back(z);
  }
  require(!brain_slices.empty(), ErrKind::sampling, "no valid patch positions");

  const int wl = config.window_length;
  const auto& mnames = map_names();
  const std::size_t n_channels = static_cast<std::size_t>(wl) + mnames.size();

  std::vector<Patch> patches(static_cast<std::size_t>(config.patches_per_case));
  for (int i = 0; i < config.patches_per_case; ++i) {
    SeededRng r = rng.split("patch/" + std::to_string(i));
    const bool want_lesion = !lesion_slices.empty() && r.uniform() < config.lesion_bias;
    const auto& slices = want_lesion ? lesion_slices : brain_slices;
    const auto& pos = want_lesion ? lesion_pos : brain_pos;
    const std::size_t z = slices[r.uniform_index(slices.size())];
    const auto [y, x] = pos[z][r.uniform_index(pos[z].size())];

    Patch p;
    p.case_id = pc.case_id;
    p.z = z;
    p.y = y;
    p.x = x;
    p.channels = Tensor({n_channels, ps, ps});
    p.gt = Tensor({ps, ps});

    auto copy_plane = [&](const float* src, float* dst) {
      for (std::size_t row = 0; row < ps; ++row) {
        const float* s = src + (y + row) * X + x;
        std::copy(s, s + ps, dst + row * ps);
      }
    };
    const std::size_t nvox = Z * Y * X;
    for (int c = 0; c < wl; ++c) {
      copy_plane(pc.window.data.values.data() + static_cast<std::size_t>(c) * nvox + z * Y * X,
                 p.channels.data() + static_cast<std::size_t>(c) * ps * ps);
    }
    for (std::size_t m = 0; m < mnames.size(); ++m) {
      copy_plane(pc.maps.at(mnames[m]).values.data() + z * Y * X,
                 p.channels.data() + (static_cast<std::size_t>(wl) + m) * ps * ps);
    }
    copy_plane(pc.lesion_gt.values.data() + z * Y * X, p.gt.data());
    patches[static_cast<std::size_t>(i)] = std::move(p);
  }
  return patches;
}

Tensor stack_patches(const std::vector<Patch>& patches) {
  require(!patches.empty(), ErrKind::data, "no patches to stack");
  const std::size_t n = patches.size();
  const std::size_t c = patches[0].channels.dim(0);
  const std::size_t ps = patches[0].channels.dim(1);
  Tensor out({n, c + 1, ps, ps});
  const std::size_t plane = ps * ps;
  for (std::size_t i = 0; i < n; ++i) {
    require(patches[i].channels.dims() == patches[0].channels.dims(), ErrKind::shape, "patch dims differ");
    float* dst = out.data() + i * (c + 1) * plane;
    std::copy(patches[i].channels.data(), patches[i].channels.data() + c * plane, dst);
    std::copy(patches[i].gt.data(), patches[i].gt.data() + plane, dst + c * plane);
  }
  return out;
}

}  // namespace pwtk
