// SPDX-License-Identifier: Apache-2.0
#include "phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pwtk {

void PhantomConfig::validate() const {
  require(dims[0] >= 2, ErrKind::parameter, "phantom needs T >= 2");
  for (auto d : dims) require(d >= 1, ErrKind::parameter, "phantom dims must be >= 1");
  require(dt > 0.0, ErrKind::parameter, "dt must be positive");
  require(alpha > 0.0 && beta > 0.0, ErrKind::parameter, "gamma shape and scale must be positive");
  require(s0 > 0.0, ErrKind::parameter, "baseline signal must be positive");
  require(kappa > 0.0, ErrKind::parameter, "contrast sensitivity must be positive");
  require(noise_sigma >= 0.0, ErrKind::parameter, "noise sigma must be non-negative");
  require(gamma_dilation >= 1.0, ErrKind::parameter, "penumbra growth factor must be >= 1");
  require(shell_washout >= 1.0, ErrKind::parameter, "shell washout stretch must be >= 1");
  require(t0 + alpha * beta < static_cast<double>(dims[0]) * dt, ErrKind::parameter,
          "bolus peak must occur inside the acquisition window");
  require(core_lambda_threshold > 0.0 && core_lambda_threshold < 1.0, ErrKind::parameter,
          "core lambda threshold must lie in (0,1)");
  for (const auto& l : lesions) {
    require(l.lambda >= 0.0 && l.lambda <= 1.0, ErrKind::parameter, "lesion lambda must lie in [0,1]");
    require(l.delay >= 0.0, ErrKind::parameter, "lesion delay must be non-negative");
    for (double r : l.radii) require(r > 0.0, ErrKind::parameter, "lesion radii must be positive");
  }
}

double gamma_variate(double t, double t0, double alpha, double beta) {
  require(alpha > 0.0 && beta > 0.0, ErrKind::parameter, "gamma shape and scale must be positive");
  if (t <= t0) return 0.0;
  const double d = t - t0;
  const double peak = alpha * beta;
  // K = (alpha*beta)^-alpha * e^alpha normalizes the maximum to 1.
  return std::pow(d / peak, alpha) * std::exp(alpha - d / beta);
}

namespace {

struct VoxelState {
  float lambda = 1.0f;   // effective attenuation
  float delay = 0.0f;    // effective arrival delay, seconds
  float washout = 1.0f;  // post-peak time stretch
  bool brain = false;
  bool core = false;
  bool follow_up = false;
};

// Normalized ellipsoid radius: <= 1 inside.
double ellipsoid_rho(double z, double y, double x, const LesionSpec& l) {
  const double dz = (z - l.center[0]) / l.radii[0];
  const double dy = (y - l.center[1]) / l.radii[1];
  const double dx = (x - l.center[2]) / l.radii[2];
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

}  // namespace

PhantomCase synth_case(const PhantomConfig& config, const std::string& case_id) {
  PhantomConfig cfg = config;
  if (cfg.lesions.empty()) {
    LesionSpec l;
    l.center = {cfg.dims[1] * 0.5, cfg.dims[2] * 0.42, cfg.dims[3] * 0.58};
    l.radii = {std::max(1.0, cfg.dims[1] * 0.2), cfg.dims[2] * 0.08, cfg.dims[3] * 0.08};
    l.lambda = 0.1;
    l.delay = 0.0;
    cfg.lesions.push_back(l);
  }
  cfg.validate();

  const std::size_t T = cfg.dims[0], Z = cfg.dims[1], Y = cfg.dims[2], X = cfg.dims[3];
  const std::size_t nvox = Z * Y * X;
  const double zc = (Z - 1) * 0.5, yc = (Y - 1) * 0.5, xc = (X - 1) * 0.5;
  const double bz = std::max(1.0, Z * 0.42), by = Y * 0.42, bx = X * 0.42;

  std::vector<VoxelState> vox(nvox);
  for (std::size_t z = 0; z < Z; ++z) {
    for (std::size_t y = 0; y < Y; ++y) {
      for (std::size_t x = 0; x < X; ++x) {
        VoxelState& v = vox[(z * Y + y) * X + x];
        const double dz = (z - zc) / bz, dy = (y - yc) / by, dx = (x - xc) / bx;
        v.brain = dz * dz + dy * dy + dx * dx <= 1.0;
        if (!v.brain) continue;
        for (const auto& l : cfg.lesions) {
          const double rho = ellipsoid_rho(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x), l);
          const bool core_lesion = l.lambda < cfg.core_lambda_threshold;
          if (rho <= 1.0) {
            v.lambda = std::min(v.lambda, static_cast<float>(l.lambda));
            v.delay = std::max(v.delay, static_cast<float>(l.delay));
            if (core_lesion) {
              v.core = true;
              v.follow_up = true;
            }
          } else if (core_lesion && cfg.gamma_dilation > 1.0 && rho <= cfg.gamma_dilation) {
            // Penumbra shell: same bolus depth and arrival as healthy
            // tissue, slower wash-out. The min/argmin map summaries cannot
            // see it; the raw temporal window can.
            v.washout = std::max(v.washout, static_cast<float>(cfg.shell_washout));
            v.follow_up = true;
          }
        }
      }
    }
  }

  Volume4 pwi(Tensor({T, Z, Y, X}), cfg.spacing, cfg.dt);
  std::vector<double> mean_noiseless(T, 0.0);
  std::size_t brain_count = 0;

  SeededRng noise = SeededRng(cfg.seed).split("noise/" + case_id);
  for (std::size_t i = 0; i < nvox; ++i) {
    const VoxelState& v = vox[i];
    if (!v.brain) continue;
    ++brain_count;
    const double peak_offset = cfg.alpha * cfg.beta;
    for (std::size_t t = 0; t < T; ++t) {
      const double ts = static_cast<double>(t) * cfg.dt;
      double delta = ts - v.delay - cfg.t0;
      if (delta > peak_offset && v.washout > 1.0f) {
        // Stretch time past the peak: depth and peak position stay put.
        delta = peak_offset + (delta - peak_offset) / v.washout;
      }
      const double c = gamma_variate(cfg.t0 + delta, cfg.t0, cfg.alpha, cfg.beta);
      const double clean = cfg.s0 * std::exp(-cfg.kappa * v.lambda * c);
      mean_noiseless[t] += clean;
      double s = clean;
      if (cfg.noise_sigma > 0.0) s += cfg.noise_sigma * noise.normal();
      pwi.values.data()[t * nvox + i] = static_cast<float>(s);
    }
  }
  require(brain_count > 0, ErrKind::mask, "phantom brain ellipse is empty");

  int peak = 0;
  for (std::size_t t = 1; t < T; ++t) {
    if (mean_noiseless[t] < mean_noiseless[peak]) peak = static_cast<int>(t);
  }

  const double duration = static_cast<double>(T) * cfg.dt;
  Volume3 ttp(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 tmax(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 rcbv(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 mtt(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 rcbf(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 adc(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 core(Tensor({Z, Y, X}), cfg.spacing);
  Volume3 follow(Tensor({Z, Y, X}), cfg.spacing);

  for (std::size_t i = 0; i < nvox; ++i) {
    const VoxelState& v = vox[i];
    if (!v.brain) continue;
    std::size_t min_t = 0;
    float min_val = pwi.values[i];
    for (std::size_t t = 1; t < T; ++t) {
      const float s = pwi.values[t * nvox + i];
      if (s < min_val) {
        min_val = s;
        min_t = t;
      }
    }
    // No measurable bolus arrival: time-to-peak is undefined, use the
    // acquisition-duration sentinel.
    const bool no_bolus = cfg.kappa * v.lambda < 1e-3;
    const double ttp_s = no_bolus ? duration : static_cast<double>(min_t) * cfg.dt;
    ttp.values[i] = static_cast<float>(ttp_s);
    tmax.values[i] = static_cast<float>(std::max(ttp_s - cfg.t0, 0.0));
    const double drop = std::max(static_cast<double>(cfg.s0) - min_val, 0.0);
    rcbv.values[i] = static_cast<float>(drop);
    const double mtt_s = v.lambda > 0.0f ? std::min(cfg.alpha * cfg.beta / v.lambda, duration) : duration;
    mtt.values[i] = static_cast<float>(mtt_s);
    rcbf.values[i] = static_cast<float>(drop / mtt_s);
    adc.values[i] = static_cast<float>(cfg.adc_healthy * (v.core ? cfg.adc_core_scale : 1.0));
    core.values[i] = v.core ? 1.0f : 0.0f;
    follow.values[i] = v.follow_up ? 1.0f : 0.0f;
  }

  PhantomCase out;
  out.bundle.case_id = case_id;
  out.bundle.pwi = std::move(pwi);
  out.bundle.maps["rcbf"] = std::move(rcbf);
  out.bundle.maps["rcbv"] = std::move(rcbv);
  out.bundle.maps["mtt"] = std::move(mtt);
  out.bundle.maps["ttp"] = std::move(ttp);
  out.bundle.maps["tmax"] = std::move(tmax);
  out.bundle.maps["adc"] = std::move(adc);
  out.bundle.lesion_gt = follow;
  out.true_peak_index = peak;
  out.core_mask = std::move(core);
  out.follow_up_mask = std::move(follow);
  out.config = cfg;
  return out;
}

std::string corpus_case_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "case_%04d", index);
  return buf;
}

std::vector<PhantomCase> synth_corpus(int n, std::uint64_t base_seed, const PhantomConfig& base) {
  require(n >= 1, ErrKind::parameter, "corpus size must be >= 1");
  std::vector<PhantomCase> cases(n);
  const SeededRng root(base_seed);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const std::string id = corpus_case_id(static_cast<int>(i));
    SeededRng rng = root.split(id);

    PhantomConfig cfg = base;
    cfg.seed = base_seed ^ rng.next_u64();
    // Bolus timing varies around the base values but always peaks inside
    // the acquisition window.
    cfg.t0 = base.t0 * rng.uniform(0.8, 1.25);
    cfg.alpha = base.alpha * rng.uniform(0.8, 1.3);
    cfg.beta = base.beta * rng.uniform(0.75, 1.25);
    const double horizon = 0.85 * static_cast<double>(cfg.dims[0]) * cfg.dt;
    if (cfg.t0 + cfg.alpha * cfg.beta >= horizon) {
      cfg.beta = std::max(0.5 * cfg.dt, (horizon - cfg.t0) / cfg.alpha);
    }
    cfg.gamma_dilation = rng.uniform(1.25, 1.6);
    cfg.shell_washout = rng.uniform(2.0, 3.5);

    const double Z = static_cast<double>(cfg.dims[1]);
    const double Y = static_cast<double>(cfg.dims[2]);
    const double X = static_cast<double>(cfg.dims[3]);
    const int n_lesions = rng.uniform() < 0.4 ? 2 : 1;
    cfg.lesions.clear();
    for (int k = 0; k < n_lesions; ++k) {
      LesionSpec l;
      l.center = {rng.uniform(0.3, 0.7) * Z, rng.uniform(0.3, 0.7) * Y, rng.uniform(0.3, 0.7) * X};
      l.radii = {rng.uniform(1.0, 2.0), rng.uniform(3.0, 6.0), rng.uniform(3.0, 6.0)};
      l.lambda = rng.uniform(0.0, 0.25);
      l.delay = 0.0;
      cfg.lesions.push_back(l);
    }
    cases[i] = synth_case(cfg, id);
  });
  return cases;
}

}  // namespace pwtk
