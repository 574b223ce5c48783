// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "phantom.hpp"
#include "raw_io.hpp"

using namespace pwtk;

TEST_SUITE_BEGIN("phantom");

TEST_CASE("gamma variate closed form") {
  CHECK(gamma_variate(5.0, 10.0, 2.0, 1.5) == 0.0);   // before arrival
  CHECK(gamma_variate(10.0, 10.0, 2.0, 1.5) == 0.0);  // at arrival
  CHECK(gamma_variate(13.0, 10.0, 2.0, 1.5) == doctest::Approx(1.0));  // peak at t0 + alpha*beta
  // Closed form with K = (alpha*beta)^-alpha * e^alpha.
  const double expect = std::pow(1.5 / 3.0, 2.0) * std::exp(2.0 - 1.5 / 1.5);
  CHECK(gamma_variate(11.5, 10.0, 2.0, 1.5) == doctest::Approx(expect));
  CHECK(expect == doctest::Approx(0.6796).epsilon(1e-3));
  CHECK_THROWS_AS(gamma_variate(1.0, 0.0, -1.0, 1.0), Error);
  CHECK_THROWS_AS(gamma_variate(1.0, 0.0, 1.0, 0.0), Error);
}

namespace {

PhantomConfig small_config() {
  PhantomConfig cfg;
  cfg.dims = {40, 4, 32, 32};
  cfg.noise_sigma = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("default config peaks at t0 + alpha*beta") {
  const PhantomCase pc = synth_case(small_config(), "c0");
  CHECK(pc.true_peak_index == 12);  // t0=8, alpha=2, beta=2, dt=1
}

TEST_CASE("healthy-only case has empty follow-up and uniform TTP") {
  PhantomConfig cfg = small_config();
  LesionSpec l;
  l.center = {2.0, 16.0, 16.0};
  l.radii = {1.5, 5.0, 5.0};
  l.lambda = 1.0;  // healthy attenuation: no lesion at all
  cfg.lesions = {l};
  const PhantomCase pc = synth_case(cfg, "healthy");
  for (float v : pc.follow_up_mask.values.storage()) CHECK(v == 0.0f);
  for (float v : pc.core_mask.values.storage()) CHECK(v == 0.0f);
  const auto& adc = pc.bundle.maps.at("adc");
  const auto& ttp = pc.bundle.maps.at("ttp");
  for (std::size_t i = 0; i < adc.values.size(); ++i) {
    if (adc.values[i] > 0.0f) CHECK(ttp.values[i] == doctest::Approx(12.0));
  }
}

TEST_CASE("core voxels have constant signal and sentinel TTP") {
  PhantomConfig cfg = small_config();
  LesionSpec l;
  l.center = {2.0, 16.0, 16.0};
  l.radii = {1.5, 5.0, 5.0};
  l.lambda = 0.0;  // no contrast arrives
  cfg.lesions = {l};
  cfg.gamma_dilation = 1.4;
  const PhantomCase pc = synth_case(cfg, "core");

  const std::size_t nvox = 4 * 32 * 32;
  const auto& core = pc.core_mask.values;
  std::size_t core_count = 0;
  for (std::size_t i = 0; i < nvox; ++i) {
    if (core[i] <= 0.0f) continue;
    ++core_count;
    const float s0 = pc.bundle.pwi.values[i];
    for (std::size_t t = 1; t < 40; ++t) {
      CHECK(pc.bundle.pwi.values[t * nvox + i] == s0);  // time-constant
    }
    CHECK(pc.bundle.maps.at("ttp").values[i] == doctest::Approx(40.0));  // T*dt sentinel
  }
  CHECK(core_count > 0);

  SUBCASE("core is inside follow-up") {
    for (std::size_t i = 0; i < nvox; ++i) {
      if (core[i] > 0.0f) CHECK(pc.follow_up_mask.values[i] > 0.0f);
    }
  }
  SUBCASE("dilation adds a shell") {
    std::size_t follow = 0;
    for (float v : pc.follow_up_mask.values.storage()) follow += v > 0.0f;
    CHECK(follow > core_count);
  }
}

TEST_CASE("healthy signal is unimodal without noise") {
  const PhantomCase pc = synth_case(small_config(), "uni");
  const std::size_t nvox = 4 * 32 * 32;
  const auto& adc = pc.bundle.maps.at("adc");
  int checked = 0;
  for (std::size_t i = 0; i < nvox && checked < 200; ++i) {
    if (adc.values[i] <= 0.0f || pc.follow_up_mask.values[i] > 0.0f) continue;
    ++checked;
    int strict_minima = 0;
    for (std::size_t t = 1; t + 1 < 40; ++t) {
      const float prev = pc.bundle.pwi.values[(t - 1) * nvox + i];
      const float cur = pc.bundle.pwi.values[t * nvox + i];
      const float next = pc.bundle.pwi.values[(t + 1) * nvox + i];
      if (cur < prev && cur < next) ++strict_minima;
    }
    CHECK(strict_minima == 1);
  }
  CHECK(checked > 0);
}

TEST_CASE("corpus is deterministic and well-formed") {
  PhantomConfig base = small_config();
  base.dims = {24, 4, 24, 24};
  base.noise_sigma = 1.0;
  base.t0 = 4.0;  // keep randomized peaks inside the shorter window

  SUBCASE("same seed twice is bitwise identical") {
    auto c1 = synth_corpus(5, 7, base);
    auto c2 = synth_corpus(5, 7, base);
    REQUIRE(c1.size() == c2.size());
    for (std::size_t i = 0; i < c1.size(); ++i) {
      const auto& a = c1[i].bundle.pwi.values;
      const auto& b = c2[i].bundle.pwi.values;
      REQUIRE(a.size() == b.size());
      CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
      CHECK(c1[i].true_peak_index == c2[i].true_peak_index);
    }
  }
  SUBCASE("empty corpus is rejected") { CHECK_THROWS_AS(synth_corpus(0, 1, base), Error); }
  SUBCASE("every case satisfies core inside follow-up") {
    auto cases = synth_corpus(100, 1, base);
    for (const auto& pc : cases) {
      for (std::size_t i = 0; i < pc.core_mask.values.size(); ++i) {
        if (pc.core_mask.values[i] > 0.0f) REQUIRE(pc.follow_up_mask.values[i] > 0.0f);
      }
    }
  }
  SUBCASE("brain-mean argmin tracks t0 + alpha*beta for small lesions") {
    auto cases = synth_corpus(20, 3, base);
    for (const auto& pc : cases) {
      const int analytic =
          static_cast<int>(std::lround((pc.config.t0 + pc.config.alpha * pc.config.beta) / pc.config.dt));
      CHECK(std::abs(pc.true_peak_index - analytic) <= 1);
    }
  }
}

TEST_CASE("config invariants are enforced") {
  PhantomConfig cfg = small_config();
  SUBCASE("peak outside the window") {
    cfg.t0 = 50.0;
    CHECK_THROWS_AS(synth_case(cfg, "x"), Error);
  }
  SUBCASE("negative noise") {
    cfg.noise_sigma = -1.0;
    CHECK_THROWS_AS(synth_case(cfg, "x"), Error);
  }
  SUBCASE("lambda out of range") {
    LesionSpec l;
    l.lambda = 1.5;
    cfg.lesions = {l};
    CHECK_THROWS_AS(synth_case(cfg, "x"), Error);
  }
  SUBCASE("dilation below one") {
    cfg.gamma_dilation = 0.5;
    CHECK_THROWS_AS(synth_case(cfg, "x"), Error);
  }
}

TEST_SUITE_END();
