// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "autodiff.hpp"
#include "metrics.hpp"
#include "oracles.hpp"
#include "rng.hpp"

using namespace pwtk;

TEST_SUITE_BEGIN("metrics");

namespace {

Volume3 mask_of(std::vector<std::size_t> dims, std::vector<float> vals,
                std::array<double, 3> spacing = {1, 1, 1}) {
  return Volume3(Tensor(std::move(dims), std::move(vals)), spacing);
}

Volume3 single_voxel(std::size_t z, std::size_t y, std::size_t x) {
  Tensor t({2, 4, 5});
  t.data()[(z * 4 + y) * 5 + x] = 1.0f;
  return Volume3(std::move(t), {1, 1, 1});
}

}  // namespace

TEST_CASE("binarize uses a strict threshold") {
  const Volume3 p = mask_of({1, 1, 4}, {0.4f, 0.5f, 0.51f, 1.0f});
  const Volume3 m = binarize(p, 0.5);
  CHECK(m.values[0] == 0.0f);
  CHECK(m.values[1] == 0.0f);  // exactly 0.5 is excluded
  CHECK(m.values[2] == 1.0f);
  CHECK(m.values[3] == 1.0f);
}

TEST_CASE("overlap metrics on hand-counted masks") {
  SUBCASE("identical nonempty masks") {
    const Volume3 a = mask_of({1, 2, 2}, {1, 0, 1, 0});
    CHECK(dice_binary(a, a) == doctest::Approx(1.0));
    CHECK(precision_binary(a, a) == doctest::Approx(1.0));
    CHECK(recall_binary(a, a) == doctest::Approx(1.0));
  }
  SUBCASE("disjoint nonempty masks") {
    const Volume3 a = mask_of({1, 2, 2}, {1, 0, 0, 0});
    const Volume3 b = mask_of({1, 2, 2}, {0, 1, 0, 0});
    CHECK(dice_binary(a, b) == doctest::Approx(0.0));
    CHECK(precision_binary(a, b) == doctest::Approx(0.0));
    CHECK(recall_binary(a, b) == doctest::Approx(0.0));
  }
  SUBCASE("counted overlap: |a| = 4, |b| = 4, both = 2") {
    const Volume3 a = mask_of({1, 2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
    const Volume3 b = mask_of({1, 2, 4}, {1, 1, 0, 0, 1, 1, 0, 0});
    CHECK(dice_binary(a, b) == doctest::Approx(0.5));
    CHECK(precision_binary(a, b) == doctest::Approx(0.5));
    CHECK(recall_binary(a, b) == doctest::Approx(0.5));
  }
  SUBCASE("asymmetric counts: |pred| = 2, |truth| = 4, both = 1") {
    const Volume3 pred = mask_of({1, 2, 4}, {1, 1, 0, 0, 0, 0, 0, 0});
    const Volume3 truth = mask_of({1, 2, 4}, {1, 0, 1, 1, 1, 0, 0, 0});
    CHECK(dice_binary(pred, truth) == doctest::Approx(2.0 / 6.0));
    CHECK(precision_binary(pred, truth) == doctest::Approx(0.5));   // 1 of 2 predicted
    CHECK(recall_binary(pred, truth) == doctest::Approx(0.25));     // 1 of 4 true
  }
  SUBCASE("empty conventions") {
    const Volume3 e = mask_of({1, 1, 2}, {0, 0});
    const Volume3 n = mask_of({1, 1, 2}, {1, 0});
    CHECK(dice_binary(e, e) == doctest::Approx(1.0));
    CHECK(precision_binary(e, e) == doctest::Approx(1.0));
    CHECK(recall_binary(e, e) == doctest::Approx(1.0));
    CHECK(precision_binary(e, n) == doctest::Approx(0.0));
    CHECK(recall_binary(n, e) == doctest::Approx(0.0));
  }
  SUBCASE("dice is symmetric") {
    SeededRng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      Tensor ta({2, 3, 3}), tb({2, 3, 3});
      for (auto& v : ta.storage()) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
      for (auto& v : tb.storage()) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
      const Volume3 a(ta, {1, 1, 1}), b(tb, {1, 1, 1});
      CHECK(dice_binary(a, b) == dice_binary(b, a));
    }
  }
}

TEST_CASE("single-voxel surface distances are the plain Euclidean distance") {
  const Volume3 a = single_voxel(0, 0, 0);
  const Volume3 b = single_voxel(0, 3, 4);
  const SurfaceDistances d = surface_distances(a, b);
  CHECK(d.hausdorff_mm == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(d.assd_mm == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("identical masks have zero distances") {
  Tensor t({3, 4, 4});
  for (std::size_t i = 5; i < 12; ++i) t.data()[i] = 1.0f;
  const Volume3 a(t, {2, 1.5, 1});
  const SurfaceDistances d = surface_distances(a, a);
  CHECK(d.hausdorff_mm == 0.0);
  CHECK(d.assd_mm == 0.0);
}

TEST_CASE("distances match the brute-force oracle and hausdorff bounds assd") {
  SeededRng rng(77);
  for (int rep = 0; rep < 40; ++rep) {
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
    CHECK(std::abs(fast.hausdorff_mm - brute.hausdorff) < 1e-9);
    CHECK(std::abs(fast.assd_mm - brute.assd) < 1e-9);
    CHECK(fast.hausdorff_mm >= fast.assd_mm - 1e-12);
    // symmetry
    const auto swapped = surface_distances(Volume3(b, spacing), Volume3(a, spacing));
    CHECK(swapped.hausdorff_mm == doctest::Approx(fast.hausdorff_mm).epsilon(1e-12));
    CHECK(swapped.assd_mm == doctest::Approx(fast.assd_mm).epsilon(1e-12));
  }
}

TEST_CASE("distances are undefined for empty masks") {
  const Volume3 a = single_voxel(0, 0, 0);
  const Volume3 e = mask_of({2, 4, 5}, std::vector<float>(40, 0.0f));
  try {
    surface_distances(a, e);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrKind::mask);
  }
}

TEST_CASE("nmi conventions and oracles") {
  SeededRng rng(41);
  std::vector<float> x(100000);
  for (auto& v : x) v = static_cast<float>(rng.uniform());

  SUBCASE("self association is 1") { CHECK(nmi(x, x) == doctest::Approx(1.0).epsilon(1e-9)); }
  SUBCASE("independent uniforms are near 0") {
    std::vector<float> y(x.size());
    for (auto& v : y) v = static_cast<float>(rng.uniform());
    CHECK(nmi(x, y) < 0.05);
  }
  SUBCASE("strictly increasing transforms keep high association") {
    // Equal-width bins mix mass at boundaries under any non-affine map, so
    // the achievable association depends on how far the transform is from
    // affine: the histogram oracle gives ~0.95 for x + 0.005x^2 and ~0.88
    // for exp(x) at 64 bins.
    std::vector<float> gentle(x.size()), strong(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      gentle[i] = x[i] + 0.005f * x[i] * x[i];
      strong[i] = std::exp(x[i]);
    }
    CHECK(nmi(x, gentle) >= 0.95);
    CHECK(nmi(x, strong) >= 0.8);
  }
  SUBCASE("affine transforms leave nmi unchanged") {
    std::vector<float> y(x.size()), z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = static_cast<float>(rng.uniform());
      z[i] = 2.0f * x[i] + 3.0f;
    }
    CHECK(nmi(z, y) == doctest::Approx(nmi(x, y)).epsilon(1e-9));
    CHECK(nmi(x, z) == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("constant input gives 0 against a non-constant partner") {
    std::vector<float> c(x.size(), 2.5f);
    CHECK(nmi(c, x) == 0.0);
    CHECK(nmi(x, c) == 0.0);
  }
  SUBCASE("all entries lie in [0, 1]") {
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<float> u(512), v(512);
      for (std::size_t i = 0; i < u.size(); ++i) {
        u[i] = static_cast<float>(rng.uniform(-5.0, 5.0));
        v[i] = static_cast<float>(rng.uniform() < 0.5 ? u[i] : rng.uniform(-5.0, 5.0));
      }
      const double m = nmi(u, v);
      CHECK(m >= 0.0);
      CHECK(m <= 1.0);
    }
  }
}

TEST_CASE("soft dice on binarized inputs agrees with the counting dice") {
  SeededRng rng(91);
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 27;
    Tensor ta({3, 3, 3}), tb({3, 3, 3});
    for (auto& v : ta.storage()) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
    for (auto& v : tb.storage()) v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
    const Volume3 a(ta, {1, 1, 1}), b(tb, {1, 1, 1});
    const double counted = dice_binary(a, b);

    ad::Graph<float> g;
    Tensor p({n}, std::vector<float>(ta.storage()));
    Tensor gt({n}, std::vector<float>(tb.storage()));
    const auto sd = g.soft_dice(g.constant(p), gt, 1e-6f);
    CHECK(std::abs(static_cast<double>(sd.mean_dice) - counted) < 1e-5);
  }
}

TEST_CASE("per-case evaluation and aggregation") {
  SUBCASE("perfect prediction") {
    const Volume3 a = single_voxel(1, 2, 3);
    const CaseMetrics m = evaluate_case("c", a, a);
    CHECK(m.dice == doctest::Approx(1.0));
    CHECK(m.precision == doctest::Approx(1.0));
    CHECK(m.recall == doctest::Approx(1.0));
    REQUIRE(m.hausdorff_mm.has_value());
    CHECK(*m.hausdorff_mm == 0.0);
    CHECK(*m.assd_mm == 0.0);
  }
  SUBCASE("mean and sample standard deviation") {
    CaseMetrics a, b;
    a.case_id = "a";
    a.dice = 0.2;
    b.case_id = "b";
    b.dice = 0.4;
    const MetricsReport r = aggregate({a, b});
    CHECK(r.mean_dice == doctest::Approx(0.3));
    CHECK(r.sd_dice == doctest::Approx(std::sqrt(0.02)).epsilon(1e-9));  // 0.1414...
    CHECK(r.distance_cases == 0);
  }
  SUBCASE("undefined distances are excluded from aggregates") {
    CaseMetrics a, b;
    a.dice = 1.0;
    a.hausdorff_mm = 2.0;
    a.assd_mm = 1.0;
    b.dice = 0.0;  // no distances
    const MetricsReport r = aggregate({a, b});
    CHECK(r.distance_cases == 1);
    CHECK(r.mean_hd == doctest::Approx(2.0));
  }
}

TEST_CASE("metrics csv round trip") {
  CaseMetrics a;
  a.case_id = "case_0000";
  a.dice = 0.75;
  a.hausdorff_mm = 3.5;
  a.assd_mm = 1.25;
  a.precision = 0.8;
  a.recall = 0.7;
  CaseMetrics b;
  b.case_id = "case_0001";
  b.dice = 0.25;
  const MetricsReport r = aggregate({a, b});
  const std::string csv = metrics_csv(r);
  CHECK(csv.find("case_id,dice,hd,assd,precision,recall") == 0);
  CHECK(csv.find("nan") != std::string::npos);  // b's undefined distances
  const MetricsReport back = parse_metrics_csv(csv);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.mean_dice == doctest::Approx(r.mean_dice));
  CHECK(back.rows[0].hausdorff_mm.has_value());
  CHECK_FALSE(back.rows[1].hausdorff_mm.has_value());
}

TEST_CASE("nmi csv layout") {
  NmiMatrix m;
  m.feature_names = {"feature_0", "feature_1"};
  m.map_names = {"rcbf", "tmax"};
  m.values = {0.1, 0.9, 0.25, 0.5};
  const std::string csv = nmi_csv(m);
  CHECK(csv.find("feature,rcbf,tmax") == 0);
  CHECK(csv.find("feature_1,0.250000,0.500000") != std::string::npos);
}

TEST_SUITE_END();
