// SPDX-License-Identifier: Apache-2.0
//
// Deterministic splittable RNG. The stream generator is splitmix64; child
// streams derive from (seed, label) by hashing the label with FNV-1a and
// remixing, so the same seed and label sequence replays identically on any
// platform. All floating point draws are built from integer output only.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace pwtk {

class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : state_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  SeededRng split(const std::string& label) const {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
    for (unsigned char c : label) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return SeededRng(mix(state_ ^ mix(h)));
  }

  SeededRng split(std::uint64_t index) const { return split("#" + std::to_string(index)); }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r < limit) return r % n;
    }
  }

  // Standard normal via Box-Muller; the pair partner is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pwtk
