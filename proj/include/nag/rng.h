// Copyright Contributors to the NAG Project
// SPDX-License-Identifier: Apache-2.0
//
// Seeded RNG with explicit draw mappings. std::uniform_*_distribution is
// implementation-defined, so all mappings from raw bits to values live here;
// runs are reproducible across standard libraries.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace nag {

inline uint64_t splitmix64(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), eng_(seed) {}

  // Independent stream for a named purpose under the same master seed.
  Rng fork(uint64_t stream) const {
    uint64_t s = seed_ ^ (stream + 1) * 0x9e3779b97f4a7c15ull;
    return Rng(splitmix64(s));
  }

  uint64_t bits() { return eng_(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t below(uint64_t n) {
    uint64_t lim = ~uint64_t(0) - (~uint64_t(0) % n);
    uint64_t v;
    do { v = eng_(); } while (v >= lim);
    return v % n;
  }

  // Uniform in [0, 1) with 53 bits.
  double uniform() { return double(eng_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call for a stable draw count.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0) u1 = 5e-324;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::string state() const {
    std::ostringstream os;
    os << seed_ << ' ' << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> seed_ >> eng_;
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace nag
