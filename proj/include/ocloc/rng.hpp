#pragma once

#include <cmath>
#include <cstdint>
#include <array>

namespace ocloc {

// Deterministic, serializable PRNG (xoshiro256++). The library avoids
// std::*_distribution on purpose: their sequences differ across standard
// library implementations, and checkpoints must replay bit-exactly.
class Rng {
 public:
  Rng() : Rng(0x9e3779b97f4a7c15ull) {}

  explicit Rng(uint64_t seed) { reseed(seed); }

  void reseed(uint64_t seed) {
    // splitmix64 expansion; never leaves the state all-zero.
    uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      s = z ^ (z >> 31);
    }
  }

  // Independent stream for (seed, index) pairs; used for per-step batch
  // sampling so resuming at step t replays the exact step-t randomness.
  static Rng stream(uint64_t seed, uint64_t index) {
    return Rng(seed ^ (0x517cc1b727220a95ull * (index + 1)));
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    uint64_t* s = state_.data();
    const uint64_t result = rotl(s[0] + s[3], 23) + s[0];
    const uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform over {lo, ..., hi} inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Box-Muller, one draw per call; no cached second value so the state
  // alone determines the sequence.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Marsaglia-Tsang; shape boost for a < 1 keeps the sampler exact.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) {
        u = uniform();
      }
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) {
        continue;
      }
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) {
        return d * v;
      }
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return d * v;
      }
    }
  }

  double beta(double a, double b) {
    double g1 = gamma(a);
    double g2 = gamma(b);
    double s = g1 + g2;
    if (s <= 0.0) {
      return 0.5;
    }
    return g1 / s;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // log(u) - log(1-u): standard logistic noise for concrete relaxations.
  double logistic() {
    double u = uniform();
    while (u <= 0.0 || u >= 1.0) {
      u = uniform();
    }
    return std::log(u) - std::log(1.0 - u);
  }

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<uint64_t, 4> state_{};
};

}  // namespace ocloc
