#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace scws {

/// mt19937_64 with hand-rolled uniform/normal draws. The standard library's
/// distributions are implementation-defined, which would break byte-identical
/// synthetic data across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Derives an independent stream from a seed and a tuple of indices.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    Rng r(0);
    r.engine_.seed(seq);
    return r;
  }

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi].
  long integer(long lo, long hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<long>(engine_() % span);
  }

  bool coin(double p = 0.5) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; the second variate is discarded to keep the stream simple.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace scws
