#pragma once

#include <cstdint>

namespace mosaic {

/// SplitMix64 generator. All sampling helpers below are implemented here
/// rather than through <random> distributions so that a seed produces the
/// same stream on every standard library.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() { return next(); }
  std::uint64_t next();

  /// Uniform integer in [lo, hi], unbiased (rejection sampling).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal draw (Box-Muller, one value per call).
  double normal();

  /// Derives an independent stream for a sub-task (canvas, region, head).
  SplitMix64 fork(std::uint64_t salt) const;

 private:
  std::uint64_t state_;
};

/// Mixes two words into a seed; used for per-canvas and per-region streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mosaic
