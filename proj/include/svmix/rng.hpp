#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "svmix/error.hpp"

namespace svmix {

// Seeded random stream. Every consumer of randomness (dataset generation,
// batch shuffling, pairing, lambda draws, ensemble switching, parameter
// init, cutmix rectangles) owns its own Rng derived from (seed, tag), so
// extra draws on one stream never shift another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derive an isolated stream: hash the tag into the seed via splitmix64.
  static Rng stream(std::uint64_t seed, std::string_view tag);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on (0,1): 53 random bits, offset so 0 is never returned.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller (pair cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 boosted through
  // Gamma(shape+1) * U^{1/shape}.
  double gamma(double shape);
  // Beta(a, b) from the two-Gamma construction G_a / (G_a + G_b).
  double beta(double a, double b);

  // Uniform random permutation of {0..n-1} (Fisher-Yates).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Samples the label proportion lambda ~ Beta(alpha, alpha).
class LambdaSampler {
 public:
  LambdaSampler(double alpha, std::uint64_t seed);
  double alpha() const { return alpha_; }
  // One draw, guaranteed inside the open interval (0,1).
  double sample();

 private:
  double alpha_;
  Rng rng_;
};

}  // namespace svmix
