#include "svmix/rng.hpp"

#include <cmath>

namespace svmix {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = seed;
  for (char c : tag) {
    h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<unsigned char>(c)));
  }
  return Rng(splitmix64(h));
}

double Rng::uniform() {
  // 53-bit mantissa draw mapped to (0,1): (k + 0.5) * 2^-53.
  const std::uint64_t bits = engine_() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ParamError("Rng::below: n must be positive");
  // Rejection sampling to keep the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw ParamError("Rng::gamma: shape must be positive");
  if (shape < 1.0) {
    const double boost = std::pow(uniform(), 1.0 / shape);
    return gamma(shape + 1.0) * boost;
  }
  // Marsaglia-Tsang squeeze method.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double Rng::beta(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw ParamError("Rng::beta: both shape parameters must be positive");
  }
  // The ratio rounds to exactly 0 or 1 when one gamma draw is ~16 orders of
  // magnitude below the other (small shapes); those artifacts are redrawn so
  // results stay strictly inside (0,1).
  for (;;) {
    const double ga = gamma(a);
    const double gb = gamma(b);
    const double r = ga / (ga + gb);
    if (r > 0.0 && r < 1.0) return r;
  }
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

LambdaSampler::LambdaSampler(double alpha, std::uint64_t seed)
    : alpha_(alpha), rng_(seed) {
  if (!(alpha > 0.0)) {
    throw ParamError("LambdaSampler: alpha must be positive, got " +
                     std::to_string(alpha));
  }
}

double LambdaSampler::sample() {
  // Exact 0/1 can only arise from float underflow; redraw those.
  for (;;) {
    const double lam = rng_.beta(alpha_, alpha_);
    if (lam > 0.0 && lam < 1.0) return lam;
  }
}

}  // namespace svmix
