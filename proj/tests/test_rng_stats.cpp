#include <algorithm>
#include <cmath>
#include <doctest.h>
#include <vector>

#include "svmix/error.hpp"
#include "svmix/rng.hpp"
#include "svmix/stats.hpp"

using namespace svmix;

TEST_CASE("regularized incomplete beta matches high-precision references") {
  struct Case {
    double a, b, x, want;
  };
  // Closed forms where they exist: I(2,3,x) = x^2(6-8x+3x^2),
  // I(3,2,x) = x^3(4-3x), I(5,1,x) = x^5, I(a,a,1/2) = 1/2.
  const Case cases[] = {
      {0.2, 0.2, 0.3, 0.4332041843759644911200074},
      {2.0, 3.0, 0.4, 0.5248000000000000383693077},
      {0.5, 0.5, 0.5, 0.5},
      {3.0, 2.0, 0.7, 0.6516999999999999216626634},
      {0.8, 0.8, 0.1, 0.1318056690787288092840912},
      {5.0, 1.0, 0.9, 0.5904900000000000728417326},
  };
  for (const Case& c : cases)
    CHECK(std::fabs(stats::incomplete_beta(c.a, c.b, c.x) - c.want) < 1e-14);
  CHECK(stats::incomplete_beta(1.5, 2.5, 0.0) == 0.0);
  CHECK(stats::incomplete_beta(1.5, 2.5, 1.0) == 1.0);
}

TEST_CASE("ks statistic against the empirical extremes") {
  // Sample {0.25, 0.75} against U(0,1): steps at 0.25 and 0.75.
  // Gaps: |0.5-0.25|=0.25 above at first point, |0-0.25| below, etc.
  std::vector<double> sample{0.75, 0.25};
  double d = stats::ks_statistic(sample, [](double x) { return x; });
  CHECK(d == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("chi-square against uniform expectation") {
  // counts {10,20}, n=30, expected 15 per cell: (25+25)/15 = 10/3.
  std::vector<std::size_t> counts{10, 20};
  CHECK(stats::chi_square_uniform(counts) ==
        doctest::Approx(10.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("binomial z-score normal approximation") {
  // k=60, n=100, p=0.5: z = 10 / 5 = 2.
  CHECK(stats::binomial_z(60, 100, 0.5) == doctest::Approx(2.0));
}

TEST_CASE("seeded streams are deterministic and isolated by tag") {
  Rng a = Rng::stream(99, "alpha");
  Rng b = Rng::stream(99, "alpha");
  Rng c = Rng::stream(99, "beta");
  Rng d = Rng::stream(100, "alpha");
  bool same_ab = true, same_ac = true, same_ad = true;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    same_ab &= (va == b.next_u64());
    same_ac &= (va == c.next_u64());
    same_ad &= (va == d.next_u64());
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
  CHECK_FALSE(same_ad);
}

TEST_CASE("uniform draws live strictly inside (0,1)") {
  Rng rng(7);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("below produces unbiased bounded draws") {
  Rng rng(21);
  std::vector<std::size_t> counts(7, 0);
  const std::size_t n = 70000;
  for (std::size_t i = 0; i < n; ++i) ++counts[rng.below(7)];
  // 6 degrees of freedom; 99.9th percentile is ~22.5.
  CHECK(stats::chi_square_uniform(counts) < 22.5);
}

TEST_CASE("permutations cover S_3 uniformly") {
  Rng rng(5);
  std::vector<std::size_t> counts(6, 0);
  const std::size_t n = 60000;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = rng.permutation(3);
    // Lehmer index of the permutation.
    std::size_t idx = p[0] * 2 + (p[1] > p[2] ? 1 : 0);
    ++counts[idx];
  }
  std::size_t total = 0;
  for (std::size_t c : counts) total += c;
  CHECK(total == n);
  // 5 degrees of freedom; 99.9th percentile is ~20.5.
  CHECK(stats::chi_square_uniform(counts) < 20.5);
}

TEST_CASE("normal draws match the first two moments") {
  Rng rng(31);
  std::vector<double> xs(200000);
  for (double& x : xs) x = rng.normal(2.0, 3.0);
  CHECK(std::fabs(stats::sample_mean(xs) - 2.0) < 0.05);
  CHECK(std::fabs(stats::sample_variance(xs) - 9.0) < 0.2);
}

TEST_CASE("gamma draws match the first two moments") {
  Rng rng(37);
  for (double shape : {0.5, 1.0, 2.5}) {
    std::vector<double> xs(150000);
    for (double& x : xs) x = rng.gamma(shape);
    CHECK(std::fabs(stats::sample_mean(xs) - shape) < 0.03 * (1.0 + shape));
    CHECK(std::fabs(stats::sample_variance(xs) - shape) < 0.06 * (1.0 + shape));
  }
}

TEST_CASE("symmetric beta draws pass a distributional battery") {
  for (double alpha : {0.2, 0.5, 0.8, 1.0, 2.0, 3.0}) {
    Rng rng(Rng::stream(1234, "beta-check").next_u64());
    const std::size_t n = 20000;
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.beta(alpha, alpha);
    for (double x : xs) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
    }
    const double d = stats::ks_statistic(
        xs, [alpha](double x) { return stats::beta_cdf(alpha, alpha, x); });
    CHECK(d < 0.02);  // KS 1% critical value for n=20000 is ~0.0115
    CHECK(std::fabs(stats::sample_mean(xs) - 0.5) < 0.01);
    const double want_var = 1.0 / (4.0 * (2.0 * alpha + 1.0));
    CHECK(std::fabs(stats::sample_variance(xs) - want_var) < 0.01);
  }
}

TEST_CASE("mixing-ratio sampler validates its concentration and range") {
  CHECK_THROWS_AS(LambdaSampler(0.0, 1), ParamError);
  CHECK_THROWS_AS(LambdaSampler(-1.0, 1), ParamError);
  LambdaSampler s(0.2, 77);
  CHECK(s.alpha() == 0.2);
  for (int i = 0; i < 20000; ++i) {
    const double v = s.sample();
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  LambdaSampler s1(0.2, 77);
  LambdaSampler s2(0.2, 77);
  bool same = true;
  for (int i = 0; i < 100; ++i) same &= (s1.sample() == s2.sample());
  CHECK(same);
}
