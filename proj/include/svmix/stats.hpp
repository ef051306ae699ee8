#pragma once

#include <functional>
#include <vector>

namespace svmix {
namespace stats {

// Regularized incomplete beta function I_x(a, b) by continued fraction
// (modified Lentz). Serves as the analytic Beta CDF oracle in tests.
double incomplete_beta(double a, double b, double x);

// CDF of Beta(a, b) at x.
double beta_cdf(double a, double b, double x);

// One-sample Kolmogorov-Smirnov statistic of `draws` against `cdf`.
// Sorts a copy of the sample.
double ks_statistic(std::vector<double> draws,
                    const std::function<double(double)>& cdf);

// Pearson chi-square statistic for observed counts vs uniform expectation.
double chi_square_uniform(const std::vector<std::size_t>& counts);

// Two-sided binomial z-score of `successes` out of `n` at probability `p`
// under the normal approximation.
double binomial_z(std::size_t successes, std::size_t n, double p);

double sample_mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);

}  // namespace stats
}  // namespace svmix
