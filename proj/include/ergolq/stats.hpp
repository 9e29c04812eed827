#pragma once

#include <cmath>
#include <span>
#include <vector>

namespace ergolq {

/// A Monte Carlo point estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;

  double lo(double z = 1.96) const { return value - z * se; }
  double hi(double z = 1.96) const { return value + z * se; }
};

/// Standard error of a difference of two independent estimates.
inline double combined_se(double a, double b) { return std::sqrt(a * a + b * b); }

/// |a - b| <= k * combined standard error.
inline bool within_se(const Estimate& a, const Estimate& b, double k = 3.0) {
  return std::abs(a.value - b.value) <= k * combined_se(a.se, b.se);
}

Estimate mean_estimate(std::span<const double> xs);

/// Ordinary least squares y = intercept + slope x.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Fit of log m(t) = log beta - lambda t to grouped moment data, with
/// delete-one-group jackknife standard errors. `group_sums[g][k]` is the sum
/// of the per-path quantity over group g at abscissa k, `group_counts[g]`
/// the number of paths in group g.
struct DecayFit {
  double beta = 0.0;
  double lambda = 0.0;
  double lambda_se = 0.0;
  double log_beta_se = 0.0;
  double r2 = 0.0;
  std::vector<double> moments;
  std::vector<double> moment_se;
};

DecayFit fit_log_decay(std::span<const double> t,
                       const std::vector<std::vector<double>>& group_sums,
                       const std::vector<std::vector<double>>& group_sq_sums,
                       const std::vector<double>& group_counts);

}  // namespace ergolq
