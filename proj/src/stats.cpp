#include "ergolq/stats.hpp"

#include <numeric>

#include "ergolq/common.hpp"

namespace ergolq {

Estimate mean_estimate(std::span<const double> xs) {
  Estimate e;
  if (xs.empty()) return e;
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  e.value = mean;
  e.se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return e;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::kDomain,
          "line fit needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, ErrorKind::kDomain, "line fit with constant abscissa");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return f;
}

DecayFit fit_log_decay(std::span<const double> t,
                       const std::vector<std::vector<double>>& group_sums,
                       const std::vector<std::vector<double>>& group_sq_sums,
                       const std::vector<double>& group_counts) {
  const std::size_t K = t.size();
  const std::size_t G = group_sums.size();
  require(G >= 1 && group_counts.size() == G && group_sq_sums.size() == G,
          ErrorKind::kDomain, "decay fit needs matching group data");
  std::vector<double> total(K, 0.0), total_sq(K, 0.0);
  double count = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    count += group_counts[g];
    for (std::size_t k = 0; k < K; ++k) {
      total[k] += group_sums[g][k];
      total_sq[k] += group_sq_sums[g][k];
    }
  }
  require(count > 0.0, ErrorKind::kNumerical, "decay fit without any surviving path");

  auto fit_from = [&](const std::vector<double>& sums, double cnt) {
    std::vector<double> logs(K);
    for (std::size_t k = 0; k < K; ++k) {
      const double mom = sums[k] / cnt;
      require(mom > 0.0 && std::isfinite(mom), ErrorKind::kNumerical,
              "non-positive second-moment estimate at t=" + std::to_string(t[k]));
      logs[k] = std::log(mom);
    }
    return fit_line(t, logs);
  };

  DecayFit out;
  const LineFit full = fit_from(total, count);
  out.lambda = -full.slope;
  out.beta = std::exp(full.intercept);
  out.r2 = full.r2;
  out.moments.resize(K);
  out.moment_se.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double mean = total[k] / count;
    const double var = count > 1 ? std::max(0.0, (total_sq[k] / count - mean * mean)) *
                                       count / (count - 1.0)
                                 : 0.0;
    out.moments[k] = mean;
    out.moment_se[k] = std::sqrt(var / count);
  }

  if (G >= 2) {
    std::vector<double> slopes, intercepts;
    for (std::size_t g = 0; g < G; ++g) {
      if (group_counts[g] <= 0.0) continue;
      std::vector<double> sums(K);
      for (std::size_t k = 0; k < K; ++k) sums[k] = total[k] - group_sums[g][k];
      const LineFit f = fit_from(sums, count - group_counts[g]);
      slopes.push_back(f.slope);
      intercepts.push_back(f.intercept);
    }
    const double Gd = static_cast<double>(slopes.size());
    auto jk = [&](const std::vector<double>& v) {
      const double m = std::accumulate(v.begin(), v.end(), 0.0) / Gd;
      double ss = 0.0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::sqrt((Gd - 1.0) / Gd * ss);
    };
    out.lambda_se = jk(slopes);
    out.log_beta_se = jk(intercepts);
  }
  return out;
}

}  // namespace ergolq
