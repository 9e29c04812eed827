#include "ergolq/regression.hpp"

#include <algorithm>
#include <cmath>

namespace ergolq {

void RegressionBasis::features(double t, double partial_sum, double* out) const {
  out[0] = 1.0;
  if (t <= 0.0) return;
  const double z = std::clamp(partial_sum / std::sqrt(t), -clamp, clamp);
  if (degree >= 1) out[1] = z;
  for (int k = 1; k < degree; ++k) out[k + 1] = z * out[k] - k * out[k - 1];
}

double RegressionBasis::feature_bound(int k) const {
  // Hermite polynomials on [-c, c]: sample densely, they are smooth.
  double best = 0.0;
  std::vector<double> buf(static_cast<std::size_t>(degree) + 1);
  for (int i = 0; i <= 400; ++i) {
    const double z = -clamp + 2.0 * clamp * i / 400.0;
    features(1.0, z, buf.data());
    best = std::max(best, std::abs(buf[static_cast<std::size_t>(k)]));
  }
  return best;
}

NodeRegression::NodeRegression(const RegressionBasis& basis, double t,
                               std::span<const double> partial_sums) {
  const int nf = basis.size_at(t);
  const auto P = static_cast<Eigen::Index>(partial_sums.size());
  require(P >= 1, ErrorKind::kDomain, "regression without samples");
  features_.resize(P, nf);
  std::vector<double> buf(static_cast<std::size_t>(nf));
  for (Eigen::Index p = 0; p < P; ++p) {
    basis.features(t, partial_sums[static_cast<std::size_t>(p)], buf.data());
    for (int k = 0; k < nf; ++k) features_(p, k) = buf[static_cast<std::size_t>(k)];
  }
  Mat gram = features_.transpose() * features_ / static_cast<double>(P);
  // The intercept is left unpenalized so that constant responses are exact.
  if (nf > 1) gram.diagonal().tail(nf - 1).array() += basis.ridge;
  Eigen::SelfAdjointEigenSolver<Mat> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  condition_ = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(condition_ < 1e12)) {
    fail(ErrorKind::kNumerical,
         "ill-conditioned regression at t=" + std::to_string(t) +
             " (condition number " + std::to_string(condition_) + ")");
  }
  gram_.compute(gram);
}

Mat NodeRegression::fit(const Mat& Y) const {
  require(Y.rows() == features_.rows(), ErrorKind::kDimension, "response count mismatch");
  return fit_from_moments(features_.transpose() * Y);
}

Mat NodeRegression::fit_from_moments(const Mat& cross) const {
  return gram_.solve(cross / static_cast<double>(features_.rows()));
}

Mat GridField::mean_value(int node) const {
  const Mat row = coef[static_cast<std::size_t>(node)].row(0);
  return Eigen::Map<const Mat>(row.data(), rows, cols);
}

int GridField::node_of_phase(double phase) const {
  const int i = static_cast<int>(std::floor(phase / dt() + 1e-9));
  return std::clamp(i, 0, steps - 1);
}

void GridField::value_into(int node, double partial_sum, Eigen::Ref<Mat> out) const {
  const Mat& c = coef[static_cast<std::size_t>(node)];
  const double t = node_time(node);
  double phi[16];
  const int nf = static_cast<int>(c.rows());
  if (nf == 1) {
    phi[0] = 1.0;
  } else {
    basis.features(t, partial_sum, phi);
  }
  for (Eigen::Index e = 0; e < rows * cols; ++e) {
    double acc = 0.0;
    for (int k = 0; k < nf; ++k) acc += phi[k] * c(k, e);
    out(e % rows, e / rows) = acc;
  }
}

Mat GridField::value(int node, double partial_sum) const {
  Mat out(rows, cols);
  value_into(node, partial_sum, out);
  return out;
}

double GridField::bound() const {
  double best = 0.0;
  for (const Mat& c : coef) {
    for (Eigen::Index e = 0; e < c.cols(); ++e) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < c.rows(); ++k) {
        acc += std::abs(c(k, e)) * (k == 0 ? 1.0 : basis.feature_bound(static_cast<int>(k)));
      }
      best = std::max(best, acc);
    }
  }
  return best;
}

GridField GridField::zeros(Eigen::Index rows, Eigen::Index cols, int steps, double tau,
                           const RegressionBasis& basis) {
  GridField g;
  g.rows = rows;
  g.cols = cols;
  g.steps = steps;
  g.tau = tau;
  g.basis = basis;
  g.coef.assign(static_cast<std::size_t>(steps) + 1, Mat::Zero(1, rows * cols));
  return g;
}

}  // namespace ergolq
