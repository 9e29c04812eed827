#pragma once

#include <span>
#include <vector>

#include "ergolq/common.hpp"

namespace ergolq {

/// Polynomial features of the within-period increment sum used for
/// conditional expectations E(. | F_t).
///
/// At time t > 0 the sum is standardized, z = S_t / sqrt(t), clamped to
/// [-clamp, clamp], and expanded in probabilists' Hermite polynomials
/// He_0..He_degree. At t = 0 only the constant feature remains because F_0
/// is trivial.
struct RegressionBasis {
  int degree = 3;
  double ridge = 1e-8;
  double clamp = 4.0;

  int size_at(double t) const { return t <= 0.0 ? 1 : degree + 1; }
  void features(double t, double partial_sum, double* out) const;
  /// Largest |feature| over the clamped range, used for coefficient bounds.
  double feature_bound(int k) const;
};

/// Least-squares projection onto the basis at one node, factored once and
/// reused for any number of response columns.
class NodeRegression {
 public:
  NodeRegression() = default;
  NodeRegression(const RegressionBasis& basis, double t, std::span<const double> partial_sums);

  int n_features() const { return static_cast<int>(features_.cols()); }
  std::size_t n_samples() const { return static_cast<std::size_t>(features_.rows()); }
  double condition_number() const { return condition_; }
  /// Row `p` of the design matrix.
  auto feature_row(std::size_t p) const { return features_.row(static_cast<Eigen::Index>(p)); }
  const Mat& design() const { return features_; }

  /// Coefficients (n_features x k) for responses Y (n_samples x k).
  Mat fit(const Mat& Y) const;
  /// Coefficients from pre-accumulated moments sum_p phi_p y_p^T.
  Mat fit_from_moments(const Mat& cross) const;

 private:
  Mat features_;
  Eigen::LDLT<Mat> gram_;
  double condition_ = 1.0;
};

/// Regression surrogate of an adapted matrix-valued field over one period:
/// coefficients per node 0..N, value(node, S) = sum_k beta_k phi_k(S).
struct GridField {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  int steps = 0;
  double tau = 1.0;
  RegressionBasis basis;
  /// coef[i] is n_features(i) x (rows*cols), column-major entry order.
  std::vector<Mat> coef;

  double dt() const { return tau / steps; }
  double node_time(int i) const { return tau * i / steps; }
  /// Node index whose left cell contains `phase`.
  int node_of_phase(double phase) const;
  void value_into(int node, double partial_sum, Eigen::Ref<Mat> out) const;
  Mat value(int node, double partial_sum) const;
  /// Deterministic value at node 0 (only the constant feature is active).
  Mat initial() const { return value(0, 0.0); }
  /// Constant coefficient at a node: the mean over the unclamped feature law.
  Mat mean_value(int node) const;
  /// Entrywise bound over the clamped feature range.
  double bound() const;

  static GridField zeros(Eigen::Index rows, Eigen::Index cols, int steps, double tau,
                         const RegressionBasis& basis);
};

}  // namespace ergolq
