#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "ergolq/coefficients.hpp"
#include "ergolq/paths.hpp"
#include "ergolq/regression.hpp"
#include "ergolq/stats.hpp"

namespace ergolq {

/// How conditional expectations are realized.
///  - kMonteCarlo: least-squares regression over the bundle paths.
///  - kDeterministic: a single noiseless path with constant features; exact
///    when no input reads the Brownian path (the integrand is then zero).
///  - kAuto: deterministic iff every input is path-independent.
enum class SolveMode { kAuto, kMonteCarlo, kDeterministic };

enum class Positivity { kNone, kSemidefinite, kDefinite };

struct BsdeOptions {
  RegressionBasis basis{};
  double tol = 1e-6;
  int max_iter = 200;
  SolveMode mode = SolveMode::kAuto;
  /// Monte Carlo mode also stops once the update drops below
  /// `stat_floor` times the standard error of the time-0 value.
  bool statistical_stop = true;
  double stat_floor = 0.5;
  /// Eigenvalue floor of the time-0 value, checked when requested.
  Positivity positivity = Positivity::kNone;
  double psd_floor = 1e-8;
};

/// One grid point of a backward sweep.
struct SweepPoint {
  int node = 0;
  double phase = 0.0;
  std::size_t path = 0;
  PathPrefix prefix;
};

/// Generator of a linear BSDE dY = -f dt + Z dW evaluated at the explicit
/// scheme point: out = f(node, path, Y_{i+1}, Z_i).
using DriftFn = std::function<void(const SweepPoint&, const Mat& next, const Mat& integrand,
                                   Eigen::Ref<Mat> out)>;

/// Per-node, per-path samples of the increments of one period together with
/// the factored regressions; built once and reused across outer iterations.
class BackwardSweeper {
 public:
  BackwardSweeper(const PathBundle& bundle, const RegressionBasis& basis, bool deterministic);

  std::size_t paths() const { return paths_; }
  int steps() const { return steps_; }
  double tau() const { return tau_; }
  double dt() const { return tau_ / steps_; }
  bool deterministic() const { return deterministic_; }
  const RegressionBasis& basis() const { return basis_; }

  double increment(std::size_t p, int i) const {
    return incr_[p * static_cast<std::size_t>(steps_) + static_cast<std::size_t>(i)];
  }
  double partial_sum(std::size_t p, int i) const {
    return sums_[p * static_cast<std::size_t>(steps_ + 1) + static_cast<std::size_t>(i)];
  }
  PathPrefix prefix(std::size_t p, int i) const {
    return PathPrefix{std::span<const double>(incr_.data() + p * static_cast<std::size_t>(steps_),
                                              static_cast<std::size_t>(i)),
                      partial_sum(p, i)};
  }
  const NodeRegression& regression(int i) const { return regs_[static_cast<std::size_t>(i)]; }

  struct Result {
    GridField value;
    GridField integrand;
    Mat pathwise_se;  // standard error of terminal + sum_i f_i dt
    Mat max_integrand_se_ratio;  // max_i |Z_i coef0| / se(Z_i coef0), entrywise
  };
  /// One backward induction from a deterministic terminal value.
  Result sweep(const DriftFn& drift, const Mat& terminal, bool symmetric) const;

 private:
  std::size_t paths_;
  int steps_;
  double tau_;
  bool deterministic_;
  RegressionBasis basis_;
  std::vector<double> incr_;
  std::vector<double> sums_;
  std::vector<NodeRegression> regs_;
};

/// Values of a coefficient at every (node, path) of a sweeper, stored once.
class CoefficientGrid {
 public:
  CoefficientGrid(const CoefficientFn& fn, const BackwardSweeper& sweeper);
  Eigen::Map<const Mat> at(int node, std::size_t path) const {
    const std::size_t idx =
        varies_ ? static_cast<std::size_t>(node) * paths_ + path : static_cast<std::size_t>(node);
    return {data_.data() + idx * static_cast<std::size_t>(rows_ * cols_), rows_, cols_};
  }

 private:
  Eigen::Index rows_, cols_;
  std::size_t paths_;
  bool varies_;
  std::vector<double> data_;
};

struct BsdeGridSolution {
  GridField value;      // K (n x n) or eta (n x 1)
  GridField integrand;  // L or zeta
  /// Deterministic terminal of the final sweep; value at node 0 matches it
  /// within `periodic_residual`.
  Mat fixed_point;
  /// Standard error of the time-0 value; in deterministic mode the
  /// truncation bound |last update| r / (1 - r) instead.
  Mat fixed_point_se;
  double periodic_residual = 0.0;
  std::vector<double> trace;
  std::vector<Mat> iterates;
  double contraction_ratio = 0.0;
  int iterations = 0;
  bool converged = false;
  bool deterministic = false;
  bool matrix_mode = true;
  std::size_t n_paths = 0;  // paths behind the regressions (1 when deterministic)
  /// max over nodes of |integrand constant coefficient| / its standard error.
  double integrand_signal_ratio = 0.0;

  Mat initial() const { return value.initial(); }
  double se_norm() const { return fixed_point_se.norm(); }
};

/// Single backward sweep from `terminal` over period 0 of `bundle`.
BsdeGridSolution backward_sweep(const DriftFn& drift, const Mat& terminal,
                                const PathBundle& bundle, const RegressionBasis& basis,
                                bool symmetric = true, bool deterministic = false);

/// Periodic solution of dK = -(K A + A^T K + C^T K C + L C + C^T L + Lambda) dt + L dW.
BsdeGridSolution solve_linear_matrix_bsde(const CoefficientFn& A, const CoefficientFn& C,
                                          const CoefficientFn& Lambda,
                                          const PathBundle& bundle,
                                          const BsdeOptions& opts = {});

/// Periodic solution of
/// d eta = -(A^T eta + C^T zeta + K b + C^T K sigma + L sigma + lambda) dt + zeta dW
/// with (K, L) taken from a matrix solution on the same grid.
BsdeGridSolution solve_vector_bsde(const CoefficientFn& A, const CoefficientFn& C,
                                   const BsdeGridSolution& KL, const CoefficientFn& b,
                                   const CoefficientFn& sigma, const CoefficientFn& lambda,
                                   const PathBundle& bundle, const BsdeOptions& opts = {});

/// Wraps a grid field as a coefficient: piecewise constant in phase on the
/// field's grid and a function of the within-period increment sum.
CoefficientFn field_as_coefficient(const GridField& field, std::string label);

struct RepresentationCheck {
  Mat estimate;
  Mat estimate_se;
  double residual = 0.0;  // |K0 - estimate|_F / |K0|_F (absolute when K0 = 0)
  double residual_se = 0.0;
  bool consistent = false;  // within 3 combined standard errors
  double tail_bound = 0.0;
  std::vector<std::string> warnings;
};

/// Monte Carlo check of K_0 = E int_0^T Phi_s^T Lambda_s Phi_s ds.
RepresentationCheck representation_check(const BsdeGridSolution& solution,
                                          const CoefficientFn& A, const CoefficientFn& C,
                                          const CoefficientFn& Lambda,
                                          const PathBundle& bundle_long, double T_max,
                                          double tol = 0.03);

/// CSV per node: t, value entries, integrand entries, stderr (node 0 only).
void write_solution_csv(std::ostream& os, const BsdeGridSolution& sol);
/// Fixed-point trace as a JSON document.
std::string fixed_point_trace_json(const BsdeGridSolution& sol);

}  // namespace ergolq
