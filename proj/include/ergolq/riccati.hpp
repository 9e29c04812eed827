#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ergolq/bsde.hpp"
#include "ergolq/sde.hpp"

namespace ergolq {

struct RiccatiOptions {
  BsdeOptions bsde{};
  /// Outer tolerance on the time-0 iterates; each linear solve uses tol / 10.
  double tol = 1e-6;
  int max_outer = 30;
  /// Bundle for the stabilizer check of the initializer; derived from the
  /// solve bundle when empty. Set `check_initializer` false to skip.
  std::optional<PathBundle> check_bundle;
  bool check_initializer = true;
};

struct KleinmanStep {
  Mat K0;
  Mat K0_se;
  double update = 0.0;          // |K0^(N+1) - K0^(N)|_F, infinite for the first step
  double descent_margin = 0.0;  // min eig(K0^(N) - K0^(N+1)), 0 for the first step
  int inner_iterations = 0;
};

struct RiccatiSolution {
  BsdeGridSolution KL;
  /// -R^-1 (B^T K + S) with K read from the regression surrogate.
  CoefficientFn Theta0;
  std::vector<KleinmanStep> trace;
  int outer_iterations = 0;
  bool converged = false;
  bool deterministic = false;
  double tau = 1.0;
  int n = 0, m = 0;

  Mat K0() const { return KL.initial(); }
  Mat K0_se() const { return KL.fixed_point_se; }
};

struct ReducedData {
  CoefficientFn A_tilde;
  CoefficientFn Q_tilde;
  /// Shift that maps a feedback of the original data to the reduced one.
  CoefficientFn RinvS;
  bool identity = false;  // S is identically zero; inputs returned unchanged
};

/// A~ = A - B R^-1 S, Q~ = Q - S^T R^-1 S.
ReducedData reduce_cross_term(const PeriodicCoefficientSet& set);

/// Monotone iteration over linear BSDEs with drift matrix A + B Theta^(N)
/// and source Q + Theta^(N)T R Theta^(N); Theta^(N+1) = -R^-1 B^T K^(N+1).
RiccatiSolution kleinman_solve(const CoefficientFn& A, const CoefficientFn& C,
                               const CoefficientFn& B, const CoefficientFn& Q,
                               const CoefficientFn& R, const CoefficientFn& Theta_init,
                               const PathBundle& bundle, const RiccatiOptions& opts = {});

RiccatiSolution solve_stochastic_riccati(const PeriodicCoefficientSet& set,
                                         const CoefficientFn& Theta_init,
                                         const PathBundle& bundle,
                                         const RiccatiOptions& opts = {});

/// Time-0 gain -R^-1 (B^T K + S) as a coefficient on the grid of `K`.
CoefficientFn feedback_gain(const PeriodicCoefficientSet& set, const GridField& K);

struct RiccatiResidual {
  double raw = 0.0;         // mean over nodes of |path-mean defect|_F
  double normalized = 0.0;  // raw / |K0|_F (raw when K0 = 0)
  double floor = 0.0;       // same average of the defect's standard error, same scaling
};

/// Discrete backward-difference defect K_{i+1} - K_i + f dt - L_i dW_i of
/// the Riccati drift evaluated on a fresh bundle.
RiccatiResidual riccati_residual(const RiccatiSolution& sol, const PeriodicCoefficientSet& set,
                                 const PathBundle& bundle_fresh);

/// Mean-square decay of the closed loop [A + B Theta, C].
StabilityReport stabilizer_check(const CoefficientFn& Theta, const PeriodicCoefficientSet& set,
                                 const PathBundle& bundle);

/// Shipped stabilizer if present, else the first of -k B^T, k in {0, 1, 10},
/// that passes stabilizer_check.
CoefficientFn find_stabilizer(const PeriodicCoefficientSet& set, const PathBundle& bundle);

std::string riccati_json(const RiccatiSolution& sol, const RiccatiResidual* residual);
void write_gain_csv(std::ostream& os, const CoefficientFn& Theta, int steps, double tau);

}  // namespace ergolq
