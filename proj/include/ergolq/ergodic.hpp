#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ergolq/bsde.hpp"
#include "ergolq/riccati.hpp"
#include "ergolq/sde.hpp"

namespace ergolq {

/// F(x, u) = <Qx,x> + 2<Sx,u> + <Ru,u> + 2<q,x> + 2<rho,u> at one point.
double evaluate_running_cost(const PeriodicCoefficientSet& set, const Vec& x, const Vec& u,
                             double phase, const PathPrefix& prefix);

/// F along u = Theta x + v written as <H_a x,x> + <H_b,x> + H_c.
struct ReducedCostForm {
  CoefficientFn H_a;  // n x n, symmetric
  CoefficientFn H_b;  // n x 1
  CoefficientFn H_c;  // 1 x 1

  double evaluate(double phase, const PathPrefix& prefix, const Vec& x) const;
};

ReducedCostForm reduced_cost_form(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback);

/// Phase-0 samples of the closed-loop state after `k_burn` periods, one per
/// path, plus the samples one period later.
struct RandomPeriodicState {
  std::string feedback_id;
  int k_burn = 0;
  double lambda_hat = 0.0;  // decay rate behind the default k_burn (0 when not measured)
  Mat samples;       // n x P at t = k_burn tau
  Mat samples_next;  // n x P at t = (k_burn + 1) tau
  std::vector<std::uint8_t> valid;  // paths that did not overflow
  std::size_t overflow_count = 0;
  ContractionReport contraction;
  /// Largest |difference| / combined SE over first and second moments at the
  /// two boundaries.
  double stationarity_z = 0.0;
  bool stationary = false;

  std::size_t paths() const { return static_cast<std::size_t>(samples.cols()); }
  /// Same law one period later: samples_next becomes the starting sample.
  RandomPeriodicState advanced() const;
};

struct BurnInOptions {
  /// Periods to burn; ceil(10 / (lambda_hat tau)) from a stabilizer check when empty.
  std::optional<int> k_burn;
  /// Paths and periods of the stabilizer and contraction checks.
  std::size_t check_paths = 2000;
  int contraction_periods = 10;
  bool check_contraction = true;
  /// Throw when the moment test fails.
  bool require_stationary = true;
};

/// Forward iteration of the period map from `x_start`: the law of the state
/// at whole periods converges to that of the random periodic solution.
RandomPeriodicState burn_in_state(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                  const PathBundle& bundle, const Vec& x_start,
                                  const BurnInOptions& opts = {});

/// Per-path time averages of F together with their mean.
struct CostEstimate {
  Estimate estimate;
  std::vector<double> per_path;  // NaN on overflowed paths
  std::size_t overflow_count = 0;
  double horizon = 0.0;
};

/// (1/T) E int_0^T F dt from a fixed start, T a whole number of periods.
CostEstimate finite_horizon_cost(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                 const Vec& x, double T, const PathBundle& bundle);

/// (1/tau) E int_0^tau F dt from the burned-in samples on fresh increments.
/// With `reduced` set the integrand is evaluated through ReducedCostForm.
CostEstimate single_period_cost(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                const RandomPeriodicState& state, const PathBundle& bundle_fresh,
                                bool reduced = false);

/// eta-BSDE with drift matrix A + B Theta0 and lambda = q + Theta0^T rho.
BsdeGridSolution solve_eta(const PeriodicCoefficientSet& set, const RiccatiSolution& riccati,
                           const PathBundle& bundle, const BsdeOptions& opts = {});

/// (Theta0, v0) with v0 = -R^-1 (B^T eta + rho). A non-empty `check_bundle`
/// runs stabilizer_check on Theta0 and throws when it fails.
FeedbackLaw optimal_feedback(const RiccatiSolution& riccati, const BsdeGridSolution& eta,
                             const PeriodicCoefficientSet& set,
                             const std::optional<PathBundle>& check_bundle = std::nullopt);

/// V = (1/tau) E int_0^tau (-<R^-1 (B^T eta + rho), B^T eta + rho> + <K sigma, sigma>
///     + 2<eta, b> + 2<zeta, sigma>) dt over the paths of one period.
CostEstimate value_function(const RiccatiSolution& riccati, const BsdeGridSolution& eta,
                            const PeriodicCoefficientSet& set, const PathBundle& bundle);

struct CompletionOfSquare {
  Estimate lhs;         // single-period cost of the feedback
  Estimate value;       // V on the same paths
  Estimate quadratic;   // (1/tau) E int <R w, w>, w = (Theta - Theta0) X + v - v0
  Estimate difference;  // lhs - value - quadratic, paired per path
  double min_quadratic_integrand = 0.0;
  std::size_t overflow_count = 0;

  Estimate rhs() const { return {value.value + quadratic.value, combined_se(value.se, quadratic.se)}; }
  bool consistent(double k = 3.0) const { return std::abs(difference.value) <= k * difference.se; }
};

CompletionOfSquare completion_of_square_check(const PeriodicCoefficientSet& set,
                                              const FeedbackLaw& feedback,
                                              const RiccatiSolution& riccati,
                                              const BsdeGridSolution& eta,
                                              const RandomPeriodicState& state,
                                              const PathBundle& bundle_fresh);

struct Perturbation {
  Mat dTheta;  // m x n
  Mat dv;      // m x 1
  double epsilon = 0.0;
};

/// Perturbations eps * dTheta of the gain for every eps in `eps`.
std::vector<Perturbation> gain_perturbations(const Mat& dTheta, const std::vector<double>& eps);

struct ScanRow {
  double epsilon = 0.0;
  Estimate cost;
  bool stable = false;
  double lambda_hat = 0.0;
  std::string note;
};

struct ScanResult {
  std::vector<ScanRow> rows;
  int argmin = -1;           // row with the smallest point estimate among stable rows
  Estimate kappa;            // cost(eps) - cost(0) ~ kappa eps^2, paired across paths
  Estimate value;            // V for reference
  bool min_at_zero = false;  // argmin has epsilon 0
  int k_burn = 0;
};

struct ScanOptions {
  BurnInOptions burn{};
  /// Start of the burn-in.
  std::optional<Vec> x_start;
};

/// Single-period costs of (Theta0 + eps dTheta, v0 + eps dv) with common
/// random numbers: every row uses the same burn-in and evaluation paths.
ScanResult optimality_scan(const PeriodicCoefficientSet& set, const RiccatiSolution& riccati,
                           const BsdeGridSolution& eta, const std::vector<Perturbation>& perts,
                           const PathBundle& burn_bundle, const PathBundle& eval_bundle,
                           const ScanOptions& opts = {});

void write_scan_csv(std::ostream& os, const ScanResult& scan);

struct ErgodicReport {
  std::string scenario;
  std::string feedback_id;
  CostEstimate longrun;
  Vec longrun_start;
  CostEstimate single_period;
  std::optional<CostEstimate> value;
  RandomPeriodicState state;
  std::vector<std::string> disagreements;  // pairs further apart than 3 combined SE
  std::vector<std::string> warnings;
};

struct ErgodicOptions {
  int longrun_periods = 50;
  BurnInOptions burn{};
  /// Start of the burn-in (zero when empty).
  std::optional<Vec> x_start;
  /// Start of the long-run average; the burned-in sample mean when empty.
  std::optional<Vec> longrun_start;
  /// Path counts of the single-period and long-run estimators (0: bundle size).
  std::size_t single_period_paths = 0;
  std::size_t longrun_paths = 0;
};

/// Long-run, single-period and (when the solutions are given) value estimates
/// for one feedback. The three bundles supply disjoint increments.
ErgodicReport ergodic_report(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                             const PathBundle& bundle, const RiccatiSolution* riccati,
                             const BsdeGridSolution* eta, const ErgodicOptions& opts = {});

std::string ergodic_report_json(const ErgodicReport& report);

}  // namespace ergolq
