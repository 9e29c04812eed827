#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ergolq/coefficients.hpp"
#include "ergolq/paths.hpp"
#include "ergolq/regression.hpp"
#include "ergolq/stats.hpp"

namespace ergolq {

/// Values of the model coefficients (and optionally a feedback law) at one
/// grid node of one path. Coefficients that ignore the path are evaluated
/// once per within-period node and shared by every path.
class CoefficientFrame {
 public:
  enum Slot : std::size_t { kA, kB, kC, kb, kSigma, kQ, kS, kR, kq, kRho, kTheta, kV, kSlots };

  CoefficientFrame(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                   int steps_per_period);

  /// Loads node `node` (0..steps_per_period-1) of the current period.
  void load(int node, const PathPrefix& prefix);
  const Mat& operator[](std::size_t slot) const { return *view_[slot]; }
  double phase(int node) const { return tau_ * node / steps_; }
  /// Within-period node and prefix of the last load().
  int node() const { return node_; }
  const PathPrefix& prefix() const { return prefix_; }

 private:
  std::vector<CoefficientFn> fns_;
  std::vector<std::vector<Mat>> cache_;
  std::vector<Mat> scratch_;
  std::vector<const Mat*> view_;
  double tau_;
  int steps_;
  int node_ = 0;
  PathPrefix prefix_;
};

/// Per-path state values on recorded grid nodes.
struct StateTrajectory {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t n_paths = 0;
  int steps_per_period = 0;
  double tau = 1.0;
  std::vector<std::size_t> nodes;  // recorded node indices
  std::vector<double> times;
  std::vector<double> values;  // [path][record][entry], column-major entries
  std::vector<std::uint8_t> overflowed;
  std::size_t overflow_count = 0;
  std::optional<std::size_t> first_overflow_node;

  std::size_t records() const { return nodes.size(); }
  std::size_t entries() const { return static_cast<std::size_t>(rows * cols); }
  Eigen::Map<const Mat> at(std::size_t path, std::size_t record) const {
    return {values.data() + (path * records() + record) * entries(), rows, cols};
  }
  /// Recorded index of a node; throws when the node was not recorded.
  std::size_t record_of(std::size_t node) const;
};

struct SimulationOptions {
  /// Record every `record_stride`-th node (the final node is always kept).
  int record_stride = 1;
  double overflow_threshold = 1e12;
};

/// Euler-Maruyama for dPhi = (A + B Theta) Phi dt + C Phi dW, Phi_0 = I.
StateTrajectory simulate_fundamental(const PeriodicCoefficientSet& set,
                                     const FeedbackLaw* feedback, const PathBundle& bundle,
                                     const SimulationOptions& opts = {});

/// Euler-Maruyama for dX = ((A + B Theta) X + B v + b) dt + (C X + sigma) dW.
/// `x0` is n x 1 (shared start) or n x n_paths (one start per path).
StateTrajectory simulate_closed_loop(const PeriodicCoefficientSet& set,
                                     const FeedbackLaw& feedback, const Mat& x0,
                                     const PathBundle& bundle,
                                     const SimulationOptions& opts = {});

/// Difference of two closed-loop solutions driven by the same increments.
/// It solves the homogeneous closed-loop equation from x1 - x2, so b, sigma
/// and v drop out exactly.
StateTrajectory simulate_difference(const PeriodicCoefficientSet& set,
                                    const FeedbackLaw& feedback, const Vec& x1, const Vec& x2,
                                    const PathBundle& bundle,
                                    const SimulationOptions& opts = {});

struct StabilityReport {
  double beta_hat = 0.0;
  double lambda_hat = 0.0;
  double lambda_se = 0.0;
  double delta_hat = 0.0;
  double delta_se = 0.0;
  double r2 = 0.0;
  std::vector<double> times;
  std::vector<double> moments;
  std::vector<double> moment_se;
  std::size_t overflow_count = 0;
  std::vector<std::string> warnings;

  double lambda_lo() const { return lambda_hat - 1.96 * lambda_se; }
  double lambda_hi() const { return lambda_hat + 1.96 * lambda_se; }
  /// lambda_hat > 0 with the 95% interval excluding zero and no overflow.
  bool stable() const { return overflow_count == 0 && lambda_lo() > 0.0; }
};

/// Mean squared Frobenius norm per recorded node (paths that overflowed are
/// excluded).
struct MomentRow {
  double t = 0.0;
  double mean = 0.0;  // mean of the first entry
  double second_moment = 0.0;
  double stderr_ = 0.0;  // of the second moment
};
std::vector<MomentRow> moment_table(const StateTrajectory& traj);

/// Affine least-squares fit of log E|Phi_t|^2 over period-end nodes.
StabilityReport estimate_second_moment_decay(const StateTrajectory& traj, int groups = 20);

struct GramBoundOptions {
  RegressionBasis basis{};
  /// Warn when T_max is below this many decay times.
  double decay_times = 10.0;
};

/// Regression proxy of inf_r E(int_r^T (Phi_s Phi_r^-1)^T Phi_s Phi_r^-1 ds | F_r),
/// minimized over the phases in r_grid and over the sampled regression nodes.
/// The conditional integral is the closed-loop Lyapunov BSDE with unit source
/// and zero terminal value at T_max (rounded up to whole periods), so only the
/// first period of `bundle` feeds the regressions; the remaining periods are
/// used for the decay fit behind the truncation warning.
StabilityReport estimate_gram_lower_bound(const PeriodicCoefficientSet& set,
                                          const FeedbackLaw* feedback,
                                          const PathBundle& bundle,
                                          const std::vector<double>& r_grid, double T_max,
                                          const GramBoundOptions& opts = {});

/// Upper bound on the neglected tail of int_T^infty beta e^{-lambda s} ds.
inline double decay_tail_bound(double beta, double lambda, double T) {
  return beta * std::exp(-lambda * T) / lambda;
}

/// Decay fit of log E|X^1_{k tau} - X^2_{k tau}|^2 against t = k tau.
struct ContractionReport {
  StabilityReport fit;
  double slope_per_period = 0.0;
  double slope_se_per_period = 0.0;
  bool contracting = false;  // slope < 0 with 95% interval excluding 0
};

ContractionReport contraction_check(const PeriodicCoefficientSet& set,
                                    const FeedbackLaw& feedback, const Vec& x1,
                                    const Vec& x2, const PathBundle& bundle);

/// CSV exports: (path_id, node_index, t, components...) and
/// (t, mean, second_moment, stderr).
void write_trajectory_csv(std::ostream& os, const StateTrajectory& traj,
                          std::size_t max_paths = 0);
void write_moments_csv(std::ostream& os, const StateTrajectory& traj);

}  // namespace ergolq
