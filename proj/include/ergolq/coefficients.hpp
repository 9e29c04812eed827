#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ergolq/common.hpp"

namespace ergolq {

/// Increments of the driving Brownian path observed strictly inside the
/// current period, up to the evaluation node. `sum` caches their total.
struct PathPrefix {
  std::span<const double> increments;
  double sum = 0.0;

  static PathPrefix of(std::span<const double> incr);
};

enum class CoeffKind { kConstant, kDeterministicPeriodic, kPathFunctional };

const char* to_string(CoeffKind kind);

/// Declarative parameters of the serializable coefficient families.
///   constant:  value = base
///   sine:      value = base + amp * sin(2 pi freq phase / tau + shift)
///   tanh:      value = base + amp * tanh(gain * sum of within-period increments)
struct CoeffParams {
  enum class Family { kConstant, kSine, kTanh };
  Family family = Family::kConstant;
  Mat base;
  Mat amp;
  int freq = 1;
  double shift = 0.0;
  double gain = 1.0;
  double tau = 1.0;

  bool operator==(const CoeffParams& other) const;
};

/// A tau-random periodic coefficient: a bounded functional of the phase in
/// [0, tau) and the within-period increment prefix. Periodicity holds by
/// construction because nothing before the current period is ever visible.
class CoefficientFn {
 public:
  using Evaluator =
      std::function<void(double phase, const PathPrefix&, Eigen::Ref<Mat> out)>;

  CoefficientFn() = default;

  static CoefficientFn constant(const Mat& value);
  static CoefficientFn constant_scalar(double value);
  static CoefficientFn zeros(Eigen::Index rows, Eigen::Index cols);
  static CoefficientFn sine(const Mat& base, const Mat& amp, int freq, double shift,
                            double tau);
  static CoefficientFn tanh_of_increments(const Mat& base, const Mat& amp, double gain);
  static CoefficientFn from_params(const CoeffParams& params);
  static CoefficientFn custom(CoeffKind kind, Eigen::Index rows, Eigen::Index cols,
                              double bound, Evaluator eval, std::string label = "custom");

  CoeffKind kind() const { return impl_->kind; }
  Eigen::Index rows() const { return impl_->rows; }
  Eigen::Index cols() const { return impl_->cols; }
  double bound() const { return impl_->bound; }
  const std::string& label() const { return impl_->label; }
  bool path_dependent() const { return impl_->kind == CoeffKind::kPathFunctional; }
  bool valid() const { return static_cast<bool>(impl_); }
  const std::optional<CoeffParams>& params() const { return impl_->params; }

  /// Writes the value into `out`, which must already have the declared shape.
  void evaluate_into(double phase, const PathPrefix& prefix, Eigen::Ref<Mat> out) const {
    impl_->eval(phase, prefix, out);
  }
  Mat evaluate(double phase, const PathPrefix& prefix) const;
  /// Convenience for coefficients that do not read the path.
  Mat evaluate(double phase) const;

  /// Same functional with output replaced by its symmetric part; throws when
  /// the raw asymmetry exceeds `tol`.
  CoefficientFn symmetrized(double tol = 1e-12) const;
  CoefficientFn relabeled(std::string label) const;

 private:
  struct Impl {
    CoeffKind kind = CoeffKind::kConstant;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    double bound = 0.0;
    std::string label;
    Evaluator eval;
    std::optional<CoeffParams> params;
  };
  explicit CoefficientFn(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

/// Kind of a composite built from several coefficients.
CoeffKind combined_kind(std::initializer_list<CoeffKind> kinds);

/// Checked evaluation: phase must lie in [0, tau) and the prefix length must
/// match the phase on a grid of spacing tau / steps_per_period.
Mat eval_coeff(const CoefficientFn& fn, double phase, std::span<const double> prefix,
               double tau, int steps_per_period);

/// Discrete theta shift: drops the first k periods of an increment sequence.
std::vector<double> theta_shift(std::span<const double> path, std::size_t k,
                                std::size_t steps_per_period);

/// Evaluates `fn` at absolute node `node` of a full multi-period path.
Mat eval_at_node(const CoefficientFn& fn, std::span<const double> path, std::size_t node,
                 std::size_t steps_per_period, double tau);

/// Sampled check that |fn| <= bound entrywise.
bool check_bound(const CoefficientFn& fn, double tau, int steps_per_period, int n_samples,
                 std::uint64_t seed);

/// Evaluates `fn` on two paths that agree inside the evaluation period but
/// differ before it; true when every sampled pair of evaluations coincides.
bool check_within_period_dependence(const CoefficientFn& fn, double tau,
                                    int steps_per_period, int n_samples,
                                    std::uint64_t seed);

struct PeriodicCoefficientSet {
  std::string name;
  double tau = 1.0;
  int n = 1;
  int m = 1;
  CoefficientFn A, B, C, b, sigma, Q, S, R, q, rho;
  /// Known stabilizer of [A, C; B, 0], when the scenario ships one.
  std::optional<CoefficientFn> stabilizer;

  /// Throws kDimension on any shape mismatch.
  void validate_shapes() const;
  /// True when no coefficient reads the Brownian path.
  bool deterministic() const;
  /// Copy with Q and R wrapped by the symmetrizing evaluator.
  PeriodicCoefficientSet with_symmetric_weights() const;
};

struct PositivityReport {
  double margin_R = 0.0;
  double margin_QSRS = 0.0;
  double max_asymmetry = 0.0;
  bool passed = false;
};

/// Minimum sampled eigenvalues of R and Q - S^T R^{-1} S.
PositivityReport check_positivity(const PeriodicCoefficientSet& set, int n_samples,
                                  std::uint64_t seed, int steps_per_period = 64);

/// Closed-loop pair u = Theta x + v.
struct FeedbackLaw {
  CoefficientFn Theta;
  CoefficientFn v;
  std::string id = "feedback";

  static FeedbackLaw zero(int m, int n);
};

std::vector<std::string> catalog_names();
PeriodicCoefficientSet builtin_scenario(const std::string& name);

}  // namespace ergolq
