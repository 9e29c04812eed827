#include "ergolq/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ergolq/rng.hpp"

namespace ergolq {

PathPrefix PathPrefix::of(std::span<const double> incr) {
  double s = 0.0;
  for (double x : incr) s += x;
  return PathPrefix{incr, s};
}

const char* to_string(CoeffKind kind) {
  switch (kind) {
    case CoeffKind::kConstant:
      return "constant";
    case CoeffKind::kDeterministicPeriodic:
      return "deterministic-periodic";
    case CoeffKind::kPathFunctional:
      return "path-functional";
  }
  return "?";
}

bool CoeffParams::operator==(const CoeffParams& o) const {
  auto same = [](const Mat& x, const Mat& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && (x.size() == 0 || x == y);
  };
  return family == o.family && same(base, o.base) && same(amp, o.amp) && freq == o.freq &&
         shift == o.shift && gain == o.gain && tau == o.tau;
}

CoeffKind combined_kind(std::initializer_list<CoeffKind> kinds) {
  CoeffKind out = CoeffKind::kConstant;
  for (CoeffKind k : kinds) out = std::max(out, k);
  return out;
}

CoefficientFn CoefficientFn::constant(const Mat& value) {
  CoeffParams p;
  p.family = CoeffParams::Family::kConstant;
  p.base = value;
  p.amp = Mat::Zero(value.rows(), value.cols());
  return from_params(p);
}

CoefficientFn CoefficientFn::constant_scalar(double value) {
  return constant(Mat::Constant(1, 1, value));
}

CoefficientFn CoefficientFn::zeros(Eigen::Index rows, Eigen::Index cols) {
  return constant(Mat::Zero(rows, cols));
}

CoefficientFn CoefficientFn::sine(const Mat& base, const Mat& amp, int freq, double shift,
                                  double tau) {
  CoeffParams p;
  p.family = CoeffParams::Family::kSine;
  p.base = base;
  p.amp = amp;
  p.freq = freq;
  p.shift = shift;
  p.tau = tau;
  return from_params(p);
}

CoefficientFn CoefficientFn::tanh_of_increments(const Mat& base, const Mat& amp,
                                                double gain) {
  CoeffParams p;
  p.family = CoeffParams::Family::kTanh;
  p.base = base;
  p.amp = amp;
  p.gain = gain;
  return from_params(p);
}

CoefficientFn CoefficientFn::from_params(const CoeffParams& p) {
  require(p.base.size() > 0, ErrorKind::kDimension, "coefficient with empty base");
  require(p.amp.rows() == p.base.rows() && p.amp.cols() == p.base.cols(),
          ErrorKind::kDimension,
          "amplitude shape " + shape_str(p.amp.rows(), p.amp.cols()) +
              " differs from base shape " + shape_str(p.base.rows(), p.base.cols()));
  auto impl = std::make_shared<Impl>();
  impl->rows = p.base.rows();
  impl->cols = p.base.cols();
  impl->bound = (p.base.cwiseAbs() + p.amp.cwiseAbs()).maxCoeff();
  impl->params = p;
  const Mat base = p.base;
  const Mat amp = p.amp;
  switch (p.family) {
    case CoeffParams::Family::kConstant:
      impl->kind = CoeffKind::kConstant;
      impl->label = "constant";
      impl->bound = p.base.cwiseAbs().maxCoeff();
      impl->eval = [base](double, const PathPrefix&, Eigen::Ref<Mat> out) { out = base; };
      break;
    case CoeffParams::Family::kSine: {
      require(p.tau > 0.0, ErrorKind::kDomain, "sine coefficient needs tau > 0");
      require(p.freq >= 1, ErrorKind::kDomain, "sine frequency must be a positive integer");
      impl->kind = CoeffKind::kDeterministicPeriodic;
      impl->label = "sine";
      const double w = 2.0 * std::numbers::pi * p.freq / p.tau;
      const double shift = p.shift;
      impl->eval = [base, amp, w, shift](double phase, const PathPrefix&,
                                         Eigen::Ref<Mat> out) {
        out = base + std::sin(w * phase + shift) * amp;
      };
      break;
    }
    case CoeffParams::Family::kTanh: {
      impl->kind = CoeffKind::kPathFunctional;
      impl->label = "tanh";
      const double gain = p.gain;
      impl->eval = [base, amp, gain](double, const PathPrefix& prefix, Eigen::Ref<Mat> out) {
        out = base + std::tanh(gain * prefix.sum) * amp;
      };
      break;
    }
  }
  return CoefficientFn(std::move(impl));
}

CoefficientFn CoefficientFn::custom(CoeffKind kind, Eigen::Index rows, Eigen::Index cols,
                                    double bound, Evaluator eval, std::string label) {
  require(rows > 0 && cols > 0, ErrorKind::kDimension, "custom coefficient with empty shape");
  auto impl = std::make_shared<Impl>();
  impl->kind = kind;
  impl->rows = rows;
  impl->cols = cols;
  impl->bound = bound;
  impl->eval = std::move(eval);
  impl->label = std::move(label);
  return CoefficientFn(std::move(impl));
}

Mat CoefficientFn::evaluate(double phase, const PathPrefix& prefix) const {
  Mat out(rows(), cols());
  impl_->eval(phase, prefix, out);
  return out;
}

Mat CoefficientFn::evaluate(double phase) const { return evaluate(phase, PathPrefix{}); }

CoefficientFn CoefficientFn::symmetrized(double tol) const {
  require(rows() == cols(), ErrorKind::kDimension, "only square coefficients symmetrize");
  auto impl = std::make_shared<Impl>(*impl_);
  auto inner = impl_->eval;
  impl->eval = [inner, tol](double phase, const PathPrefix& prefix, Eigen::Ref<Mat> out) {
    inner(phase, prefix, out);
    const double asym = asymmetry(out);
    if (asym > tol) {
      fail(ErrorKind::kNumerical,
           "weight matrix asymmetry " + std::to_string(asym) + " exceeds tolerance");
    }
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = i + 1; j < out.cols(); ++j) out(i, j) = out(j, i) = 0.5 * (out(i, j) + out(j, i));
  };
  return CoefficientFn(std::move(impl));
}

CoefficientFn CoefficientFn::relabeled(std::string label) const {
  auto impl = std::make_shared<Impl>(*impl_);
  impl->label = std::move(label);
  return CoefficientFn(std::move(impl));
}

Mat eval_coeff(const CoefficientFn& fn, double phase, std::span<const double> prefix,
               double tau, int steps_per_period) {
  require(fn.valid(), ErrorKind::kDomain, "evaluating an empty coefficient");
  require(phase >= 0.0 && phase < tau, ErrorKind::kDomain,
          "phase " + std::to_string(phase) + " outside [0, tau)");
  require(steps_per_period > 0, ErrorKind::kDomain, "steps_per_period must be positive");
  const double dt = tau / steps_per_period;
  const auto expected = static_cast<std::size_t>(std::floor(phase / dt + 1e-9));
  require(prefix.size() == expected, ErrorKind::kDimension,
          "prefix length " + std::to_string(prefix.size()) + " inconsistent with phase (" +
              std::to_string(expected) + " increments expected)");
  Mat out = fn.evaluate(phase, PathPrefix::of(prefix));
  require(out.rows() == fn.rows() && out.cols() == fn.cols(), ErrorKind::kDimension,
          "evaluator returned " + shape_str(out.rows(), out.cols()) + ", declared " +
              shape_str(fn.rows(), fn.cols()));
  return out;
}

std::vector<double> theta_shift(std::span<const double> path, std::size_t k,
                                std::size_t steps_per_period) {
  const std::size_t offset = k * steps_per_period;
  require(offset <= path.size(), ErrorKind::kDomain,
          "shift by " + std::to_string(k) + " periods exceeds path length " +
              std::to_string(path.size()));
  return {path.begin() + static_cast<std::ptrdiff_t>(offset), path.end()};
}

Mat eval_at_node(const CoefficientFn& fn, std::span<const double> path, std::size_t node,
                 std::size_t steps_per_period, double tau) {
  const std::size_t period = node / steps_per_period;
  const std::size_t within = node % steps_per_period;
  require(node <= path.size(), ErrorKind::kDomain, "node beyond path end");
  const auto prefix = path.subspan(period * steps_per_period, within);
  const double phase = tau * static_cast<double>(within) / static_cast<double>(steps_per_period);
  return fn.evaluate(phase, PathPrefix::of(prefix));
}

namespace {

// Random (phase node, prefix) pairs used by the sampled checks.
template <typename F>
void for_each_sample(double tau, int steps, int n_samples, std::uint64_t seed, F&& body) {
  const double sdt = std::sqrt(tau / steps);
  std::vector<double> prefix;
  for (int s = 0; s < n_samples; ++s) {
    const int node = static_cast<int>(mix64(derive_seed(seed, 2 * s)) % steps);
    prefix.resize(node);
    for (int j = 0; j < node; ++j) {
      prefix[j] = sdt * counter_normal(seed, static_cast<std::uint64_t>(s) + 1, j);
    }
    body(tau * node / steps, std::span<const double>(prefix));
  }
}

}  // namespace

bool check_bound(const CoefficientFn& fn, double tau, int steps, int n_samples,
                 std::uint64_t seed) {
  bool ok = true;
  for_each_sample(tau, steps, n_samples, seed, [&](double phase, std::span<const double> p) {
    if (max_abs_entry(fn.evaluate(phase, PathPrefix::of(p))) > fn.bound() * (1 + 1e-12)) {
      ok = false;
    }
  });
  return ok;
}

bool check_within_period_dependence(const CoefficientFn& fn, double tau, int steps,
                                    int n_samples, std::uint64_t seed) {
  const double sdt = std::sqrt(tau / steps);
  bool ok = true;
  for (int s = 0; s < n_samples; ++s) {
    // Two two-period paths: identical in period 1, different in period 0.
    std::vector<double> p1(2 * steps), p2(2 * steps);
    for (int j = 0; j < 2 * steps; ++j) {
      p1[j] = sdt * counter_normal(seed, 2 * s + 1, j);
      p2[j] = j < steps ? sdt * counter_normal(seed, 2 * s + 2, j) + 1.0 : p1[j];
    }
    const auto node = static_cast<std::size_t>(steps + mix64(seed + s) % steps);
    const Mat e1 = eval_at_node(fn, p1, node, steps, tau);
    const Mat e2 = eval_at_node(fn, p2, node, steps, tau);
    if (!(e1 == e2)) ok = false;
  }
  return ok;
}

void PeriodicCoefficientSet::validate_shapes() const {
  require(tau > 0.0, ErrorKind::kDomain, "period tau must be positive");
  require(n >= 1 && m >= 1, ErrorKind::kDomain, "dimensions n, m must be positive");
  auto check = [](const CoefficientFn& f, const char* name, Eigen::Index r, Eigen::Index c) {
    require(f.valid(), ErrorKind::kConfig, std::string("coefficient ") + name + " missing");
    require(f.rows() == r && f.cols() == c, ErrorKind::kDimension,
            std::string("coefficient ") + name + " has shape " + shape_str(f.rows(), f.cols()) +
                ", expected " + shape_str(r, c));
  };
  check(A, "A", n, n);
  check(B, "B", n, m);
  check(C, "C", n, n);
  check(b, "b", n, 1);
  check(sigma, "sigma", n, 1);
  check(Q, "Q", n, n);
  check(S, "S", m, n);
  check(R, "R", m, m);
  check(q, "q", n, 1);
  check(rho, "rho", m, 1);
  if (stabilizer) check(*stabilizer, "stabilizer", m, n);
}

bool PeriodicCoefficientSet::deterministic() const {
  for (const auto* f : {&A, &B, &C, &b, &sigma, &Q, &S, &R, &q, &rho}) {
    if (f->path_dependent()) return false;
  }
  return true;
}

PeriodicCoefficientSet PeriodicCoefficientSet::with_symmetric_weights() const {
  PeriodicCoefficientSet out = *this;
  out.Q = Q.symmetrized();
  out.R = R.symmetrized();
  return out;
}

PositivityReport check_positivity(const PeriodicCoefficientSet& set, int n_samples,
                                  std::uint64_t seed, int steps) {
  require(n_samples >= 1, ErrorKind::kDomain, "check_positivity needs n_samples >= 1");
  set.validate_shapes();
  PositivityReport rep;
  rep.margin_R = std::numeric_limits<double>::infinity();
  rep.margin_QSRS = std::numeric_limits<double>::infinity();
  // Always include phase 0 with an empty prefix, then random samples.
  auto visit = [&](double phase, std::span<const double> p) {
    const PathPrefix pre = PathPrefix::of(p);
    const Mat Q = set.Q.evaluate(phase, pre);
    const Mat R = set.R.evaluate(phase, pre);
    const Mat S = set.S.evaluate(phase, pre);
    rep.max_asymmetry = std::max({rep.max_asymmetry, asymmetry(Q), asymmetry(R)});
    require(asymmetry(Q) <= 1e-12 && asymmetry(R) <= 1e-12, ErrorKind::kNumerical,
            "non-symmetric Q or R sample at phase " + std::to_string(phase));
    Eigen::LDLT<Mat> ldlt(symmetrize(R));
    const double rmin = min_eigenvalue(R);
    require(ldlt.info() == Eigen::Success && std::abs(rmin) > 1e-300 &&
                ldlt.rcond() > 1e-14,
            ErrorKind::kNumerical, "singular R sample at phase " + std::to_string(phase));
    rep.margin_R = std::min(rep.margin_R, rmin);
    const Mat qt = Q - S.transpose() * ldlt.solve(S);
    rep.margin_QSRS = std::min(rep.margin_QSRS, min_eigenvalue(qt));
  };
  visit(0.0, {});
  for_each_sample(set.tau, steps, n_samples, seed, visit);
  rep.passed = rep.margin_R > 0.0 && rep.margin_QSRS > 0.0;
  return rep;
}

FeedbackLaw FeedbackLaw::zero(int m, int n) {
  return FeedbackLaw{CoefficientFn::zeros(m, n), CoefficientFn::zeros(m, 1), "zero"};
}

}  // namespace ergolq
