#include "ergolq/ergodic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ergolq/parallel.hpp"
#include "ergolq/simulate.hpp"

namespace ergolq {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kOverflow = 1e12;

using Slot = CoefficientFrame::Slot;

// Trapezoid weight of absolute node j on a grid of `steps` cells.
double trap_weight(std::size_t j, std::size_t steps, double dt) {
  return (j == 0 || j == steps) ? 0.5 * dt : dt;
}

Estimate finite_mean(const std::vector<double>& xs) {
  std::vector<double> ok;
  ok.reserve(xs.size());
  for (double x : xs)
    if (std::isfinite(x)) ok.push_back(x);
  return mean_estimate(ok);
}

// F(x, Theta x + v) from the coefficients loaded in `f`.
double frame_cost(const CoefficientFrame& f, const Mat& x, Vec& u, Vec& tmp) {
  const auto xv = x.col(0);
  u.noalias() = f[Slot::kTheta] * xv;
  u += f[Slot::kV].col(0);
  tmp.noalias() = f[Slot::kQ] * xv;
  double c = xv.dot(tmp);
  tmp.noalias() = f[Slot::kS] * xv;
  c += 2.0 * tmp.dot(u);
  tmp.noalias() = f[Slot::kR] * u;
  c += u.dot(tmp);
  c += 2.0 * f[Slot::kq].col(0).dot(xv);
  c += 2.0 * f[Slot::kRho].col(0).dot(u);
  return c;
}

double current_phase(const CoefficientFrame& f) { return f.phase(f.node()); }

PathBundle check_bundle_for(const PathBundle& b, std::uint64_t tag, std::size_t paths,
                            int periods) {
  return b.fresh(tag).with_paths(std::min(paths, std::max<std::size_t>(b.n_paths, 1)))
      .with_periods(periods);
}

nlohmann::json cost_json(const CostEstimate& c) {
  return {{"value", c.estimate.value},
          {"stderr", c.estimate.se},
          {"ci95", {c.estimate.lo(), c.estimate.hi()}},
          {"horizon", c.horizon},
          {"paths", c.per_path.size()},
          {"overflowed_paths", c.overflow_count}};
}

int default_k_burn(double lambda, double tau) {
  require(lambda > 0.0, ErrorKind::kDomain, "burn-in needs a positive decay rate");
  return std::max(1, static_cast<int>(std::ceil(10.0 / (lambda * tau))));
}

}  // namespace

double evaluate_running_cost(const PeriodicCoefficientSet& set, const Vec& x, const Vec& u,
                             double phase, const PathPrefix& prefix) {
  require(x.size() == set.n && u.size() == set.m, ErrorKind::kDimension,
          "running cost expects x in R^" + std::to_string(set.n) + " and u in R^" +
              std::to_string(set.m));
  const Mat Q = set.Q.evaluate(phase, prefix), S = set.S.evaluate(phase, prefix),
            R = set.R.evaluate(phase, prefix);
  const Mat q = set.q.evaluate(phase, prefix), rho = set.rho.evaluate(phase, prefix);
  return x.dot(Q * x) + 2.0 * (S * x).dot(u) + u.dot(R * u) + 2.0 * q.col(0).dot(x) +
         2.0 * rho.col(0).dot(u);
}

double ReducedCostForm::evaluate(double phase, const PathPrefix& prefix, const Vec& x) const {
  return x.dot(H_a.evaluate(phase, prefix) * x) + H_b.evaluate(phase, prefix).col(0).dot(x) +
         H_c.evaluate(phase, prefix)(0, 0);
}

ReducedCostForm reduced_cost_form(const PeriodicCoefficientSet& set, const FeedbackLaw& fb) {
  set.validate_shapes();
  require(fb.Theta.rows() == set.m && fb.Theta.cols() == set.n && fb.v.rows() == set.m &&
              fb.v.cols() == 1,
          ErrorKind::kDimension, "feedback does not match the scenario dimensions");
  const CoefficientFn Q = set.Q, S = set.S, R = set.R, q = set.q, rho = set.rho, Th = fb.Theta,
                      v = fb.v;
  const CoeffKind kind =
      combined_kind({Q.kind(), S.kind(), R.kind(), q.kind(), rho.kind(), Th.kind(), v.kind()});
  ReducedCostForm h;
  h.H_a = CoefficientFn::custom(
      kind, set.n, set.n, 0.0,
      [Q, S, R, Th](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        const Mat t = Th.evaluate(ph, pre);
        const Mat st = S.evaluate(ph, pre).transpose() * t;
        o = symmetrize(Q.evaluate(ph, pre) + st + st.transpose() +
                       t.transpose() * R.evaluate(ph, pre) * t);
      },
      "H_a");
  h.H_b = CoefficientFn::custom(
      kind, set.n, 1, 0.0,
      [S, R, q, rho, Th, v](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        const Mat t = Th.evaluate(ph, pre), vv = v.evaluate(ph, pre);
        o = 2.0 * (S.evaluate(ph, pre).transpose() * vv +
                   t.transpose() * (R.evaluate(ph, pre) * vv + rho.evaluate(ph, pre)) +
                   q.evaluate(ph, pre));
      },
      "H_b");
  h.H_c = CoefficientFn::custom(
      kind, 1, 1, 0.0,
      [R, rho, v](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        const Mat vv = v.evaluate(ph, pre);
        o = vv.transpose() * R.evaluate(ph, pre) * vv +
            2.0 * rho.evaluate(ph, pre).transpose() * vv;
      },
      "H_c");
  return h;
}

RandomPeriodicState RandomPeriodicState::advanced() const {
  RandomPeriodicState s = *this;
  s.samples = samples_next;
  s.k_burn = k_burn + 1;
  return s;
}

RandomPeriodicState burn_in_state(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                  const PathBundle& bundle, const Vec& x_start,
                                  const BurnInOptions& opts) {
  require(x_start.size() == set.n, ErrorKind::kDimension,
          "burn-in start must have n=" + std::to_string(set.n) + " entries");
  RandomPeriodicState st;
  st.feedback_id = feedback.id;
  if (opts.k_burn) {
    require(*opts.k_burn >= 1, ErrorKind::kDomain, "k_burn must be positive");
    st.k_burn = *opts.k_burn;
  } else {
    const StabilityReport rep = stabilizer_check(
        feedback.Theta, set, check_bundle_for(bundle, 0xb0a7, opts.check_paths, 8));
    require(rep.stable(), ErrorKind::kDomain,
            "feedback " + feedback.id + " does not pass the stabilizer check (lambda_hat = " +
                std::to_string(rep.lambda_hat) + ")");
    st.lambda_hat = rep.lambda_hat;
    st.k_burn = default_k_burn(rep.lambda_hat, set.tau);
  }
  if (opts.check_contraction) {
    Vec x2 = x_start;
    x2(0) += 1.0;
    st.contraction = contraction_check(
        set, feedback, x_start, x2,
        check_bundle_for(bundle, 0xc0de, opts.check_paths, opts.contraction_periods));
  }

  const int N = bundle.steps_per_period;
  SimulationOptions so;
  so.record_stride = N;
  so.overflow_threshold = kOverflow;
  const StateTrajectory traj =
      simulate_closed_loop(set, feedback, x_start, bundle.with_periods(st.k_burn + 1), so);
  const std::size_t P = traj.n_paths;
  const std::size_t r0 = traj.record_of(static_cast<std::size_t>(st.k_burn) * N);
  const std::size_t r1 = traj.record_of(static_cast<std::size_t>(st.k_burn + 1) * N);
  st.samples.resize(set.n, static_cast<Eigen::Index>(P));
  st.samples_next.resize(set.n, static_cast<Eigen::Index>(P));
  st.valid.assign(P, 1);
  for (std::size_t p = 0; p < P; ++p) {
    if (traj.overflowed[p]) {
      st.valid[p] = 0;
      st.samples.col(static_cast<Eigen::Index>(p)).setZero();
      st.samples_next.col(static_cast<Eigen::Index>(p)).setZero();
      continue;
    }
    st.samples.col(static_cast<Eigen::Index>(p)) = traj.at(p, r0).col(0);
    st.samples_next.col(static_cast<Eigen::Index>(p)) = traj.at(p, r1).col(0);
  }
  st.overflow_count = traj.overflow_count;

  // First and second moments at the two boundaries.
  auto moments_agree = [&](auto stat) {
    std::vector<double> a, b;
    for (std::size_t p = 0; p < P; ++p) {
      if (!st.valid[p]) continue;
      a.push_back(stat(st.samples.col(static_cast<Eigen::Index>(p))));
      b.push_back(stat(st.samples_next.col(static_cast<Eigen::Index>(p))));
    }
    const Estimate ea = mean_estimate(a), eb = mean_estimate(b);
    const double d = std::abs(ea.value - eb.value);
    if (d <= 1e-9) return 0.0;
    const double se = combined_se(ea.se, eb.se);
    return se > 0.0 ? d / se : std::numeric_limits<double>::infinity();
  };
  double z = 0.0;
  for (int i = 0; i < set.n; ++i) {
    z = std::max(z, moments_agree([i](const auto& x) { return x(i); }));
    for (int k = i; k < set.n; ++k)
      z = std::max(z, moments_agree([i, k](const auto& x) { return x(i) * x(k); }));
  }
  st.stationarity_z = z;
  st.stationary = z <= 3.0 && st.overflow_count == 0;
  if (!st.stationary && opts.require_stationary) {
    std::ostringstream msg;
    msg << "burn-in of " << st.k_burn << " periods is not stationary (moment z = " << z
        << ", overflowed paths " << st.overflow_count << "); try k_burn = " << 2 * st.k_burn;
    fail(ErrorKind::kConvergence, msg.str());
  }
  return st;
}

CostEstimate finite_horizon_cost(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                 const Vec& x, double T, const PathBundle& bundle) {
  require(x.size() == set.n, ErrorKind::kDimension,
          "initial state must have n=" + std::to_string(set.n) + " entries");
  require(T > 0.0, ErrorKind::kDomain, "horizon must be positive");
  const double periods = T / set.tau;
  const long k = std::lround(periods);
  if (k < 1 || std::abs(periods - static_cast<double>(k)) > 1e-9 * std::max(1.0, periods)) {
    std::ostringstream msg;
    msg << "horizon T = " << T << " is not a whole number of periods (T / tau = " << periods
        << ")";
    fail(ErrorKind::kDomain, msg.str());
  }
  const PathBundle b = bundle.with_periods(static_cast<int>(k));
  const std::size_t P = b.n_paths, steps = b.steps();
  const double dt = b.dt();
  std::vector<double> acc(P, 0.0);
  std::vector<Vec> u(P), tmp(P);
  const PathRunStatus status = run_closed_loop_paths(
      set, feedback, b, 1, false, kOverflow, [&x](std::size_t, Mat& X) { X = x; },
      [&](std::size_t p, std::size_t j, const CoefficientFrame& f, const Mat& X) {
        acc[p] += trap_weight(j, steps, dt) * frame_cost(f, X, u[p], tmp[p]);
      });
  CostEstimate out;
  out.horizon = static_cast<double>(k) * set.tau;
  out.per_path.resize(P);
  for (std::size_t p = 0; p < P; ++p)
    out.per_path[p] = status.overflowed[p] ? kNaN : acc[p] / out.horizon;
  out.overflow_count = status.overflow_count();
  out.estimate = finite_mean(out.per_path);
  return out;
}

CostEstimate single_period_cost(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                                const RandomPeriodicState& state, const PathBundle& bundle_fresh,
                                bool reduced) {
  require(state.feedback_id == feedback.id, ErrorKind::kDomain,
          "state was burned in with feedback '" + state.feedback_id + "', not '" + feedback.id +
              "'");
  require(state.samples.rows() == set.n, ErrorKind::kDimension,
          "state samples do not match the scenario dimension");
  require(bundle_fresh.n_paths <= state.paths(), ErrorKind::kDimension,
          "fresh bundle has more paths than the burned-in state");
  const PathBundle b = bundle_fresh.with_periods(1);
  const std::size_t P = b.n_paths, steps = b.steps();
  const double dt = b.dt();
  std::optional<ReducedCostForm> H;
  if (reduced) H = reduced_cost_form(set, feedback);
  std::vector<double> acc(P, 0.0);
  std::vector<Vec> u(P), tmp(P);
  const PathRunStatus status = run_closed_loop_paths(
      set, feedback, b, 1, false, kOverflow,
      [&state](std::size_t p, Mat& X) { X = state.samples.col(static_cast<Eigen::Index>(p)); },
      [&](std::size_t p, std::size_t j, const CoefficientFrame& f, const Mat& X) {
        const double F = H ? H->evaluate(current_phase(f), f.prefix(), X.col(0))
                           : frame_cost(f, X, u[p], tmp[p]);
        acc[p] += trap_weight(j, steps, dt) * F;
      });
  CostEstimate out;
  out.horizon = set.tau;
  out.per_path.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    const bool bad = status.overflowed[p] || (p < state.valid.size() && !state.valid[p]);
    out.per_path[p] = bad ? kNaN : acc[p] / set.tau;
    out.overflow_count += bad ? 1 : 0;
  }
  out.estimate = finite_mean(out.per_path);
  return out;
}

BsdeGridSolution solve_eta(const PeriodicCoefficientSet& set, const RiccatiSolution& riccati,
                           const PathBundle& bundle, const BsdeOptions& opts) {
  set.validate_shapes();
  const CoefficientFn A = set.A, B = set.B, Th = riccati.Theta0, q = set.q, rho = set.rho;
  const CoefficientFn Acl = CoefficientFn::custom(
      combined_kind({A.kind(), B.kind(), Th.kind()}), set.n, set.n, 0.0,
      [A, B, Th](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        o = A.evaluate(ph, pre) + B.evaluate(ph, pre) * Th.evaluate(ph, pre);
      },
      "A+B*Theta0");
  const CoefficientFn lambda = CoefficientFn::custom(
      combined_kind({q.kind(), rho.kind(), Th.kind()}), set.n, 1, 0.0,
      [q, rho, Th](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        o = q.evaluate(ph, pre) + Th.evaluate(ph, pre).transpose() * rho.evaluate(ph, pre);
      },
      "q+Theta0'rho");
  BsdeOptions o = opts;
  if (riccati.deterministic && o.mode == SolveMode::kAuto && set.deterministic())
    o.mode = SolveMode::kDeterministic;
  return solve_vector_bsde(Acl, set.C, riccati.KL, set.b, set.sigma, lambda, bundle, o);
}

FeedbackLaw optimal_feedback(const RiccatiSolution& riccati, const BsdeGridSolution& eta,
                             const PeriodicCoefficientSet& set,
                             const std::optional<PathBundle>& check_bundle) {
  require(eta.value.rows == set.n && eta.value.cols == 1, ErrorKind::kDimension,
          "eta solution must be n x 1");
  require(eta.value.steps == riccati.KL.value.steps, ErrorKind::kDimension,
          "eta and K live on different grids");
  const CoefficientFn eta_fn = field_as_coefficient(eta.value, "eta");
  const CoefficientFn B = set.B, R = set.R, rho = set.rho;
  FeedbackLaw fb;
  fb.id = "optimal";
  fb.Theta = riccati.Theta0.relabeled("Theta0");
  fb.v = CoefficientFn::custom(
      combined_kind({eta_fn.kind(), B.kind(), R.kind(), rho.kind()}), set.m, 1, 0.0,
      [eta_fn, B, R, rho](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        thread_local Mat e, b, r, rhs;
        e.resize(eta_fn.rows(), 1);
        b.resize(B.rows(), B.cols());
        r.resize(R.rows(), R.cols());
        rhs.resize(R.rows(), 1);
        eta_fn.evaluate_into(ph, pre, e);
        B.evaluate_into(ph, pre, b);
        R.evaluate_into(ph, pre, r);
        rho.evaluate_into(ph, pre, rhs);
        rhs.noalias() += b.transpose() * e;
        if (r.rows() == 1) {
          o = rhs / -r(0, 0);
        } else {
          o = -r.ldlt().solve(rhs);
        }
      },
      "v0");
  if (check_bundle) {
    const StabilityReport rep = stabilizer_check(fb.Theta, set, *check_bundle);
    if (!rep.stable()) {
      std::ostringstream msg;
      msg << "Theta0 fails the stabilizer check (lambda_hat = " << rep.lambda_hat << " +- "
          << 1.96 * rep.lambda_se << "); the Riccati solve is not trustworthy";
      fail(ErrorKind::kNumerical, msg.str());
    }
  }
  return fb;
}

namespace {

// Integrand of V at one point; buffers are reused across calls.
struct ValueIntegrand {
  CoefficientFn K, eta, zeta, B, R, rho, sigma, b;
  Mat Kv, ev, zv, Bv, Rv, rv, sv, bv;

  ValueIntegrand(const RiccatiSolution& ric, const BsdeGridSolution& e,
                 const PeriodicCoefficientSet& set)
      : K(field_as_coefficient(ric.KL.value, "K")),
        eta(field_as_coefficient(e.value, "eta")),
        zeta(field_as_coefficient(e.integrand, "zeta")),
        B(set.B), R(set.R), rho(set.rho), sigma(set.sigma), b(set.b),
        Kv(set.n, set.n), ev(set.n, 1), zv(set.n, 1), Bv(set.n, set.m), Rv(set.m, set.m),
        rv(set.m, 1), sv(set.n, 1), bv(set.n, 1) {}

  double operator()(double ph, const PathPrefix& pre) {
    K.evaluate_into(ph, pre, Kv);
    eta.evaluate_into(ph, pre, ev);
    zeta.evaluate_into(ph, pre, zv);
    B.evaluate_into(ph, pre, Bv);
    R.evaluate_into(ph, pre, Rv);
    rho.evaluate_into(ph, pre, rv);
    sigma.evaluate_into(ph, pre, sv);
    b.evaluate_into(ph, pre, bv);
    const Vec w = Bv.transpose() * ev.col(0) + rv.col(0);
    const Vec rw = Rv.ldlt().solve(w);
    // Sensitivities of the integrand to uniform errors in K and eta.
    dK = std::max(dK, sv.squaredNorm());
    deta = std::max(deta, 2.0 * (bv.norm() + (Bv * rw).norm()));
    return -w.dot(rw) + sv.col(0).dot(Kv * sv.col(0)) + 2.0 * ev.col(0).dot(bv.col(0)) +
           2.0 * zv.col(0).dot(sv.col(0));
  }
  double dK = 0.0, deta = 0.0;
};

void require_common_grid(const RiccatiSolution& ric, const BsdeGridSolution& eta,
                         const PeriodicCoefficientSet& set) {
  require(ric.n == set.n && eta.value.rows == set.n && eta.integrand.rows == set.n,
          ErrorKind::kDimension, "solutions do not match the scenario dimension");
  require(eta.value.steps == ric.KL.value.steps &&
              std::abs(eta.value.tau - ric.KL.value.tau) <= 1e-12 * set.tau,
          ErrorKind::kDimension, "Riccati and eta solutions live on different grids");
}

}  // namespace

CostEstimate value_function(const RiccatiSolution& riccati, const BsdeGridSolution& eta,
                            const PeriodicCoefficientSet& set, const PathBundle& bundle) {
  require_common_grid(riccati, eta, set);
  const PathBundle b = bundle.with_periods(1);
  const std::size_t P = b.n_paths;
  const int N = b.steps_per_period;
  const double dt = b.dt();
  CostEstimate out;
  out.horizon = set.tau;
  out.per_path.assign(P, 0.0);
  const ValueIntegrand proto(riccati, eta, set);
  parallel_blocks(P, default_workers(), [&](std::size_t lo, std::size_t hi) {
    ValueIntegrand g = proto;
    std::vector<double> incr(static_cast<std::size_t>(N));
    for (std::size_t p = lo; p < hi; ++p) {
      b.fill_path(p, incr);
      double acc = 0.0, running = 0.0;
      for (int j = 0; j <= N; ++j) {
        // The last node is phase 0 of the next period.
        const int within = j == N ? 0 : j;
        const PathPrefix pre{std::span<const double>(incr.data(), static_cast<std::size_t>(within)),
                             within == 0 ? 0.0 : running};
        acc += trap_weight(static_cast<std::size_t>(j), static_cast<std::size_t>(N), dt) *
               g(b.tau * within / N, pre);
        if (j < N) running += incr[static_cast<std::size_t>(j)];
      }
      out.per_path[p] = acc / set.tau;
    }
  });
  out.estimate = finite_mean(out.per_path);
  if (riccati.deterministic && eta.deterministic && P > 0) {
    // Deterministic fields carry no sampling error; the solver truncation
    // bound takes the place of the standard error.
    ValueIntegrand g = proto;
    for (int j = 0; j < N; ++j) g(b.tau * j / N, PathPrefix{});
    out.estimate.se = std::max(out.estimate.se, g.dK * riccati.K0_se().norm() +
                                                    g.deta * eta.fixed_point_se.norm());
  }
  return out;
}

CompletionOfSquare completion_of_square_check(const PeriodicCoefficientSet& set,
                                              const FeedbackLaw& feedback,
                                              const RiccatiSolution& riccati,
                                              const BsdeGridSolution& eta,
                                              const RandomPeriodicState& state,
                                              const PathBundle& bundle_fresh) {
  require_common_grid(riccati, eta, set);
  require(state.feedback_id == feedback.id, ErrorKind::kDomain,
          "state was burned in with feedback '" + state.feedback_id + "', not '" + feedback.id +
              "'");
  require(bundle_fresh.n_paths <= state.paths(), ErrorKind::kDimension,
          "fresh bundle has more paths than the burned-in state");
  const FeedbackLaw opt = optimal_feedback(riccati, eta, set);
  const PathBundle b = bundle_fresh.with_periods(1);
  const std::size_t P = b.n_paths, steps = b.steps();
  const double dt = b.dt();
  const ValueIntegrand proto(riccati, eta, set);
  std::vector<double> cost(P, 0.0), quad(P, 0.0), val(P, 0.0),
      min_quad(P, std::numeric_limits<double>::infinity());
  std::vector<std::unique_ptr<ValueIntegrand>> gs(P);
  struct Scratch {
    Vec u, tmp, w;
    Mat Th0, v0;
  };
  std::vector<Scratch> scratch(P);
  const PathRunStatus status = run_closed_loop_paths(
      set, feedback, b, 1, false, kOverflow,
      [&state](std::size_t p, Mat& X) { X = state.samples.col(static_cast<Eigen::Index>(p)); },
      [&](std::size_t p, std::size_t j, const CoefficientFrame& f, const Mat& X) {
        if (!gs[p]) gs[p] = std::make_unique<ValueIntegrand>(proto);
        Scratch& s = scratch[p];
        const double ph = current_phase(f);
        const double wt = trap_weight(j, steps, dt);
        cost[p] += wt * frame_cost(f, X, s.u, s.tmp);
        val[p] += wt * (*gs[p])(ph, f.prefix());
        s.Th0 = opt.Theta.evaluate(ph, f.prefix());
        s.v0 = opt.v.evaluate(ph, f.prefix());
        s.w = (f[Slot::kTheta] - s.Th0) * X.col(0) + f[Slot::kV].col(0) - s.v0.col(0);
        const double qi = s.w.dot(f[Slot::kR] * s.w);
        min_quad[p] = std::min(min_quad[p], qi);
        quad[p] += wt * qi;
        if (j == steps) gs[p].reset();
      });
  CompletionOfSquare out;
  std::vector<double> c, v, q, d;
  double mq = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < P; ++p) {
    const bool bad = status.overflowed[p] || (p < state.valid.size() && !state.valid[p]);
    if (bad) {
      ++out.overflow_count;
      continue;
    }
    c.push_back(cost[p] / set.tau);
    v.push_back(val[p] / set.tau);
    q.push_back(quad[p] / set.tau);
    d.push_back(c.back() - v.back() - q.back());
    mq = std::min(mq, min_quad[p]);
  }
  out.lhs = mean_estimate(c);
  out.value = mean_estimate(v);
  out.quadratic = mean_estimate(q);
  out.difference = mean_estimate(d);
  out.min_quadratic_integrand = mq;
  return out;
}

std::vector<Perturbation> gain_perturbations(const Mat& dTheta, const std::vector<double>& eps) {
  std::vector<Perturbation> out;
  for (double e : eps) out.push_back({dTheta, Mat::Zero(dTheta.rows(), 1), e});
  return out;
}

ScanResult optimality_scan(const PeriodicCoefficientSet& set, const RiccatiSolution& riccati,
                           const BsdeGridSolution& eta, const std::vector<Perturbation>& perts,
                           const PathBundle& burn_bundle, const PathBundle& eval_bundle,
                           const ScanOptions& opts) {
  require(!perts.empty(), ErrorKind::kDomain, "scan needs at least one perturbation");
  const FeedbackLaw opt = optimal_feedback(riccati, eta, set);
  const Vec x0 = opts.x_start ? *opts.x_start : Vec::Zero(set.n);
  const PathBundle check = check_bundle_for(burn_bundle, 0x5ca9, opts.burn.check_paths, 8);
  ScanResult res;
  std::vector<FeedbackLaw> fbs;
  double lambda_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < perts.size(); ++i) {
    const Perturbation& pt = perts[i];
    require(pt.dTheta.rows() == set.m && pt.dTheta.cols() == set.n && pt.dv.rows() == set.m &&
                pt.dv.cols() == 1,
            ErrorKind::kDimension, "perturbation shapes must be m x n and m x 1");
    const CoefficientFn Th0 = opt.Theta, v0 = opt.v;
    const Mat dT = pt.epsilon * pt.dTheta, dv = pt.epsilon * pt.dv;
    FeedbackLaw fb;
    fb.id = "scan-" + std::to_string(i);
    fb.Theta = CoefficientFn::custom(
        Th0.kind(), set.m, set.n, 0.0,
        [Th0, dT](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          Th0.evaluate_into(ph, pre, o);
          o += dT;
        },
        "Theta0+eps*dTheta");
    fb.v = CoefficientFn::custom(
        v0.kind(), set.m, 1, 0.0,
        [v0, dv](double ph, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          v0.evaluate_into(ph, pre, o);
          o += dv;
        },
        "v0+eps*dv");
    ScanRow row;
    row.epsilon = pt.epsilon;
    const StabilityReport rep = stabilizer_check(fb.Theta, set, check);
    row.stable = rep.stable();
    row.lambda_hat = rep.lambda_hat;
    if (row.stable) {
      lambda_min = std::min(lambda_min, rep.lambda_hat);
    } else {
      row.note = "not stabilizing";
    }
    res.rows.push_back(row);
    fbs.push_back(std::move(fb));
  }
  if (opts.burn.k_burn) {
    res.k_burn = *opts.burn.k_burn;
  } else {
    require(std::isfinite(lambda_min), ErrorKind::kDomain, "no scanned feedback is stabilizing");
    res.k_burn = default_k_burn(lambda_min, set.tau);
  }
  BurnInOptions bo = opts.burn;
  bo.k_burn = res.k_burn;
  bo.check_contraction = false;
  bo.require_stationary = false;
  std::vector<std::vector<double>> per_path(perts.size());
  for (std::size_t i = 0; i < perts.size(); ++i) {
    ScanRow& row = res.rows[i];
    if (!row.stable) continue;
    try {
      const RandomPeriodicState st = burn_in_state(set, fbs[i], burn_bundle, x0, bo);
      if (!st.stationary) row.note = "burn-in moments not stationary";
      const CostEstimate c = single_period_cost(set, fbs[i], st, eval_bundle);
      row.cost = c.estimate;
      per_path[i] = c.per_path;
    } catch (const Error& e) {
      row.stable = false;
      row.note = e.what();
    }
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    if (res.rows[i].stable && res.rows[i].cost.value < best) {
      best = res.rows[i].cost.value;
      res.argmin = static_cast<int>(i);
    }
  }
  res.min_at_zero = res.argmin >= 0 && res.rows[static_cast<std::size_t>(res.argmin)].epsilon == 0.0;

  // kappa_p = sum eps^2 (c_p(eps) - c_p(0)) / sum eps^4 per path.
  int zero = -1;
  for (std::size_t i = 0; i < res.rows.size(); ++i)
    if (res.rows[i].epsilon == 0.0 && res.rows[i].stable) zero = static_cast<int>(i);
  if (zero >= 0) {
    const auto& base = per_path[static_cast<std::size_t>(zero)];
    std::vector<double> kp;
    for (std::size_t p = 0; p < base.size(); ++p) {
      double num = 0.0, den = 0.0;
      bool ok = std::isfinite(base[p]);
      for (std::size_t i = 0; i < res.rows.size() && ok; ++i) {
        const double e = res.rows[i].epsilon;
        if (!res.rows[i].stable || e == 0.0) continue;
        const double ci = per_path[i][p];
        if (!std::isfinite(ci)) {
          ok = false;
          break;
        }
        num += e * e * (ci - base[p]);
        den += e * e * e * e;
      }
      if (ok && den > 0.0) kp.push_back(num / den);
    }
    res.kappa = mean_estimate(kp);
  }
  res.value = value_function(riccati, eta, set, eval_bundle).estimate;
  return res;
}

void write_scan_csv(std::ostream& os, const ScanResult& scan) {
  os << "epsilon,cost,stderr,stable_flag\n";
  os.precision(12);
  for (const auto& r : scan.rows) {
    os << r.epsilon << ',';
    if (r.stable) {
      os << r.cost.value << ',' << r.cost.se;
    } else {
      os << "nan,nan";
    }
    os << ',' << (r.stable ? 1 : 0) << '\n';
  }
}

ErgodicReport ergodic_report(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                             const PathBundle& bundle, const RiccatiSolution* riccati,
                             const BsdeGridSolution* eta, const ErgodicOptions& opts) {
  require(opts.longrun_periods >= 1, ErrorKind::kDomain, "long-run horizon must be positive");
  const Vec x0 = opts.x_start ? *opts.x_start : Vec::Zero(set.n);
  ErgodicReport rep;
  rep.scenario = set.name;
  rep.feedback_id = feedback.id;
  BurnInOptions bo = opts.burn;
  bo.require_stationary = false;
  const std::size_t sp_paths = opts.single_period_paths ? opts.single_period_paths : bundle.n_paths;
  const std::size_t lr_paths = opts.longrun_paths ? opts.longrun_paths : bundle.n_paths;
  rep.state = burn_in_state(set, feedback, bundle.fresh(1).with_paths(sp_paths), x0, bo);
  if (!rep.state.stationary)
    rep.warnings.push_back("burn-in moments differ across periods (z = " +
                           std::to_string(rep.state.stationarity_z) + ")");
  if (opts.burn.check_contraction && !rep.state.contraction.contracting)
    rep.warnings.push_back("closed-loop difference process is not contracting");
  rep.single_period =
      single_period_cost(set, feedback, rep.state, bundle.fresh(2).with_paths(sp_paths));
  Vec xl = opts.longrun_start ? *opts.longrun_start : Vec::Zero(set.n);
  if (!opts.longrun_start) {
    double cnt = 0.0;
    for (std::size_t p = 0; p < rep.state.paths(); ++p) {
      if (!rep.state.valid[p]) continue;
      xl += rep.state.samples.col(static_cast<Eigen::Index>(p));
      cnt += 1.0;
    }
    if (cnt > 0.0) xl /= cnt;
  }
  rep.longrun_start = xl;
  rep.longrun = finite_horizon_cost(set, feedback, xl, opts.longrun_periods * set.tau,
                                    bundle.fresh(3).with_paths(lr_paths));
  if (riccati && eta) rep.value = value_function(*riccati, *eta, set, bundle.fresh(4));

  auto compare = [&rep](const char* a, const Estimate& x, const char* b, const Estimate& y) {
    if (!within_se(x, y)) rep.disagreements.push_back(std::string(a) + " vs " + b);
  };
  compare("longrun", rep.longrun.estimate, "single_period", rep.single_period.estimate);
  if (rep.value) {
    compare("longrun", rep.longrun.estimate, "value", rep.value->estimate);
    compare("single_period", rep.single_period.estimate, "value", rep.value->estimate);
  }
  return rep;
}

std::string ergodic_report_json(const ErgodicReport& r) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["feedback"] = r.feedback_id;
  j["cost_longrun"] = cost_json(r.longrun);
  j["cost_single_period"] = cost_json(r.single_period);
  j["longrun_start"] = std::vector<double>(r.longrun_start.data(),
                                           r.longrun_start.data() + r.longrun_start.size());
  j["value_V"] = r.value ? cost_json(*r.value) : nlohmann::json();
  const auto& c = r.state.contraction;
  j["diagnostics"] = {
      {"k_burn", r.state.k_burn},
      {"lambda_hat", r.state.lambda_hat},
      {"stationarity_z", r.state.stationarity_z},
      {"stationary", r.state.stationary},
      {"burn_in_overflowed_paths", r.state.overflow_count},
      {"contraction",
       {{"slope_per_period", c.slope_per_period},
        {"slope_stderr", c.slope_se_per_period},
        {"contracting", c.contracting}}}};
  j["disagreements"] = r.disagreements;
  j["warnings"] = r.warnings;
  j["agree"] = r.disagreements.empty();
  return j.dump(2);
}

}  // namespace ergolq
