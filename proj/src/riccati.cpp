#include "ergolq/riccati.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "ergolq/parallel.hpp"

namespace ergolq {

namespace {

bool identically_zero(const CoefficientFn& f) {
  const auto& p = f.params();
  return p && p->family == CoeffParams::Family::kConstant && p->base.isZero(0.0);
}

nlohmann::json matrix_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

PeriodicCoefficientSet homogeneous_set(const CoefficientFn& A, const CoefficientFn& B,
                                       const CoefficientFn& C, double tau) {
  PeriodicCoefficientSet s;
  s.name = "closed-loop";
  s.tau = tau;
  s.n = static_cast<int>(A.rows());
  s.m = static_cast<int>(B.cols());
  s.A = A;
  s.B = B;
  s.C = C;
  s.b = CoefficientFn::zeros(s.n, 1);
  s.sigma = CoefficientFn::zeros(s.n, 1);
  s.Q = CoefficientFn::zeros(s.n, s.n);
  s.S = CoefficientFn::zeros(s.m, s.n);
  s.R = CoefficientFn::constant(Mat::Identity(s.m, s.m));
  s.q = CoefficientFn::zeros(s.n, 1);
  s.rho = CoefficientFn::zeros(s.m, 1);
  return s;
}

// -R^-1 (B^T K + S) on the grid of K; S may be invalid (treated as zero).
CoefficientFn gain_from_field(const GridField& field, const CoefficientFn& B,
                              const CoefficientFn& R, const CoefficientFn* S,
                              std::string label) {
  const CoefficientFn K = field_as_coefficient(field, "K");
  const CoeffKind kind = S ? combined_kind({K.kind(), B.kind(), R.kind(), S->kind()})
                           : combined_kind({K.kind(), B.kind(), R.kind()});
  const Eigen::Index m = B.cols(), n = B.rows();
  // Crude bound |R^-1| (|B| |K| n + |S|) from sampled data is not available
  // here; report the product of entry bounds as an indicator.
  const double bound = m * (B.bound() * K.bound() * n + (S ? S->bound() : 0.0));
  std::optional<CoefficientFn> Sc;
  if (S) Sc = *S;
  return CoefficientFn::custom(
      kind, m, n, bound,
      [K, B, R, Sc](double phase, const PathPrefix& pre, Eigen::Ref<Mat> out) {
        // Evaluated at every node of every simulated path: keep it allocation-free.
        thread_local Mat k, b, r, s, rhs;
        k.resize(K.rows(), K.cols());
        b.resize(B.rows(), B.cols());
        r.resize(R.rows(), R.cols());
        K.evaluate_into(phase, pre, k);
        B.evaluate_into(phase, pre, b);
        R.evaluate_into(phase, pre, r);
        rhs.resize(b.cols(), k.cols());
        rhs.noalias() = b.transpose() * k;
        if (Sc) {
          s.resize(Sc->rows(), Sc->cols());
          Sc->evaluate_into(phase, pre, s);
          rhs += s;
        }
        if (r.rows() == 1) {
          out = rhs / -r(0, 0);
        } else {
          out = -r.ldlt().solve(rhs);
        }
      },
      std::move(label));
}

}  // namespace

ReducedData reduce_cross_term(const PeriodicCoefficientSet& set) {
  set.validate_shapes();
  ReducedData out;
  if (identically_zero(set.S)) {
    out.A_tilde = set.A;
    out.Q_tilde = set.Q;
    out.RinvS = CoefficientFn::zeros(set.m, set.n);
    out.identity = true;
    return out;
  }
  const CoefficientFn A = set.A, B = set.B, Q = set.Q, S = set.S, R = set.R;
  auto rinv_s = [R, S](double phase, const PathPrefix& pre) {
    const Mat r = R.evaluate(phase, pre);
    Eigen::LDLT<Mat> ldlt(r);
    require(ldlt.info() == Eigen::Success && ldlt.rcond() > 1e-14, ErrorKind::kNumerical,
            "singular R sample at phase " + std::to_string(phase));
    return Mat(ldlt.solve(S.evaluate(phase, pre)));
  };
  out.RinvS = CoefficientFn::custom(
      combined_kind({R.kind(), S.kind()}), set.m, set.n, S.bound(),
      [rinv_s](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) { o = rinv_s(phase, pre); },
      "R^-1 S");
  out.A_tilde = CoefficientFn::custom(
      combined_kind({A.kind(), B.kind(), R.kind(), S.kind()}), set.n, set.n,
      A.bound() + set.m * B.bound() * S.bound(),
      [A, B, rinv_s](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        o = A.evaluate(phase, pre) - B.evaluate(phase, pre) * rinv_s(phase, pre);
      },
      "A~");
  out.Q_tilde = CoefficientFn::custom(
      combined_kind({Q.kind(), R.kind(), S.kind()}), set.n, set.n,
      Q.bound() + set.m * S.bound() * S.bound(),
      [Q, S, rinv_s](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        o = symmetrize(Q.evaluate(phase, pre) -
                       S.evaluate(phase, pre).transpose() * rinv_s(phase, pre));
      },
      "Q~");
  return out;
}

CoefficientFn feedback_gain(const PeriodicCoefficientSet& set, const GridField& K) {
  return gain_from_field(K, set.B, set.R, identically_zero(set.S) ? nullptr : &set.S, "Theta0");
}

RiccatiSolution kleinman_solve(const CoefficientFn& A, const CoefficientFn& C,
                               const CoefficientFn& B, const CoefficientFn& Q,
                               const CoefficientFn& R, const CoefficientFn& Theta_init,
                               const PathBundle& bundle, const RiccatiOptions& opts) {
  const Eigen::Index n = A.rows(), m = B.cols();
  require(A.cols() == n && C.rows() == n && C.cols() == n && B.rows() == n && Q.rows() == n &&
              Q.cols() == n && R.rows() == m && R.cols() == m,
          ErrorKind::kDimension, "inconsistent Riccati data shapes");
  require(Theta_init.rows() == m && Theta_init.cols() == n, ErrorKind::kDimension,
          "initial feedback has shape " + shape_str(Theta_init.rows(), Theta_init.cols()) +
              ", expected " + shape_str(m, n));
  require(opts.max_outer >= 1, ErrorKind::kDomain, "max_outer must be positive");

  if (opts.check_initializer) {
    const PathBundle cb = opts.check_bundle ? *opts.check_bundle
                                            : bundle.fresh(0x57ab1e).with_paths(2000).with_periods(8);
    const StabilityReport rep =
        stabilizer_check(Theta_init, homogeneous_set(A, B, C, bundle.tau), cb);
    if (!rep.stable()) {
      std::ostringstream msg;
      msg << "initial feedback does not stabilize: lambda_hat = " << rep.lambda_hat << " +- "
          << 1.96 * rep.lambda_se << ", overflowed paths " << rep.overflow_count;
      fail(ErrorKind::kDomain, msg.str());
    }
  }

  BsdeOptions inner = opts.bsde;
  inner.tol = opts.tol / 10.0;
  inner.positivity = Positivity::kSemidefinite;

  RiccatiSolution out;
  out.tau = bundle.tau;
  out.n = static_cast<int>(n);
  out.m = static_cast<int>(m);
  CoefficientFn Theta = Theta_init;
  for (int N = 1; N <= opts.max_outer; ++N) {
    const CoefficientFn Th = Theta;
    const CoefficientFn Aeff = CoefficientFn::custom(
        combined_kind({A.kind(), B.kind(), Th.kind()}), n, n, 0.0,
        [A, B, Th](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          o = A.evaluate(phase, pre) + B.evaluate(phase, pre) * Th.evaluate(phase, pre);
        },
        "A+B*Theta");
    const CoefficientFn Lam = CoefficientFn::custom(
        combined_kind({Q.kind(), R.kind(), Th.kind()}), n, n, 0.0,
        [Q, R, Th](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          const Mat t = Th.evaluate(phase, pre);
          o = symmetrize(Q.evaluate(phase, pre) + t.transpose() * R.evaluate(phase, pre) * t);
        },
        "Q+Theta'R*Theta");
    BsdeGridSolution sol = solve_linear_matrix_bsde(Aeff, C, Lam, bundle, inner);

    KleinmanStep step;
    step.K0 = sol.initial();
    step.K0_se = sol.fixed_point_se;
    step.inner_iterations = sol.iterations;
    step.update = std::numeric_limits<double>::infinity();
    if (!out.trace.empty()) {
      const KleinmanStep& prev = out.trace.back();
      step.update = (step.K0 - prev.K0).norm();
      step.descent_margin = min_eigenvalue(prev.K0 - step.K0);
      // Descent is asserted to the requested tolerance: near the fixed point
      // the lagged gain of the explicit scheme moves K by O(dt^2).
      const double allowed =
          sol.deterministic
              ? opts.tol + prev.K0_se.norm() + step.K0_se.norm()
              : opts.tol + 3.0 * combined_se(prev.K0_se.norm(), step.K0_se.norm());
      if (step.descent_margin < -allowed) {
        std::ostringstream msg;
        msg << "monotone descent violated at outer step " << N << ": min eig(K^(N) - K^(N+1)) = "
            << step.descent_margin << " below -" << allowed
            << " (regression basis or path count inadequate)";
        fail(ErrorKind::kNumerical, msg.str());
      }
    }
    out.trace.push_back(step);
    out.deterministic = sol.deterministic;
    Theta = gain_from_field(sol.value, B, R, nullptr, "Theta");
    out.outer_iterations = N;
    const double stop = sol.deterministic || !opts.bsde.statistical_stop
                            ? opts.tol
                            : std::max(opts.tol, opts.bsde.stat_floor * sol.se_norm());
    out.KL = std::move(sol);
    if (step.update < stop) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged) {
    fail(ErrorKind::kConvergence, "Kleinman iteration did not converge in " +
                                      std::to_string(opts.max_outer) + " outer steps");
  }
  const double lo = min_eigenvalue(out.K0());
  if (!(lo > 0.0)) {
    fail(ErrorKind::kNumerical,
         "Riccati solution is not positive definite: min eigenvalue " + std::to_string(lo));
  }
  out.Theta0 = Theta.relabeled("Theta0");
  return out;
}

RiccatiSolution solve_stochastic_riccati(const PeriodicCoefficientSet& set,
                                         const CoefficientFn& Theta_init,
                                         const PathBundle& bundle, const RiccatiOptions& opts) {
  set.validate_shapes();
  require(std::abs(bundle.tau - set.tau) <= 1e-12 * set.tau, ErrorKind::kDimension,
          "bundle period differs from scenario period");
  const ReducedData red = reduce_cross_term(set);
  CoefficientFn init = Theta_init;
  if (!red.identity) {
    const CoefficientFn shift = red.RinvS;
    init = CoefficientFn::custom(
        combined_kind({Theta_init.kind(), shift.kind()}), set.m, set.n, 0.0,
        [Theta_init, shift](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          o = Theta_init.evaluate(phase, pre) + shift.evaluate(phase, pre);
        },
        "Theta_init+R^-1 S");
  }
  RiccatiSolution sol =
      kleinman_solve(red.A_tilde, set.C, set.B, red.Q_tilde, set.R, init, bundle, opts);
  if (!red.identity) sol.Theta0 = feedback_gain(set, sol.KL.value);
  return sol;
}

RiccatiResidual riccati_residual(const RiccatiSolution& sol, const PeriodicCoefficientSet& set,
                                 const PathBundle& bundle_fresh) {
  set.validate_shapes();
  const GridField& K = sol.KL.value;
  const GridField& L = sol.KL.integrand;
  require(K.rows == set.n && K.cols == set.n, ErrorKind::kDimension,
          "solution size differs from scenario");
  require(K.steps == bundle_fresh.steps_per_period &&
              std::abs(K.tau - bundle_fresh.tau) <= 1e-12 * K.tau,
          ErrorKind::kDimension, "fresh bundle lives on a different grid");
  const int N = K.steps;
  const double dt = K.dt();
  const std::size_t P = bundle_fresh.n_paths;
  require(P >= 2, ErrorKind::kDomain, "residual needs at least two fresh paths");
  const Eigen::Index n = set.n;
  const auto E = static_cast<std::size_t>(n * n);
  const std::vector<double> incr = bundle_fresh.period_block(0);

  // Per path, per node defects; reduced afterwards in path order.
  std::vector<double> defects(P * static_cast<std::size_t>(N) * E);
  std::vector<double> martingale(P * static_cast<std::size_t>(N) * E);
  parallel_blocks(P, default_workers(), [&](std::size_t lo, std::size_t hi) {
    Mat Ki(n, n), Kn(n, n), Li(n, n), f(n, n);
    for (std::size_t p = lo; p < hi; ++p) {
      const double* row = incr.data() + p * static_cast<std::size_t>(N);
      double s = 0.0;
      for (int i = 0; i < N; ++i) {
        const PathPrefix pre{std::span<const double>(row, static_cast<std::size_t>(i)), s};
        const double dw = row[i];
        const double phase = K.node_time(i);
        K.value_into(i, s, Ki);
        L.value_into(i, s, Li);
        K.value_into(i + 1, s + dw, Kn);
        const Mat A = set.A.evaluate(phase, pre), B = set.B.evaluate(phase, pre);
        const Mat C = set.C.evaluate(phase, pre), Q = set.Q.evaluate(phase, pre);
        const Mat S = set.S.evaluate(phase, pre), R = set.R.evaluate(phase, pre);
        const Mat G = B.transpose() * Kn + S;
        f = Kn * A + A.transpose() * Kn + C.transpose() * Kn * C + Li * C + C.transpose() * Li +
            Q - G.transpose() * R.ldlt().solve(G);
        const Mat D = Kn - Ki + f * dt - Li * dw;
        const std::size_t at = (p * static_cast<std::size_t>(N) + i) * E;
        for (std::size_t e = 0; e < E; ++e) {
          const auto r = static_cast<Eigen::Index>(e % n), c = static_cast<Eigen::Index>(e / n);
          defects[at + e] = D(r, c);
          martingale[at + e] = Li(r, c) * dw;
        }
        s += dw;
      }
    }
  });

  // Each fitted node value carries the sample noise of its own regression,
  // of the size of the martingale increment's standard error over the
  // training paths; it adds to the fresh-path standard error of the defect.
  const double train_paths = sol.deterministic ? 0.0 : static_cast<double>(sol.KL.n_paths);
  RiccatiResidual res;
  auto moments = [&](const std::vector<double>& v, int i, std::size_t e) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double d = v[(p * static_cast<std::size_t>(N) + i) * E + e];
      sum += d;
      sq += d * d;
    }
    const double mean = sum / P;
    return std::pair{mean, std::max(0.0, (sq - P * mean * mean) / (P - 1))};
  };
  for (int i = 0; i < N; ++i) {
    double norm2 = 0.0, se2 = 0.0;
    for (std::size_t e = 0; e < E; ++e) {
      const auto [mean, var] = moments(defects, i, e);
      norm2 += mean * mean;
      se2 += var / P;
      if (train_paths > 0.0) se2 += moments(martingale, i, e).second / train_paths;
    }
    res.raw += std::sqrt(norm2) / N;
    res.floor += std::sqrt(se2) / N;
  }
  const double scale = sol.K0().norm();
  res.normalized = scale > 0.0 ? res.raw / scale : res.raw;
  if (scale > 0.0) res.floor /= scale;
  return res;
}

StabilityReport stabilizer_check(const CoefficientFn& Theta, const PeriodicCoefficientSet& set,
                                 const PathBundle& bundle) {
  require(Theta.rows() == set.m && Theta.cols() == set.n, ErrorKind::kDimension,
          "feedback has shape " + shape_str(Theta.rows(), Theta.cols()) + ", expected " +
              shape_str(set.m, set.n));
  FeedbackLaw fb{Theta, CoefficientFn::zeros(set.m, 1), Theta.label()};
  SimulationOptions so;
  so.record_stride = bundle.steps_per_period;
  const StateTrajectory traj = simulate_fundamental(set, &fb, bundle, so);
  StabilityReport rep = estimate_second_moment_decay(traj);
  if (rep.overflow_count > 0) {
    rep.warnings.push_back(std::to_string(rep.overflow_count) + " paths overflowed");
  }
  return rep;
}

CoefficientFn find_stabilizer(const PeriodicCoefficientSet& set, const PathBundle& bundle) {
  if (set.stabilizer && stabilizer_check(*set.stabilizer, set, bundle).stable()) {
    return *set.stabilizer;
  }
  const CoefficientFn B = set.B;
  for (double k : {0.0, 1.0, 10.0}) {
    CoefficientFn cand = CoefficientFn::custom(
        B.kind(), set.m, set.n, k * B.bound(),
        [B, k](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
          o = -k * B.evaluate(phase, pre).transpose();
        },
        "-" + std::to_string(k) + "*B'");
    if (stabilizer_check(cand, set, bundle).stable()) return cand;
  }
  fail(ErrorKind::kDomain, "no stabilizing feedback found for scenario " + set.name);
}

std::string riccati_json(const RiccatiSolution& sol, const RiccatiResidual* residual) {
  nlohmann::json j;
  j["n"] = sol.n;
  j["m"] = sol.m;
  j["tau"] = sol.tau;
  j["steps_per_period"] = sol.KL.value.steps;
  j["outer_iterations"] = sol.outer_iterations;
  j["converged"] = sol.converged;
  j["deterministic"] = sol.deterministic;
  j["K0"] = matrix_json(sol.K0());
  j["K0_stderr"] = matrix_json(sol.K0_se());
  j["Theta0_at_phase0"] = matrix_json(sol.Theta0.evaluate(0.0));
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : sol.trace) {
    steps.push_back({{"K0", matrix_json(s.K0)},
                     {"update", std::isfinite(s.update) ? nlohmann::json(s.update) : nlohmann::json()},
                     {"descent_margin", s.descent_margin},
                     {"inner_iterations", s.inner_iterations}});
  }
  j["trace"] = steps;
  if (residual) {
    j["residual"] = {{"raw", residual->raw},
                     {"normalized", residual->normalized},
                     {"floor", residual->floor}};
  }
  return j.dump(2);
}

void write_gain_csv(std::ostream& os, const CoefficientFn& Theta, int steps, double tau) {
  os << "node,t";
  for (Eigen::Index c = 0; c < Theta.cols(); ++c)
    for (Eigen::Index r = 0; r < Theta.rows(); ++r) os << ",Theta_" << r << c;
  os << '\n';
  os.precision(12);
  for (int i = 0; i < steps; ++i) {
    const double t = tau * i / steps;
    // Path-functional gains are reported on the zero-increment path.
    const Mat v = Theta.evaluate(t);
    os << i << ',' << t;
    for (Eigen::Index e = 0; e < v.size(); ++e) os << ',' << v(e % v.rows(), e / v.rows());
    os << '\n';
  }
}

}  // namespace ergolq
