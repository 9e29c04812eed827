#include "ergolq/bsde.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ergolq/parallel.hpp"
#include "ergolq/sde.hpp"

namespace ergolq {

namespace {

RegressionBasis constant_basis(const RegressionBasis& b) {
  RegressionBasis out = b;
  out.degree = 0;
  return out;
}

// Entries of a square matrix at coefficient row k, symmetrized in place.
void symmetrize_rows(Mat& coef, Eigen::Index n) {
  for (Eigen::Index k = 0; k < coef.rows(); ++k) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double avg = 0.5 * (coef(k, i + j * n) + coef(k, j + i * n));
        coef(k, i + j * n) = avg;
        coef(k, j + i * n) = avg;
      }
    }
  }
}

double estimate_ratio(const std::vector<double>& trace) {
  std::vector<double> r;
  for (std::size_t k = trace.size(); k-- > 1 && r.size() < 3;) {
    if (trace[k - 1] > 0.0 && trace[k] > 0.0) r.push_back(trace[k] / trace[k - 1]);
  }
  if (r.empty()) return 0.0;
  std::sort(r.begin(), r.end());
  return std::clamp(r[r.size() / 2], 0.0, 0.99);
}

}  // namespace

BackwardSweeper::BackwardSweeper(const PathBundle& bundle, const RegressionBasis& basis,
                                 bool deterministic)
    : paths_(deterministic ? 1 : bundle.n_paths),
      steps_(bundle.steps_per_period),
      tau_(bundle.tau),
      deterministic_(deterministic),
      basis_(deterministic ? constant_basis(basis) : basis) {
  require(steps_ >= 1, ErrorKind::kDomain, "steps_per_period must be positive");
  require(paths_ >= 1, ErrorKind::kDomain, "backward sweep needs at least one path");
  require(basis_.degree <= 15, ErrorKind::kDomain, "regression degree above 15");
  const auto N = static_cast<std::size_t>(steps_);
  if (deterministic_) {
    incr_.assign(N, 0.0);
  } else {
    incr_ = bundle.period_block(0);
  }
  sums_.assign(paths_ * (N + 1), 0.0);
  for (std::size_t p = 0; p < paths_; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      s += incr_[p * N + i];
      sums_[p * (N + 1) + i + 1] = s;
    }
  }
  regs_.reserve(N);
  std::vector<double> col(paths_);
  for (int i = 0; i < steps_; ++i) {
    for (std::size_t p = 0; p < paths_; ++p) col[p] = partial_sum(p, i);
    regs_.emplace_back(basis_, tau_ * i / steps_, col);
  }
}

BackwardSweeper::Result BackwardSweeper::sweep(const DriftFn& drift, const Mat& terminal,
                                               bool symmetric) const {
  const Eigen::Index rows = terminal.rows();
  const Eigen::Index cols = terminal.cols();
  const Eigen::Index E = rows * cols;
  const auto P = static_cast<Eigen::Index>(paths_);
  const double h = dt();
  symmetric = symmetric && rows == cols;

  Result res;
  res.value = GridField::zeros(rows, cols, steps_, tau_, basis_);
  res.integrand = GridField::zeros(rows, cols, steps_, tau_, basis_);
  Mat term = symmetric ? symmetrize(terminal) : terminal;
  res.value.coef[static_cast<std::size_t>(steps_)] =
      Eigen::Map<const Mat>(term.data(), 1, E);

  Mat next = Eigen::Map<const Mat>(term.data(), 1, E).replicate(P, 1);  // P x E
  Mat acc = next;
  Mat Z(P, E), target(P, E);
  res.max_integrand_se_ratio = Mat::Zero(rows, cols);

  for (int i = steps_ - 1; i >= 0; --i) {
    const NodeRegression& reg = regs_[static_cast<std::size_t>(i)];
    // Centering by E(Y_{i+1} | F_i) leaves the estimator unbiased (dW has
    // conditional mean zero) and removes the sample-mean noise of dW.
    const Mat centered = next - reg.design() * reg.fit(next);
    for (Eigen::Index p = 0; p < P; ++p) {
      Z.row(p) = centered.row(p) * (increment(static_cast<std::size_t>(p), i) / h);
    }
    Mat zcoef = reg.fit(Z);
    if (symmetric) symmetrize_rows(zcoef, rows);
    if (!deterministic_ && P > 1) {
      // Integrands that are zero up to round-off are not signal.
      const double roundoff = 1e-12 * next.cwiseAbs().maxCoeff() / std::sqrt(h);
      for (Eigen::Index e = 0; e < E; ++e) {
        const double mean = Z.col(e).mean();
        const double sd = std::sqrt((Z.col(e).array() - mean).square().sum() / (P - 1));
        if (sd > roundoff) {
          double& slot = res.max_integrand_se_ratio(e % rows, e / rows);
          slot = std::max(slot, std::abs(mean) / (sd / std::sqrt(static_cast<double>(P))));
        }
      }
    }
    const Mat zfit = reg.design() * zcoef;
    const double phase = tau_ * i / steps_;

    parallel_blocks(paths_, default_workers(), [&](std::size_t lo, std::size_t hi) {
      Mat kn(rows, cols), zn(rows, cols), f(rows, cols);
      for (std::size_t p = lo; p < hi; ++p) {
        const auto pi = static_cast<Eigen::Index>(p);
        for (Eigen::Index e = 0; e < E; ++e) {
          kn(e % rows, e / rows) = next(pi, e);
          zn(e % rows, e / rows) = zfit(pi, e);
        }
        SweepPoint pt{i, phase, p, prefix(p, i)};
        drift(pt, kn, zn, f);
        for (Eigen::Index e = 0; e < E; ++e) {
          const double fe = f(e % rows, e / rows);
          target(pi, e) = next(pi, e) + fe * h;
          acc(pi, e) += fe * h;
        }
      }
    });

    Mat kcoef = reg.fit(target);
    if (symmetric) symmetrize_rows(kcoef, rows);
    next.noalias() = reg.design() * kcoef;
    res.value.coef[static_cast<std::size_t>(i)] = std::move(kcoef);
    res.integrand.coef[static_cast<std::size_t>(i)] = std::move(zcoef);
  }

  res.pathwise_se = Mat::Zero(rows, cols);
  if (P > 1) {
    for (Eigen::Index e = 0; e < E; ++e) {
      const double mean = acc.col(e).mean();
      const double var = (acc.col(e).array() - mean).square().sum() / (P - 1);
      res.pathwise_se(e % rows, e / rows) = std::sqrt(var / P);
    }
    if (symmetric) res.pathwise_se = symmetrize(res.pathwise_se);
  }
  return res;
}

CoefficientGrid::CoefficientGrid(const CoefficientFn& fn, const BackwardSweeper& sweeper)
    : rows_(fn.rows()),
      cols_(fn.cols()),
      paths_(sweeper.paths()),
      varies_(fn.path_dependent() && !sweeper.deterministic()) {
  const auto N = static_cast<std::size_t>(sweeper.steps());
  const auto E = static_cast<std::size_t>(rows_ * cols_);
  const std::size_t per_node = varies_ ? paths_ : 1;
  data_.resize(N * per_node * E);
  for (std::size_t i = 0; i < N; ++i) {
    const double phase = sweeper.tau() * static_cast<double>(i) / static_cast<double>(N);
    for (std::size_t p = 0; p < per_node; ++p) {
      Eigen::Map<Mat> out(data_.data() + (i * per_node + p) * E, rows_, cols_);
      fn.evaluate_into(phase, sweeper.prefix(p, static_cast<int>(i)), out);
    }
  }
}

BsdeGridSolution backward_sweep(const DriftFn& drift, const Mat& terminal,
                                const PathBundle& bundle, const RegressionBasis& basis,
                                bool symmetric, bool deterministic) {
  BackwardSweeper sweeper(bundle, basis, deterministic);
  auto res = sweeper.sweep(drift, terminal, symmetric);
  BsdeGridSolution sol;
  sol.fixed_point = terminal;
  sol.fixed_point_se = res.pathwise_se;
  sol.value = std::move(res.value);
  sol.integrand = std::move(res.integrand);
  sol.periodic_residual = (sol.value.initial() - terminal).norm();
  sol.iterations = 1;
  sol.deterministic = deterministic;
  sol.n_paths = sweeper.paths();
  sol.matrix_mode = terminal.rows() == terminal.cols() && symmetric;
  sol.integrand_signal_ratio = max_abs_entry(res.max_integrand_se_ratio);
  return sol;
}

namespace {

bool resolve_deterministic(SolveMode mode, bool inputs_deterministic) {
  switch (mode) {
    case SolveMode::kDeterministic:
      return true;
    case SolveMode::kMonteCarlo:
      return false;
    case SolveMode::kAuto:
      break;
  }
  return inputs_deterministic;
}

BsdeGridSolution iterate_fixed_point(const BackwardSweeper& sweeper, const DriftFn& drift,
                                     Eigen::Index rows, Eigen::Index cols, bool symmetric,
                                     const BsdeOptions& opts) {
  BsdeGridSolution sol;
  sol.deterministic = sweeper.deterministic();
  sol.n_paths = sweeper.paths();
  sol.matrix_mode = symmetric;
  Mat M = Mat::Zero(rows, cols);
  sol.iterates.push_back(M);
  for (int j = 1; j <= opts.max_iter; ++j) {
    auto res = sweeper.sweep(drift, M, symmetric);
    Mat next = res.value.initial();
    if (symmetric) next = symmetrize(next);
    const double upd = (next - M).norm();
    sol.trace.push_back(upd);
    sol.iterates.push_back(next);
    sol.iterations = j;
    const bool stat_ok = !sweeper.deterministic() && opts.statistical_stop && j >= 2 &&
                         upd < opts.stat_floor * res.pathwise_se.norm();
    if (!std::isfinite(upd)) {
      fail(ErrorKind::kNumerical, "fixed-point iteration produced non-finite values");
    }
    if (upd < opts.tol || stat_ok || j == opts.max_iter) {
      sol.fixed_point = M;
      sol.value = std::move(res.value);
      sol.integrand = std::move(res.integrand);
      sol.periodic_residual = upd;
      sol.converged = upd < opts.tol || stat_ok;
      sol.contraction_ratio = estimate_ratio(sol.trace);
      if (sweeper.deterministic()) {
        // No sampling error: report the truncation bound of the fixed point.
        const double r = sol.contraction_ratio;
        sol.fixed_point_se = Mat::Constant(rows, cols, upd * r / (1.0 - r));
      } else {
        sol.fixed_point_se = res.pathwise_se / (1.0 - sol.contraction_ratio);
      }
      sol.integrand_signal_ratio = max_abs_entry(res.max_integrand_se_ratio);
      break;
    }
    M = std::move(next);
  }
  if (!sol.converged) {
    std::ostringstream msg;
    msg << "periodic fixed point did not converge in " << opts.max_iter
        << " iterations (last update " << sol.trace.back() << ", tol " << opts.tol << ")";
    fail(ErrorKind::kConvergence, msg.str());
  }
  if (symmetric && opts.positivity != Positivity::kNone) {
    const Mat K0 = sol.value.initial();
    const double lo = min_eigenvalue(K0);
    const double floor = opts.psd_floor * std::max(1.0, K0.norm());
    const bool ok = opts.positivity == Positivity::kDefinite ? lo > 0.0 : lo >= -floor;
    if (!ok) {
      std::ostringstream msg;
      msg << "time-0 solution lost positivity: min eigenvalue " << lo;
      fail(ErrorKind::kNumerical, msg.str());
    }
  }
  return sol;
}

}  // namespace

BsdeGridSolution solve_linear_matrix_bsde(const CoefficientFn& A, const CoefficientFn& C,
                                          const CoefficientFn& Lambda,
                                          const PathBundle& bundle, const BsdeOptions& opts) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n && C.rows() == n && C.cols() == n && Lambda.rows() == n &&
              Lambda.cols() == n,
          ErrorKind::kDimension, "matrix BSDE expects square coefficients of equal size");
  const bool det = resolve_deterministic(
      opts.mode, !A.path_dependent() && !C.path_dependent() && !Lambda.path_dependent());
  BackwardSweeper sweeper(bundle, opts.basis, det);
  const CoefficientGrid gA(A, sweeper), gC(C, sweeper), gL(Lambda, sweeper);
  DriftFn drift = [&](const SweepPoint& pt, const Mat& K, const Mat& L, Eigen::Ref<Mat> out) {
    thread_local Mat kc;
    const auto a = gA.at(pt.node, pt.path);
    const auto c = gC.at(pt.node, pt.path);
    kc.noalias() = K * c;
    out.noalias() = K * a;
    out.noalias() += a.transpose() * K;
    out.noalias() += c.transpose() * kc;
    out.noalias() += L * c;
    out.noalias() += c.transpose() * L;
    out += gL.at(pt.node, pt.path);
  };
  return iterate_fixed_point(sweeper, drift, n, n, true, opts);
}

BsdeGridSolution solve_vector_bsde(const CoefficientFn& A, const CoefficientFn& C,
                                   const BsdeGridSolution& KL, const CoefficientFn& b,
                                   const CoefficientFn& sigma, const CoefficientFn& lambda,
                                   const PathBundle& bundle, const BsdeOptions& opts) {
  const Eigen::Index n = A.rows();
  require(A.cols() == n && C.rows() == n && C.cols() == n, ErrorKind::kDimension,
          "vector BSDE expects square A and C");
  require(b.rows() == n && b.cols() == 1 && sigma.rows() == n && sigma.cols() == 1 &&
              lambda.rows() == n && lambda.cols() == 1,
          ErrorKind::kDimension, "vector BSDE expects n x 1 forcing terms");
  require(KL.value.rows == n && KL.value.cols == n, ErrorKind::kDimension,
          "matrix solution has the wrong size");
  require(KL.value.steps == bundle.steps_per_period &&
              std::abs(KL.value.tau - bundle.tau) <= 1e-12 * bundle.tau,
          ErrorKind::kDimension, "matrix solution lives on a different grid");
  const bool det = resolve_deterministic(
      opts.mode, !A.path_dependent() && !C.path_dependent() && !b.path_dependent() &&
                     !sigma.path_dependent() && !lambda.path_dependent() && KL.deterministic);
  BackwardSweeper sweeper(bundle, opts.basis, det);
  const CoefficientGrid gA(A, sweeper), gC(C, sweeper);

  // Source K b + C^T K sigma + L sigma + lambda, fixed across iterations.
  const CoefficientFn Kfn = field_as_coefficient(KL.value, "K");
  const CoefficientFn Lfn = field_as_coefficient(KL.integrand, "L");
  const CoefficientFn src = CoefficientFn::custom(
      combined_kind({Kfn.kind(), Lfn.kind(), C.kind(), b.kind(), sigma.kind(), lambda.kind()}),
      n, 1, 0.0,
      [Kfn, Lfn, C, b, sigma, lambda](double phase, const PathPrefix& pre, Eigen::Ref<Mat> out) {
        const Mat K = Kfn.evaluate(phase, pre);
        const Mat s = sigma.evaluate(phase, pre);
        out = K * b.evaluate(phase, pre) + C.evaluate(phase, pre).transpose() * (K * s) +
              Lfn.evaluate(phase, pre) * s + lambda.evaluate(phase, pre);
      },
      "eta-source");
  const CoefficientGrid gS(src, sweeper);
  DriftFn drift = [&](const SweepPoint& pt, const Mat& eta, const Mat& zeta,
                      Eigen::Ref<Mat> out) {
    out.noalias() = gA.at(pt.node, pt.path).transpose() * eta;
    out.noalias() += gC.at(pt.node, pt.path).transpose() * zeta;
    out += gS.at(pt.node, pt.path);
  };
  BsdeOptions o = opts;
  o.positivity = Positivity::kNone;
  return iterate_fixed_point(sweeper, drift, n, 1, false, o);
}

CoefficientFn field_as_coefficient(const GridField& field, std::string label) {
  bool constant_features = true;
  for (const Mat& c : field.coef) constant_features = constant_features && c.rows() == 1;
  const CoeffKind kind =
      constant_features ? CoeffKind::kDeterministicPeriodic : CoeffKind::kPathFunctional;
  auto shared = std::make_shared<const GridField>(field);
  return CoefficientFn::custom(
      kind, field.rows, field.cols, field.bound(),
      [shared](double phase, const PathPrefix& pre, Eigen::Ref<Mat> out) {
        shared->value_into(shared->node_of_phase(phase), pre.sum, out);
      },
      std::move(label));
}

RepresentationCheck representation_check(const BsdeGridSolution& solution,
                                          const CoefficientFn& A, const CoefficientFn& C,
                                          const CoefficientFn& Lambda,
                                          const PathBundle& bundle_long, double T_max,
                                          double tol) {
  const Eigen::Index n = A.rows();
  require(T_max > 0.0, ErrorKind::kDomain, "T_max must be positive");
  const int N = bundle_long.steps_per_period;
  const double dt = bundle_long.dt();
  const auto total = static_cast<std::size_t>(std::ceil(T_max / dt - 1e-9));
  require(total <= bundle_long.steps(), ErrorKind::kDomain,
          "bundle is shorter than the representation horizon");
  const std::size_t P = bundle_long.n_paths;
  require(P >= 2, ErrorKind::kDomain, "representation check needs at least two paths");
  const auto periods = static_cast<std::size_t>(bundle_long.n_periods);
  const Eigen::Index E = n * n;

  std::vector<double> sums(P * static_cast<std::size_t>(E), 0.0);
  std::vector<double> norms(P * (periods + 1), 0.0);
  parallel_blocks(P, default_workers(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> incr(bundle_long.steps());
    Mat phi(n, n), a(n, n), c(n, n), lam(n, n), step(n, n), acc(n, n);
    for (std::size_t p = lo; p < hi; ++p) {
      bundle_long.fill_path(p, incr);
      phi.setIdentity();
      acc.setZero();
      double running = 0.0;
      for (std::size_t j = 0; j <= bundle_long.steps(); ++j) {
        const int within = static_cast<int>(j % static_cast<std::size_t>(N));
        if (within == 0) {
          running = 0.0;
          norms[p * (periods + 1) + j / static_cast<std::size_t>(N)] = phi.squaredNorm();
        }
        if (j == bundle_long.steps()) break;
        PathPrefix pre{std::span<const double>(incr.data() + (j - within),
                                               static_cast<std::size_t>(within)),
                       running};
        const double phase = bundle_long.tau * within / N;
        A.evaluate_into(phase, pre, a);
        C.evaluate_into(phase, pre, c);
        if (j < total) {
          Lambda.evaluate_into(phase, pre, lam);
          acc.noalias() += dt * (phi.transpose() * lam * phi);
        }
        const double dw = incr[j];
        step.noalias() = dt * (a * phi) + dw * (c * phi);
        phi += step;
        running += dw;
      }
      for (Eigen::Index e = 0; e < E; ++e) {
        sums[p * static_cast<std::size_t>(E) + static_cast<std::size_t>(e)] = acc(e % n, e / n);
      }
    }
  });

  RepresentationCheck out;
  out.estimate = Mat::Zero(n, n);
  out.estimate_se = Mat::Zero(n, n);
  for (Eigen::Index e = 0; e < E; ++e) {
    std::vector<double> xs(P);
    for (std::size_t p = 0; p < P; ++p) xs[p] = sums[p * static_cast<std::size_t>(E) + e];
    const Estimate est = mean_estimate(xs);
    out.estimate(e % n, e / n) = est.value;
    out.estimate_se(e % n, e / n) = est.se;
  }
  const Mat K0 = solution.value.initial();
  const double scale = K0.norm() > 0.0 ? K0.norm() : 1.0;
  out.residual = (K0 - out.estimate).norm() / scale;
  const double se_a = out.estimate_se.norm();
  const double se_b = solution.fixed_point_se.norm();
  out.residual_se = combined_se(se_a, se_b) / scale;
  out.consistent = out.residual <= 3.0 * out.residual_se;

  // Neglected tail from a decay fit of E|Phi|^2 at period ends.
  constexpr int kGroups = 20;
  std::vector<double> t;
  for (std::size_t k = 0; k <= periods; ++k) t.push_back(bundle_long.tau * k);
  std::vector<std::vector<double>> gs(kGroups, std::vector<double>(periods + 1, 0.0));
  std::vector<std::vector<double>> gq(kGroups, std::vector<double>(periods + 1, 0.0));
  std::vector<double> gc(kGroups, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    const std::size_t g = p % kGroups;
    gc[g] += 1.0;
    for (std::size_t k = 0; k <= periods; ++k) {
      const double v = norms[p * (periods + 1) + k];
      gs[g][k] += v;
      gq[g][k] += v * v;
    }
  }
  if (periods >= 2) {
    const DecayFit fit = fit_log_decay(t, gs, gq, gc);
    if (fit.lambda > 0.0) {
      out.tail_bound = Lambda.bound() * decay_tail_bound(fit.beta, fit.lambda, T_max);
      if (out.tail_bound > 0.1 * tol * scale) {
        out.warnings.push_back("truncated tail bound " + std::to_string(out.tail_bound) +
                               " exceeds tol/10");
      }
    } else {
      out.warnings.push_back("no second-moment decay detected over the horizon");
    }
  }
  return out;
}

void write_solution_csv(std::ostream& os, const BsdeGridSolution& sol) {
  const Eigen::Index R = sol.value.rows, Cc = sol.value.cols;
  const char* vname = sol.matrix_mode ? "K" : "eta";
  const char* zname = sol.matrix_mode ? "L" : "zeta";
  os << "node,t";
  for (Eigen::Index c = 0; c < Cc; ++c)
    for (Eigen::Index r = 0; r < R; ++r) os << ',' << vname << '_' << r << c;
  for (Eigen::Index c = 0; c < Cc; ++c)
    for (Eigen::Index r = 0; r < R; ++r) os << ',' << zname << '_' << r << c;
  os << ",stderr\n";
  os.precision(12);
  for (int i = 0; i <= sol.value.steps; ++i) {
    // Constant-feature coefficients, i.e. the regression mean at each node.
    const Mat& v = sol.value.coef[static_cast<std::size_t>(i)];
    const Mat& z = sol.integrand.coef[static_cast<std::size_t>(i)];
    os << i << ',' << sol.value.node_time(i);
    for (Eigen::Index e = 0; e < R * Cc; ++e) os << ',' << v(0, e);
    for (Eigen::Index e = 0; e < R * Cc; ++e) os << ',' << z(0, e);
    os << ',' << (i == 0 ? sol.se_norm() : 0.0) << '\n';
  }
}

std::string fixed_point_trace_json(const BsdeGridSolution& sol) {
  nlohmann::json j;
  j["iterations"] = sol.iterations;
  j["converged"] = sol.converged;
  j["deterministic"] = sol.deterministic;
  j["contraction_ratio"] = sol.contraction_ratio;
  j["periodic_residual"] = sol.periodic_residual;
  j["updates"] = sol.trace;
  j["stderr"] = sol.se_norm();
  nlohmann::json iters = nlohmann::json::array();
  for (const Mat& m : sol.iterates) {
    iters.push_back(std::vector<double>(m.data(), m.data() + m.size()));
  }
  j["iterates"] = iters;
  return j.dump(2);
}

}  // namespace ergolq
