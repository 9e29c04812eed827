#include "ergolq/sde.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ergolq/bsde.hpp"
#include "ergolq/simulate.hpp"

namespace ergolq {

CoefficientFrame::CoefficientFrame(const PeriodicCoefficientSet& set,
                                   const FeedbackLaw& feedback, int steps)
    : fns_{set.A, set.B, set.C,   set.b, set.sigma,     set.Q,
           set.S, set.R, set.q,   set.rho, feedback.Theta, feedback.v},
      tau_(set.tau),
      steps_(steps) {
  cache_.resize(kSlots);
  scratch_.resize(kSlots);
  view_.resize(kSlots, nullptr);
  for (std::size_t k = 0; k < kSlots; ++k) {
    const CoefficientFn& f = fns_[k];
    scratch_[k].resize(f.rows(), f.cols());
    if (!f.path_dependent()) {
      cache_[k].reserve(static_cast<std::size_t>(steps));
      for (int i = 0; i < steps; ++i) cache_[k].push_back(f.evaluate(phase(i), PathPrefix{}));
    }
  }
}

void CoefficientFrame::load(int node, const PathPrefix& prefix) {
  const double ph = phase(node);
  node_ = node;
  prefix_ = prefix;
  for (std::size_t k = 0; k < kSlots; ++k) {
    if (!cache_[k].empty()) {
      view_[k] = &cache_[k][static_cast<std::size_t>(node)];
    } else {
      fns_[k].evaluate_into(ph, prefix, scratch_[k]);
      view_[k] = &scratch_[k];
    }
  }
}

std::size_t StateTrajectory::record_of(std::size_t node) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), node);
  require(it != nodes.end() && *it == node, ErrorKind::kDomain,
          "node " + std::to_string(node) + " was not recorded");
  return static_cast<std::size_t>(it - nodes.begin());
}

namespace {

StateTrajectory make_trajectory(const PathBundle& bundle, Eigen::Index rows,
                                Eigen::Index cols, int stride) {
  require(stride >= 1, ErrorKind::kDomain, "record stride must be positive");
  StateTrajectory t;
  t.rows = rows;
  t.cols = cols;
  t.n_paths = bundle.n_paths;
  t.steps_per_period = bundle.steps_per_period;
  t.tau = bundle.tau;
  const std::size_t steps = bundle.steps();
  for (std::size_t j = 0; j <= steps; j += static_cast<std::size_t>(stride)) {
    t.nodes.push_back(j);
  }
  if (t.nodes.back() != steps) t.nodes.push_back(steps);
  for (auto j : t.nodes) t.times.push_back(static_cast<double>(j) * bundle.dt());
  t.values.assign(t.n_paths * t.records() * t.entries(),
                  std::numeric_limits<double>::quiet_NaN());
  return t;
}

StateTrajectory run_recorded(const PeriodicCoefficientSet& set, const FeedbackLaw& feedback,
                             const PathBundle& bundle, Eigen::Index cols, bool homogeneous,
                             const std::function<void(std::size_t, Mat&)>& init,
                             const SimulationOptions& opts) {
  StateTrajectory traj = make_trajectory(bundle, set.n, cols, opts.record_stride);
  const std::size_t stride = static_cast<std::size_t>(opts.record_stride);
  const std::size_t steps = bundle.steps();
  const std::size_t last = traj.records() - 1;
  auto status = run_closed_loop_paths(
      set, feedback, bundle, cols, homogeneous, opts.overflow_threshold, init,
      [&](std::size_t p, std::size_t j, const CoefficientFrame&, const Mat& x) {
        std::size_t rec;
        if (j % stride == 0) {
          rec = j / stride;
        } else if (j == steps) {
          rec = last;
        } else {
          return;
        }
        double* dst = traj.values.data() + (p * traj.records() + rec) * traj.entries();
        std::copy(x.data(), x.data() + x.size(), dst);
      });
  traj.overflowed = std::move(status.overflowed);
  for (std::size_t p = 0; p < traj.n_paths; ++p) {
    if (traj.overflowed[p]) {
      ++traj.overflow_count;
      const std::size_t node = status.overflow_node[p];
      if (!traj.first_overflow_node || node < *traj.first_overflow_node) {
        traj.first_overflow_node = node;
      }
    }
  }
  return traj;
}

}  // namespace

StateTrajectory simulate_fundamental(const PeriodicCoefficientSet& set,
                                     const FeedbackLaw* feedback, const PathBundle& bundle,
                                     const SimulationOptions& opts) {
  const FeedbackLaw fb = feedback ? *feedback : FeedbackLaw::zero(set.m, set.n);
  const Eigen::Index n = set.n;
  return run_recorded(
      set, fb, bundle, n, /*homogeneous=*/true,
      [n](std::size_t, Mat& x) { x = Mat::Identity(n, n); }, opts);
}

StateTrajectory simulate_closed_loop(const PeriodicCoefficientSet& set,
                                     const FeedbackLaw& feedback, const Mat& x0,
                                     const PathBundle& bundle, const SimulationOptions& opts) {
  require(x0.rows() == set.n, ErrorKind::kDimension,
          "initial state has " + std::to_string(x0.rows()) + " rows, expected n=" +
              std::to_string(set.n));
  require(x0.cols() == 1 || x0.cols() == static_cast<Eigen::Index>(bundle.n_paths),
          ErrorKind::kDimension, "initial states must be n x 1 or n x n_paths");
  require(x0.allFinite(), ErrorKind::kDomain, "initial state is not finite");
  const bool shared = x0.cols() == 1;
  return run_recorded(
      set, feedback, bundle, 1, /*homogeneous=*/false,
      [&x0, shared](std::size_t p, Mat& x) {
        x = x0.col(shared ? 0 : static_cast<Eigen::Index>(p));
      },
      opts);
}

StateTrajectory simulate_difference(const PeriodicCoefficientSet& set,
                                    const FeedbackLaw& feedback, const Vec& x1, const Vec& x2,
                                    const PathBundle& bundle, const SimulationOptions& opts) {
  require(x1.size() == set.n && x2.size() == set.n, ErrorKind::kDimension,
          "initial states must have n entries");
  const Vec d = x1 - x2;
  return run_recorded(
      set, feedback, bundle, 1, /*homogeneous=*/true, [&d](std::size_t, Mat& x) { x = d; },
      opts);
}

std::vector<MomentRow> moment_table(const StateTrajectory& traj) {
  std::vector<MomentRow> rows(traj.records());
  for (std::size_t r = 0; r < traj.records(); ++r) {
    double s1 = 0.0, s2 = 0.0, s4 = 0.0, cnt = 0.0;
    for (std::size_t p = 0; p < traj.n_paths; ++p) {
      if (traj.overflowed[p]) continue;
      const auto x = traj.at(p, r);
      const double sq = x.squaredNorm();
      s1 += x(0, 0);
      s2 += sq;
      s4 += sq * sq;
      cnt += 1.0;
    }
    rows[r].t = traj.times[r];
    if (cnt > 0) {
      rows[r].mean = s1 / cnt;
      rows[r].second_moment = s2 / cnt;
      const double var = cnt > 1 ? std::max(0.0, s4 / cnt - (s2 / cnt) * (s2 / cnt)) *
                                       cnt / (cnt - 1.0)
                                 : 0.0;
      rows[r].stderr_ = std::sqrt(var / cnt);
    }
  }
  return rows;
}

namespace {

// Decay fit over the recorded nodes selected by `use`, grouping paths into
// contiguous blocks for the jackknife.
StabilityReport decay_fit(const StateTrajectory& traj, const std::vector<std::size_t>& recs,
                          int groups) {
  const std::size_t P = traj.n_paths;
  const std::size_t G = std::max<std::size_t>(1, std::min<std::size_t>(groups, P));
  const std::size_t K = recs.size();
  std::vector<std::vector<double>> sums(G, std::vector<double>(K, 0.0));
  std::vector<std::vector<double>> sq(G, std::vector<double>(K, 0.0));
  std::vector<double> counts(G, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    if (traj.overflowed[p]) continue;
    const std::size_t g = p * G / P;
    counts[g] += 1.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double v = traj.at(p, recs[k]).squaredNorm();
      sums[g][k] += v;
      sq[g][k] += v * v;
    }
  }
  std::vector<double> t(K);
  for (std::size_t k = 0; k < K; ++k) t[k] = traj.times[recs[k]];
  const DecayFit fit = fit_log_decay(t, sums, sq, counts);
  StabilityReport rep;
  rep.beta_hat = fit.beta;
  rep.lambda_hat = fit.lambda;
  rep.lambda_se = fit.lambda_se;
  rep.r2 = fit.r2;
  rep.times = t;
  rep.moments = fit.moments;
  rep.moment_se = fit.moment_se;
  rep.overflow_count = traj.overflow_count;
  return rep;
}

std::vector<std::size_t> period_end_records(const StateTrajectory& traj) {
  std::vector<std::size_t> recs;
  const auto N = static_cast<std::size_t>(traj.steps_per_period);
  for (std::size_t r = 0; r < traj.records(); ++r) {
    if (traj.nodes[r] % N == 0) recs.push_back(r);
  }
  return recs;
}

}  // namespace

StabilityReport estimate_second_moment_decay(const StateTrajectory& traj, int groups) {
  const auto recs = period_end_records(traj);
  require(recs.size() >= 4, ErrorKind::kDomain,
          "moment decay fit needs a trajectory spanning at least 3 periods with period-end "
          "nodes recorded");
  if (traj.overflow_count == traj.n_paths) {
    StabilityReport rep;
    rep.overflow_count = traj.overflow_count;
    rep.lambda_hat = -std::numeric_limits<double>::infinity();
    rep.warnings.push_back("every path overflowed");
    return rep;
  }
  return decay_fit(traj, recs, groups);
}

StabilityReport estimate_gram_lower_bound(const PeriodicCoefficientSet& set,
                                          const FeedbackLaw* feedback,
                                          const PathBundle& bundle,
                                          const std::vector<double>& r_grid, double T_max,
                                          const GramBoundOptions& opts) {
  set.validate_shapes();
  require(!r_grid.empty(), ErrorKind::kDomain, "empty r grid");
  require(T_max > 0.0, ErrorKind::kDomain, "T_max must be positive");
  const FeedbackLaw fb = feedback ? *feedback : FeedbackLaw::zero(set.m, set.n);
  const int N = bundle.steps_per_period;
  const double dt = bundle.dt();
  const Eigen::Index n = set.n;

  // G_r = E(int_r^T Psi_s^T Psi_s ds | F_r) with Psi_s = Phi_s Phi_r^-1 solves
  // dG = -(G Acl + Acl^T G + C^T G C + L C + C^T L + I) dt + L dW, G_T = 0,
  // with T = T_max rounded up to whole periods. It is swept back one period
  // at a time on the period-0 increments.
  const CoefficientFn A = set.A, B = set.B, Theta = fb.Theta;
  const CoefficientFn Acl = CoefficientFn::custom(
      combined_kind({A.kind(), B.kind(), Theta.kind()}), n, n, 0.0,
      [A, B, Theta](double phase, const PathPrefix& pre, Eigen::Ref<Mat> o) {
        o = A.evaluate(phase, pre) + B.evaluate(phase, pre) * Theta.evaluate(phase, pre);
      },
      "A+B Theta");
  const bool det = !Acl.path_dependent() && !set.C.path_dependent();
  const BackwardSweeper sweeper(bundle, opts.basis, det);
  const CoefficientGrid gA(Acl, sweeper), gC(set.C, sweeper);
  const DriftFn drift = [&](const SweepPoint& pt, const Mat& G, const Mat& L, Eigen::Ref<Mat> out) {
    const auto a = gA.at(pt.node, pt.path);
    const auto c = gC.at(pt.node, pt.path);
    out.noalias() = G * a;
    out.noalias() += a.transpose() * G;
    out.noalias() += c.transpose() * G * c;
    out.noalias() += L * c;
    out.noalias() += c.transpose() * L;
    out += Mat::Identity(n, n);
  };
  const int periods = std::max(1, static_cast<int>(std::ceil(T_max / set.tau - 1e-9)));
  Mat terminal = Mat::Zero(n, n);
  BackwardSweeper::Result res;
  for (int k = 0; k < periods; ++k) {
    res = sweeper.sweep(drift, terminal, true);
    terminal = res.value.initial();
  }

  StabilityReport rep;
  rep.delta_hat = std::numeric_limits<double>::infinity();
  rep.delta_se = res.pathwise_se.norm();
  Mat G(n, n);
  for (double r : r_grid) {
    require(r >= 0.0 && r < set.tau, ErrorKind::kDomain, "r outside [0, tau)");
    const auto node = static_cast<int>(std::llround(r / dt));
    require(std::abs(node * dt - r) < 1e-9, ErrorKind::kDomain,
            "r = " + std::to_string(r) + " is not a grid node");
    for (std::size_t p = 0; p < sweeper.paths(); ++p) {
      res.value.value_into(node, sweeper.partial_sum(p, node), G);
      rep.delta_hat = std::min(rep.delta_hat, min_eigenvalue(G));
    }
  }
  rep.delta_hat = std::max(0.0, rep.delta_hat);

  // Decay of the r = 0 flow to judge the truncation of the integral.
  if (bundle.n_periods >= 3) {
    SimulationOptions so;
    so.record_stride = N;
    const auto traj = simulate_fundamental(set, &fb, bundle, so);
    try {
      const StabilityReport decay = estimate_second_moment_decay(traj);
      rep.beta_hat = decay.beta_hat;
      rep.lambda_hat = decay.lambda_hat;
      rep.lambda_se = decay.lambda_se;
      if (decay.lambda_hat <= 0.0 || T_max < opts.decay_times / decay.lambda_hat) {
        rep.warnings.push_back("T_max below " + std::to_string(opts.decay_times) +
                               " decay times; truncation bound " +
                               std::to_string(decay_tail_bound(decay.beta_hat,
                                                               decay.lambda_hat, T_max)));
      }
    } catch (const Error& e) {
      rep.warnings.push_back(std::string("decay fit failed: ") + e.what());
    }
  }
  return rep;
}

ContractionReport contraction_check(const PeriodicCoefficientSet& set,
                                    const FeedbackLaw& feedback, const Vec& x1,
                                    const Vec& x2, const PathBundle& bundle) {
  require((x1 - x2).norm() > 0.0, ErrorKind::kDomain,
          "contraction check needs distinct initial states");
  SimulationOptions so;
  so.record_stride = bundle.steps_per_period;
  const auto traj = simulate_difference(set, feedback, x1, x2, bundle, so);
  ContractionReport out;
  out.fit = estimate_second_moment_decay(traj);
  out.slope_per_period = -out.fit.lambda_hat * set.tau;
  out.slope_se_per_period = out.fit.lambda_se * set.tau;
  out.contracting = out.fit.overflow_count == 0 &&
                    out.slope_per_period + 1.96 * out.slope_se_per_period < 0.0;
  if (!out.contracting) out.fit.warnings.push_back("non-decreasing difference: instability");
  return out;
}

void write_trajectory_csv(std::ostream& os, const StateTrajectory& traj,
                          std::size_t max_paths) {
  os << "path_id,node_index,t";
  for (std::size_t e = 0; e < traj.entries(); ++e) os << ",x" << e;
  os << '\n';
  const std::size_t P = max_paths == 0 ? traj.n_paths : std::min(max_paths, traj.n_paths);
  os.precision(17);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t r = 0; r < traj.records(); ++r) {
      os << p << ',' << traj.nodes[r] << ',' << traj.times[r];
      const auto x = traj.at(p, r);
      for (Eigen::Index e = 0; e < x.size(); ++e) os << ',' << x(e % x.rows(), e / x.rows());
      os << '\n';
    }
  }
}

void write_moments_csv(std::ostream& os, const StateTrajectory& traj) {
  os << "t,mean,second_moment,stderr\n";
  os.precision(17);
  for (const auto& row : moment_table(traj)) {
    os << row.t << ',' << row.mean << ',' << row.second_moment << ',' << row.stderr_ << '\n';
  }
}

}  // namespace ergolq
