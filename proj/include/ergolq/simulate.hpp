#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ergolq/parallel.hpp"
#include "ergolq/sde.hpp"

namespace ergolq {

/// Outcome of a path-by-path closed-loop simulation.
struct PathRunStatus {
  std::vector<std::uint8_t> overflowed;
  std::vector<std::size_t> overflow_node;
  std::size_t overflow_count() const {
    std::size_t c = 0;
    for (auto o : overflowed) c += o;
    return c;
  }
};

/// Explicit Euler-Maruyama driver shared by every forward estimator.
///
/// For each path, visit(path, node, frame, x) is called at every node
/// 0..steps with the coefficients of that node already loaded (the final
/// node sees phase 0 of the next period with an empty prefix) and the state
/// before the step. With `homogeneous` set, b, sigma and v are dropped.
/// `init(path, x)` writes the initial state. Paths are split into contiguous
/// blocks across workers; visitors must only write per-path slots.
template <typename Init, typename Visitor>
PathRunStatus run_closed_loop_paths(const PeriodicCoefficientSet& set,
                                    const FeedbackLaw& feedback, const PathBundle& bundle,
                                    Eigen::Index state_cols, bool homogeneous,
                                    double overflow_threshold, Init&& init,
                                    Visitor&& visit) {
  set.validate_shapes();
  require(feedback.Theta.rows() == set.m && feedback.Theta.cols() == set.n,
          ErrorKind::kDimension,
          "feedback gain has shape " +
              shape_str(feedback.Theta.rows(), feedback.Theta.cols()) + ", expected " +
              shape_str(set.m, set.n));
  require(feedback.v.rows() == set.m && feedback.v.cols() == 1, ErrorKind::kDimension,
          "feedback offset must be m x 1");
  require(std::abs(bundle.tau - set.tau) <= 1e-12 * set.tau, ErrorKind::kDimension,
          "bundle period differs from coefficient period");
  const std::size_t P = bundle.n_paths;
  const int N = bundle.steps_per_period;
  const std::size_t steps = bundle.steps();
  const double dt = bundle.dt();
  PathRunStatus status;
  status.overflowed.assign(P, 0);
  status.overflow_node.assign(P, 0);

  parallel_blocks(P, default_workers(), [&](std::size_t lo, std::size_t hi) {
    CoefficientFrame frame(set, feedback, N);
    std::vector<double> incr(steps);
    const Eigen::Index n = set.n;
    Mat x(n, state_cols), drift(n, state_cols), diff(n, state_cols), acl(n, n);
    Vec forcing(n);
    for (std::size_t p = lo; p < hi; ++p) {
      bundle.fill_path(p, incr);
      init(p, x);
      double running = 0.0;
      for (std::size_t j = 0; j <= steps; ++j) {
        const int within = static_cast<int>(j % static_cast<std::size_t>(N));
        if (within == 0) running = 0.0;
        const std::size_t start = j - static_cast<std::size_t>(within);
        PathPrefix prefix{std::span<const double>(incr.data() + start,
                                                  static_cast<std::size_t>(within)),
                          running};
        frame.load(within, prefix);
        visit(p, j, frame, static_cast<const Mat&>(x));
        if (j == steps) break;
        const double dw = incr[j];
        acl.noalias() = frame[CoefficientFrame::kB] * frame[CoefficientFrame::kTheta];
        acl += frame[CoefficientFrame::kA];
        drift.noalias() = acl * x;
        diff.noalias() = frame[CoefficientFrame::kC] * x;
        if (!homogeneous) {
          forcing.noalias() = frame[CoefficientFrame::kB] * frame[CoefficientFrame::kV];
          forcing += frame[CoefficientFrame::kb];
          drift.colwise() += forcing;
          diff.colwise() += frame[CoefficientFrame::kSigma].col(0);
        }
        x += dt * drift + dw * diff;
        running += dw;
        if (!x.allFinite() || x.cwiseAbs().maxCoeff() > overflow_threshold) {
          status.overflowed[p] = 1;
          status.overflow_node[p] = j + 1;
          break;
        }
      }
    }
  });
  return status;
}

}  // namespace ergolq
