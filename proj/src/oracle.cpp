#include "ergolq/oracle.hpp"

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace ergolq {

namespace {

using Rhs = std::function<void(double t, const Mat& y, Mat& dy)>;

double wrap(double t, double tau) {
  double p = std::fmod(t, tau);
  if (p < 0.0) p += tau;
  if (p >= tau) p = 0.0;
  return p;
}

// Integrates y' = -F(t, y) from t = tau down to t = 0 with classical RK4 and
// stores y at every node.
std::vector<Mat> integrate_backward(const Rhs& F, const Mat& terminal, double tau, int N) {
  const double h = tau / N;
  std::vector<Mat> ys(static_cast<std::size_t>(N) + 1);
  Mat y = terminal, k1, k2, k3, k4;
  ys[static_cast<std::size_t>(N)] = y;
  for (int i = N; i > 0; --i) {
    const double t = tau * i / N;
    // In reversed time s = tau - t the equation reads dy/ds = F.
    F(t, y, k1);
    F(t - 0.5 * h, y + 0.5 * h * k1, k2);
    F(t - 0.5 * h, y + 0.5 * h * k2, k3);
    F(t - h, y + h * k3, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    ys[static_cast<std::size_t>(i - 1)] = y;
  }
  return ys;
}

OdeSolution shoot(const Rhs& F, const Mat& start, double tau, const ShootingOptions& opts,
                  const std::function<double(const Mat&, const Mat&)>& distance) {
  require(opts.nodes_per_period >= 2, ErrorKind::kDomain, "need at least two ODE nodes");
  OdeSolution sol;
  sol.tau = tau;
  sol.nodes_per_period = opts.nodes_per_period;
  Mat terminal = start;
  for (int it = 1; it <= opts.max_iter; ++it) {
    auto ys = integrate_backward(F, terminal, tau, opts.nodes_per_period);
    const Mat& y0 = ys.front();
    if (!y0.allFinite() || max_abs_entry(y0) > 1e12) {
      fail(ErrorKind::kConvergence, "shooting diverged after " + std::to_string(it) +
                                        " iterations (data not stabilizable?)");
    }
    const double res = distance(y0, terminal);
    if (res < opts.tol) {
      sol.values = std::move(ys);
      sol.shooting_iterations = it;
      sol.periodic_residual = distance(sol.values.front(), sol.values.back());
      return sol;
    }
    terminal = y0;
  }
  fail(ErrorKind::kConvergence,
       "shooting did not converge in " + std::to_string(opts.max_iter) + " iterations");
}

void require_deterministic(std::initializer_list<const CoefficientFn*> fns) {
  for (const auto* f : fns) {
    require(!f->path_dependent(), ErrorKind::kDomain,
            "ODE oracle needs deterministic coefficients, got path-functional " + f->label());
  }
}

}  // namespace

double explicit_phi_moment_1d(const std::function<double(double)>& a,
                              const std::function<double(double)>& c, double t) {
  require(t >= 0.0, ErrorKind::kDomain, "time must be nonnegative");
  if (t == 0.0) return 1.0;
  auto g = [&](double s) {
    const double cs = c(s);
    return 2.0 * a(s) + cs * cs;
  };
  const double integral =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(g, 0.0, t, 20, 1e-14);
  return std::exp(integral);
}

double explicit_phi_moment_1d(double a, double c, double t) {
  require(t >= 0.0, ErrorKind::kDomain, "time must be nonnegative");
  return std::exp((2.0 * a + c * c) * t);
}

double algebraic_riccati_scalar(double a, double b, double c, double q, double s, double r) {
  require(r > 0.0, ErrorKind::kDomain, "r must be positive");
  const double at = a - b * s / r;
  const double qt = q - s * s / r;
  require(qt > 0.0, ErrorKind::kDomain, "q - s^2/r must be positive");
  const double g = 2.0 * at + c * c;
  if (b == 0.0) {
    require(g < 0.0, ErrorKind::kDomain, "no positive root: uncontrolled and unstable");
    return -qt / g;
  }
  const double w = b * b / r;
  return (g + std::sqrt(g * g + 4.0 * w * qt)) / (2.0 * w);
}

ScalarChain stationary_scalar_chain(const PeriodicCoefficientSet& set) {
  set.validate_shapes();
  require(set.n == 1 && set.m == 1, ErrorKind::kDimension, "scalar chain needs n = m = 1");
  for (const CoefficientFn* f : {&set.A, &set.B, &set.C, &set.b, &set.sigma, &set.Q, &set.S,
                                 &set.R, &set.q, &set.rho}) {
    require(f->kind() == CoeffKind::kConstant, ErrorKind::kDomain,
            "scalar chain needs constant coefficients, got " + f->label());
  }
  auto c = [](const CoefficientFn& f) { return f.evaluate(0.0)(0, 0); };
  const double a = c(set.A), B = c(set.B), C = c(set.C), b = c(set.b), sg = c(set.sigma);
  const double q = c(set.Q), s = c(set.S), r = c(set.R), ql = c(set.q), rho = c(set.rho);
  ScalarChain out;
  out.K = algebraic_riccati_scalar(a, B, C, q, s, r);
  out.Theta = -(B * out.K + s) / r;
  const double acl = a + B * out.Theta;
  require(acl != 0.0, ErrorKind::kDomain, "closed-loop drift vanishes");
  out.eta = -(out.K * b + C * out.K * sg + ql + out.Theta * rho) / acl;
  const double w = B * out.eta + rho;
  out.v = -w / r;
  out.V = -w * w / r + out.K * sg * sg + 2.0 * out.eta * b;
  return out;
}

Mat OdeSolution::at(double phase) const {
  const double x = wrap(phase, tau) / tau * nodes_per_period;
  const int i = std::min(static_cast<int>(std::floor(x)), nodes_per_period - 1);
  const double w = x - i;
  return (1.0 - w) * values[static_cast<std::size_t>(i)] +
         w * values[static_cast<std::size_t>(i) + 1];
}

OdeSolution periodic_riccati_ode(const PeriodicCoefficientSet& set, const ShootingOptions& opts) {
  set.validate_shapes();
  require_deterministic({&set.A, &set.B, &set.C, &set.Q, &set.S, &set.R});
  const double tau = set.tau;
  Rhs F = [&set, tau](double t, const Mat& K, Mat& out) {
    const double p = wrap(t, tau);
    const Mat A = set.A.evaluate(p), B = set.B.evaluate(p), C = set.C.evaluate(p);
    const Mat Q = set.Q.evaluate(p), S = set.S.evaluate(p), R = set.R.evaluate(p);
    const Eigen::LDLT<Mat> r(R);
    const Mat At = A - B * r.solve(S);
    const Mat Qt = Q - S.transpose() * r.solve(S);
    const Mat BK = B.transpose() * K;
    out = K * At + At.transpose() * K + C.transpose() * K * C + Qt - BK.transpose() * r.solve(BK);
    out = symmetrize(out);
  };
  return shoot(F, Mat::Zero(set.n, set.n), tau, opts,
               [](const Mat& x, const Mat& y) { return (x - y).norm(); });
}

OdeSolution periodic_lyapunov_ode(const CoefficientFn& A, const CoefficientFn& C,
                                  const CoefficientFn& Lambda, double tau,
                                  const ShootingOptions& opts) {
  require_deterministic({&A, &C, &Lambda});
  const Eigen::Index n = A.rows();
  require(A.cols() == n && C.rows() == n && C.cols() == n && Lambda.rows() == n &&
              Lambda.cols() == n,
          ErrorKind::kDimension, "Lyapunov oracle expects square coefficients of equal size");
  Rhs F = [&, tau](double t, const Mat& K, Mat& out) {
    const double p = wrap(t, tau);
    const Mat a = A.evaluate(p), c = C.evaluate(p);
    out = K * a + a.transpose() * K + c.transpose() * K * c + Lambda.evaluate(p);
    out = symmetrize(out);
  };
  return shoot(F, Mat::Zero(n, n), tau, opts,
               [](const Mat& x, const Mat& y) { return (x - y).norm(); });
}

OdeSolution periodic_linear_ode_eta(const PeriodicCoefficientSet& set, const OdeSolution& K,
                                    const ShootingOptions& opts) {
  set.validate_shapes();
  require_deterministic(
      {&set.A, &set.B, &set.C, &set.b, &set.sigma, &set.S, &set.R, &set.q, &set.rho});
  require(!K.values.empty() && K.values.back().rows() == set.n, ErrorKind::kDimension,
          "K oracle has the wrong size");
  const double tau = set.tau;
  const Eigen::Index n = set.n;
  // State [K | eta], n x (n + 1).
  Rhs F = [&set, tau, n](double t, const Mat& Y, Mat& out) {
    const double p = wrap(t, tau);
    const Mat K = Y.leftCols(n);
    const Vec eta = Y.col(n);
    const Mat A = set.A.evaluate(p), B = set.B.evaluate(p), C = set.C.evaluate(p);
    const Mat Q = set.Q.evaluate(p), S = set.S.evaluate(p), R = set.R.evaluate(p);
    const Eigen::LDLT<Mat> r(R);
    const Mat At = A - B * r.solve(S);
    const Mat Qt = Q - S.transpose() * r.solve(S);
    const Mat BK = B.transpose() * K;
    const Mat Theta = -r.solve(BK + S);
    const Mat Acl = A + B * Theta;
    const Mat s = set.sigma.evaluate(p);
    out.resize(n, n + 1);
    out.leftCols(n) = symmetrize(K * At + At.transpose() * K + C.transpose() * K * C + Qt -
                                 BK.transpose() * r.solve(BK));
    out.col(n) = Acl.transpose() * eta + K * set.b.evaluate(p) + C.transpose() * K * s +
                 set.q.evaluate(p) + Theta.transpose() * set.rho.evaluate(p);
  };
  Mat start(n, n + 1);
  start.leftCols(n) = K.values.back();
  start.col(n).setZero();
  ShootingOptions o = opts;
  o.nodes_per_period = K.nodes_per_period;
  OdeSolution joint = shoot(F, start, tau, o, [n](const Mat& x, const Mat& y) {
    return (x.col(n) - y.col(n)).norm();
  });
  OdeSolution out = joint;
  for (auto& v : out.values) v = Mat(v.col(n));
  return out;
}

void write_ode_csv(std::ostream& os, const OdeSolution& sol) {
  os << "t";
  if (!sol.values.empty()) {
    const Mat& v = sol.values.front();
    for (Eigen::Index c = 0; c < v.cols(); ++c)
      for (Eigen::Index r = 0; r < v.rows(); ++r) os << ",v_" << r << c;
  }
  os << '\n';
  os.precision(15);
  for (int i = 0; i <= sol.nodes_per_period; ++i) {
    os << sol.node_time(i);
    const Mat& v = sol.values[static_cast<std::size_t>(i)];
    for (Eigen::Index e = 0; e < v.size(); ++e) os << ',' << v(e % v.rows(), e / v.rows());
    os << '\n';
  }
}

}  // namespace ergolq
