#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "ergolq/coefficients.hpp"

namespace ergolq {

/// E|Phi_t|^2 = exp(int_0^t (2a + c^2) ds) for scalar deterministic a, c.
double explicit_phi_moment_1d(const std::function<double(double)>& a,
                              const std::function<double(double)>& c, double t);
double explicit_phi_moment_1d(double a, double c, double t);

/// Positive root of (2a~ + c^2) k + q~ - k^2 b^2 / r = 0 with a~ = a - b s / r,
/// q~ = q - s^2 / r.
double algebraic_riccati_scalar(double a, double b, double c, double q, double s, double r);

/// Stationary optimal chain of a constant scalar scenario: K from the
/// algebraic Riccati equation, eta from the linear balance
/// A_cl eta + K b + c K sigma + q + Theta rho = 0, and the value
/// V = -(B eta + rho)^2 / R + K sigma^2 + 2 eta b.
struct ScalarChain {
  double K = 0.0;
  double Theta = 0.0;
  double eta = 0.0;
  double v = 0.0;
  double V = 0.0;
};
ScalarChain stationary_scalar_chain(const PeriodicCoefficientSet& set);

/// Node values of a periodic solution on a fine grid.
struct OdeSolution {
  double tau = 1.0;
  int nodes_per_period = 1024;
  std::vector<Mat> values;  // nodes_per_period + 1 entries, t_i = i tau / N
  double periodic_residual = 0.0;
  int shooting_iterations = 0;

  double node_time(int i) const { return tau * i / nodes_per_period; }
  /// Linear interpolation in phase.
  Mat at(double phase) const;
};

struct ShootingOptions {
  int nodes_per_period = 1024;
  double tol = 1e-10;
  int max_iter = 20000;
};

/// Periodic solution of K' = -(K A~ + A~^T K + C^T K C + Q~ - K B R^-1 B^T K)
/// by RK4 backward over one period inside a fixed point on the terminal value.
OdeSolution periodic_riccati_ode(const PeriodicCoefficientSet& set,
                                 const ShootingOptions& opts = {});

/// Periodic solution of K' = -(K A + A^T K + C^T K C + Lambda).
OdeSolution periodic_lyapunov_ode(const CoefficientFn& A, const CoefficientFn& C,
                                  const CoefficientFn& Lambda, double tau,
                                  const ShootingOptions& opts = {});

/// Periodic eta with eta' = -(A_cl^T eta + K b + C^T K sigma + q + Theta^T rho),
/// A_cl = A + B Theta, Theta = -R^-1 (B^T K + S). K is integrated alongside
/// from the terminal value of `K`, so RK4 stages see exact K values.
OdeSolution periodic_linear_ode_eta(const PeriodicCoefficientSet& set, const OdeSolution& K,
                                    const ShootingOptions& opts = {});

/// CSV with columns t and the entries of each node value (column-major).
void write_ode_csv(std::ostream& os, const OdeSolution& sol);

}  // namespace ergolq
