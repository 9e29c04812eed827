#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "ergolq/scenario.hpp"

namespace testing {

// Scalar scenario with constant coefficients.
struct Scalar {
  double a = -1, b_ctl = 1, c = 0, b = 0, sigma = 0, q_cost = 1, s = 0, r = 1, q = 0, rho = 0;
  double stabilizer = -1;

  ergolq::PeriodicCoefficientSet build() const {
    std::ostringstream os;
    os.precision(17);
    os << "name = scalar-test\ntau = 1\nn = 1\nm = 1\n"
       << "A = constant [" << a << "]\nB = constant [" << b_ctl << "]\nC = constant [" << c
       << "]\nb = constant [" << b << "]\nsigma = constant [" << sigma << "]\nQ = constant ["
       << q_cost << "]\nS = constant [" << s << "]\nR = constant [" << r << "]\nq = constant ["
       << q << "]\nrho = constant [" << rho << "]\nstabilizer = constant [" << stabilizer
       << "]\n";
    return ergolq::parse_scenario(os.str());
  }
};

// Positive root of (2a~ + c^2) k + q~ - k^2 b^2 / r = 0, solved directly.
inline double riccati_root(double a, double b, double c, double q, double s, double r) {
  const double at = a - b * s / r, qt = q - s * s / r;
  const double A2 = b * b / r, A1 = -(2 * at + c * c), A0 = -qt;
  if (A2 == 0.0) return -A0 / A1;
  return (-A1 + std::sqrt(A1 * A1 - 4 * A2 * A0)) / (2 * A2);
}

}  // namespace testing
