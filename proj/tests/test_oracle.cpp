#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ergolq/oracle.hpp"
#include "ergolq/scenario.hpp"
#include "support.hpp"

using namespace ergolq;

TEST_CASE("explicit second moment of the scalar flow") {
  CHECK(explicit_phi_moment_1d(-1.0, 0.0, 1.0) == doctest::Approx(0.135335283));
  CHECK(explicit_phi_moment_1d(-1.0, 1.0, 2.0) == doctest::Approx(0.135335283));
  CHECK(explicit_phi_moment_1d(-0.875, 0.5, 1.0) == doctest::Approx(0.223130160));
  // int_0^1 2(-2 + sin 2 pi s) ds = -4 over a whole period.
  const double pi = std::numbers::pi;
  const double m = explicit_phi_moment_1d([&](double s) { return -2 + std::sin(2 * pi * s); },
                                          [](double) { return 0.0; }, 1.0);
  CHECK(m == doctest::Approx(std::exp(-4.0)).epsilon(1e-8));
}

TEST_CASE("algebraic scalar Riccati equation") {
  CHECK(algebraic_riccati_scalar(-1, 1, 0, 1, 0, 1) == doctest::Approx(std::sqrt(2.0) - 1));
  CHECK(algebraic_riccati_scalar(-1, 1, 1, 1, 0, 1) == doctest::Approx((std::sqrt(5.0) - 1) / 2));
  CHECK(algebraic_riccati_scalar(-1, 0, 0, 1, 0, 1) == doctest::Approx(0.5));
  for (double s : {0.0, 0.2, 0.7})
    CHECK(algebraic_riccati_scalar(-0.4, 1.3, 0.6, 2, s, 1.7) ==
          doctest::Approx(testing::riccati_root(-0.4, 1.3, 0.6, 2, s, 1.7)));
}

TEST_CASE("periodic Riccati ODE with constant coefficients") {
  testing::Scalar s;
  s.c = 0.5;
  s.s = 0.2;
  const auto set = s.build();
  const auto ode = periodic_riccati_ode(set);
  const double k = testing::riccati_root(-1, 1, 0.5, 1, 0.2, 1);
  const double at = -1 - 0.2, qt = 1 - 0.04;
  for (const Mat& v : ode.values) {
    CHECK(std::abs(v(0, 0) - k) < 1e-9);
    CHECK(std::abs((2 * at + 0.25) * v(0, 0) + qt - v(0, 0) * v(0, 0)) < 1e-8);
  }
  s.q_cost = 0;
  s.s = 0;
  for (const Mat& v : periodic_riccati_ode(s.build()).values) CHECK(v.norm() == 0.0);
}

TEST_CASE("periodic ODE grid refinement") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  ShootingOptions coarse, fine;
  coarse.nodes_per_period = 512;
  fine.nodes_per_period = 1024;
  const auto a = periodic_riccati_ode(set, coarse);
  const auto b = periodic_riccati_ode(set, fine);
  CHECK(a.periodic_residual < 1e-10);
  for (int i = 0; i <= 512; ++i)
    CHECK((a.values[i] - b.values[2 * i]).norm() < 1e-9 * b.values[2 * i].norm());
}

TEST_CASE("eta ODE for the constant chain") {
  const auto set = builtin_scenario("scalar-constant");
  const auto K = periodic_riccati_ode(set);
  const auto eta = periodic_linear_ode_eta(set, K);
  for (const Mat& v : eta.values) CHECK(v(0, 0) == doctest::Approx(1 - std::sqrt(0.5)).epsilon(1e-9));
  testing::Scalar zero;
  const auto z = periodic_linear_ode_eta(zero.build(), periodic_riccati_ode(zero.build()));
  for (const Mat& v : z.values) CHECK(v.norm() == 0.0);
}

TEST_CASE("stationary scalar chain") {
  const auto c = stationary_scalar_chain(builtin_scenario("scalar-constant"));
  const double k = std::sqrt(2.0) - 1;
  // Closed loop -1 - k; eta (1 + k) = k; V = -eta^2 + k + 2 eta.
  const double eta = k / (1 + k);
  CHECK(c.K == doctest::Approx(k));
  CHECK(c.Theta == doctest::Approx(-k));
  CHECK(c.eta == doctest::Approx(eta));
  CHECK(c.v == doctest::Approx(-eta));
  CHECK(c.V == doctest::Approx(-eta * eta + k + 2 * eta));
  CHECK_THROWS_AS(stationary_scalar_chain(builtin_scenario("scalar-random-periodic")), Error);
}

TEST_CASE("Lyapunov ODE matches the constant solution") {
  const auto ode = periodic_lyapunov_ode(CoefficientFn::constant_scalar(-1), CoefficientFn::constant_scalar(0.5),
                                         CoefficientFn::constant_scalar(2), 1.0);
  for (const Mat& v : ode.values) CHECK(v(0, 0) == doctest::Approx(2 / 1.75).epsilon(1e-9));
}
