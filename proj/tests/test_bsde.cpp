#include <doctest.h>

#include <cmath>

#include "ergolq/bsde.hpp"
#include "ergolq/oracle.hpp"
#include "ergolq/scenario.hpp"
#include "support.hpp"

using namespace ergolq;

namespace {

CoefficientFn cst(double v) { return CoefficientFn::constant_scalar(v); }

BsdeOptions mc() {
  BsdeOptions o;
  o.mode = SolveMode::kMonteCarlo;
  return o;
}

}  // namespace

TEST_CASE("zero drift sweep keeps a deterministic terminal") {
  Mat M(2, 2);
  M << 1.0, 0.3, 0.3, 2.0;
  const auto sol = backward_sweep([](const SweepPoint&, const Mat&, const Mat&, Eigen::Ref<Mat> out) { out.setZero(); },
                                  M, simulate_brownian(16, 1, 500, 3), RegressionBasis{});
  for (int i = 0; i <= 16; ++i) {
    CHECK((sol.value.mean_value(i) - M).norm() < 1e-10);
    CHECK(sol.integrand.mean_value(i).norm() < 1e-10);
  }
}

TEST_CASE("stationary scalar Lyapunov sweep") {
  // dK = -(2aK + 1) dt with a = -1 is stationary at K = 0.5.
  const auto sol = backward_sweep(
      [](const SweepPoint&, const Mat& next, const Mat&, Eigen::Ref<Mat> out) { out = -2.0 * next; out.array() += 1.0; },
      Mat::Constant(1, 1, 0.5), simulate_brownian(32, 1, 500, 3), RegressionBasis{});
  for (int i = 0; i <= 32; ++i) CHECK(sol.value.mean_value(i)(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("scalar Lyapunov fixed point") {
  // K (2a + c^2) + lambda = 0.
  for (auto [a, c] : {std::pair{-1.0, 0.0}, std::pair{-1.0, 1.0}}) {
    const auto sol = solve_linear_matrix_bsde(cst(a), cst(c), cst(1.0), simulate_brownian(64, 1, 1, 1));
    const double exact = -1.0 / (2 * a + c * c);
    CHECK(sol.deterministic);
    CHECK(sol.converged);
    CHECK(sol.initial()(0, 0) == doctest::Approx(exact).epsilon(0.01));
    CHECK(sol.contraction_ratio < 1.0);
  }
}

TEST_CASE("zero source gives zero solution") {
  const auto sol = solve_linear_matrix_bsde(cst(-1), cst(0.5), cst(0.0), simulate_brownian(16, 1, 200, 1), mc());
  CHECK(sol.initial().norm() == 0.0);
  CHECK(sol.fixed_point.norm() == 0.0);
  const auto eta = solve_vector_bsde(cst(-1), cst(0.5), sol, cst(0), cst(0), cst(0), simulate_brownian(16, 1, 200, 1), mc());
  CHECK(eta.initial().norm() == 0.0);
}

TEST_CASE("deterministic coefficients have negligible integrand") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  const auto sol = solve_linear_matrix_bsde(set.A, set.C, CoefficientFn::constant(Mat::Identity(2, 2)),
                                            simulate_brownian(32, 1, 4000, 4), mc());
  CHECK(sol.integrand_signal_ratio < 3.0);
}

TEST_CASE("matrix solutions are symmetric") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  const auto sol = solve_linear_matrix_bsde(set.A, set.C, set.Q, simulate_brownian(32, 1, 2000, 4), mc());
  for (int i = 0; i <= 32; ++i) CHECK(asymmetry(sol.value.mean_value(i)) <= 1e-10);
}

TEST_CASE("Monte Carlo against the periodic Lyapunov ODE") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  const auto I = CoefficientFn::constant(Mat::Identity(2, 2));
  const auto sol = solve_linear_matrix_bsde(set.A, set.C, I, simulate_brownian(64, 1, 10000, 12), mc());
  const auto ode = periodic_lyapunov_ode(set.A, set.C, I, 1.0);
  for (int i = 0; i <= 64; ++i) {
    const Mat ref = ode.at(i / 64.0);
    CHECK((sol.value.mean_value(i) - ref).norm() < 0.05 * ref.norm());
  }
}

TEST_CASE("random periodic scenario: comparison and linearity") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const auto bundle = simulate_brownian(32, 1, 4000, 21);
  const auto big = solve_linear_matrix_bsde(set.A, set.C, set.Q, bundle, mc());
  const auto one = solve_linear_matrix_bsde(set.A, set.C, cst(1.0), bundle, mc());
  // Q >= 0.5 pointwise, so K(Q) >= K(0.5) = 0.5 K(1).
  const double tol = 3 * combined_se(big.fixed_point_se(0, 0), 0.5 * one.fixed_point_se(0, 0));
  CHECK(big.initial()(0, 0) - 0.5 * one.initial()(0, 0) >= -tol);
  // Additivity on the same paths.
  const auto sum = solve_linear_matrix_bsde(
      set.A, set.C,
      CoefficientFn::custom(CoeffKind::kPathFunctional, 1, 1, 3.0,
                            [&](double ph, const PathPrefix& p, Eigen::Ref<Mat> o) {
                              set.Q.evaluate_into(ph, p, o);
                              o(0, 0) += 1.0;
                            }),
      bundle, mc());
  const double lin_tol = 3 * (sum.fixed_point_se(0, 0) + big.fixed_point_se(0, 0) + one.fixed_point_se(0, 0)) + 1e-6;
  CHECK(std::abs(sum.initial()(0, 0) - big.initial()(0, 0) - one.initial()(0, 0)) < lin_tol);
  CHECK(big.contraction_ratio < 1.0);
}

TEST_CASE("stationary vector BSDE") {
  // a eta + K b = 0 with a = -1, K = 0.5, b = 1.
  const auto K = solve_linear_matrix_bsde(cst(-1), cst(0), cst(1.0), simulate_brownian(64, 1, 1, 1));
  const auto eta = solve_vector_bsde(cst(-1), cst(0), K, cst(1), cst(0), cst(0), simulate_brownian(64, 1, 1, 1));
  CHECK(eta.initial()(0, 0) == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("representation of K as an integral of the flow") {
  const auto bundle_long = simulate_brownian(32, 12, 4000, 31);
  const auto sol = solve_linear_matrix_bsde(cst(-1), cst(0), cst(1.0), simulate_brownian(32, 1, 1, 1));
  const auto rc = representation_check(sol, cst(-1), cst(0), cst(1.0), bundle_long, 12.0);
  CHECK(rc.estimate(0, 0) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(rc.residual < 0.03);
  const auto zero = solve_linear_matrix_bsde(cst(-1), cst(0), cst(0.0), simulate_brownian(32, 1, 1, 1));
  const auto rz = representation_check(zero, cst(-1), cst(0), cst(0.0), bundle_long, 12.0);
  CHECK(rz.estimate(0, 0) == 0.0);
}

TEST_CASE("random periodic Lyapunov solution against its flow representation") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const auto sol = solve_linear_matrix_bsde(set.A, set.C, set.Q, simulate_brownian(32, 1, 4000, 41), mc());
  const auto rc = representation_check(sol, set.A, set.C, set.Q, simulate_brownian(32, 12, 4000, 42), 12.0);
  CHECK(rc.consistent);
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(solve_linear_matrix_bsde(CoefficientFn::constant(Mat::Identity(2, 2)), cst(0), cst(1),
                                           simulate_brownian(8, 1, 10, 1)),
                  Error);
}
