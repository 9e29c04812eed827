#include <doctest.h>

#include <cmath>

#include "ergolq/oracle.hpp"
#include "ergolq/riccati.hpp"
#include "ergolq/scenario.hpp"
#include "support.hpp"

using namespace ergolq;

namespace {

CoefficientFn cst(double v) { return CoefficientFn::constant_scalar(v); }

RiccatiOptions mc_opts() {
  RiccatiOptions o;
  o.bsde.mode = SolveMode::kMonteCarlo;
  return o;
}

void check_descent(const RiccatiSolution& sol, bool oracle_mode) {
  for (std::size_t k = 1; k < sol.trace.size(); ++k) {
    const auto& prev = sol.trace[k - 1];
    const auto& step = sol.trace[k];
    const double slack = 1e-6 + (oracle_mode ? 0.0 : 3 * combined_se(prev.K0_se.norm(), step.K0_se.norm()));
    CHECK(step.descent_margin >= -slack);
  }
}

}  // namespace

TEST_CASE("Kleinman iteration for the constant scalar problem") {
  const auto sol = kleinman_solve(cst(-1), cst(0), cst(1), cst(1), cst(1), cst(-1), simulate_brownian(64, 1, 1, 1));
  const double k = testing::riccati_root(-1, 1, 0, 1, 0, 1);
  CHECK(k == doctest::Approx(std::sqrt(2.0) - 1));
  CHECK(sol.converged);
  CHECK(sol.deterministic);
  CHECK(sol.K0()(0, 0) == doctest::Approx(k).epsilon(1e-4));
  CHECK(sol.Theta0.evaluate(0.0)(0, 0) == doctest::Approx(-k).epsilon(1e-4));
  check_descent(sol, true);
}

TEST_CASE("Kleinman iteration with multiplicative noise") {
  testing::Scalar s;
  s.c = 1;
  const auto set = s.build();
  const auto sol = solve_stochastic_riccati(set, cst(-1), simulate_brownian(64, 1, 1, 1));
  CHECK(sol.K0()(0, 0) == doctest::Approx(testing::riccati_root(-1, 1, 1, 1, 0, 1)).epsilon(1e-3));
  check_descent(sol, true);
}

TEST_CASE("cross-term reduction arithmetic") {
  testing::Scalar s;
  const auto plain = reduce_cross_term(s.build());
  CHECK(plain.identity);
  CHECK(plain.A_tilde.evaluate(0.3)(0, 0) == s.build().A.evaluate(0.3)(0, 0));
  s.r = 2;
  s.s = 0.5;
  CHECK(reduce_cross_term(s.build()).A_tilde.evaluate(0.0)(0, 0) == doctest::Approx(-1.25));
  s.s = 1;
  CHECK(reduce_cross_term(s.build()).Q_tilde.evaluate(0.0)(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("gain assembly") {
  testing::Scalar s;
  s.r = 2;
  s.s = 0.5;
  const auto set = s.build();
  GridField K = GridField::zeros(1, 1, 4, 1.0, RegressionBasis{});
  for (auto& c : K.coef) c(0, 0) = 2.0;
  const auto Theta = feedback_gain(set, K);
  CHECK(Theta.evaluate(0.0)(0, 0) == doctest::Approx(-1.25));
  CHECK(Theta.evaluate(0.6)(0, 0) == doctest::Approx(-1.25));
}

TEST_CASE("zero cross term is the plain Kleinman solve") {
  const auto set = builtin_scenario("scalar-random-periodic");
  auto noS = set;
  noS.S = CoefficientFn::zeros(1, 1);
  const auto b = simulate_brownian(16, 1, 500, 3);
  const auto a = solve_stochastic_riccati(noS, cst(0), b);
  const auto k = kleinman_solve(noS.A, noS.C, noS.B, noS.Q, noS.R, cst(0), b);
  CHECK(a.K0()(0, 0) == k.K0()(0, 0));
  CHECK(a.outer_iterations == k.outer_iterations);
}

TEST_CASE("cross-term reduction matches the reduced Kleinman solve") {
  testing::Scalar s;
  s.s = 0.3;
  s.r = 1.5;
  const auto set = s.build();
  const auto b = simulate_brownian(64, 1, 1, 1);
  const auto full = solve_stochastic_riccati(set, cst(-1), b);
  const auto red = reduce_cross_term(set);
  const auto direct = kleinman_solve(red.A_tilde, set.C, set.B, red.Q_tilde, set.R, cst(-1 + 0.3 / 1.5), b);
  for (int i = 0; i <= 64; ++i)
    CHECK(full.KL.value.mean_value(i)(0, 0) == doctest::Approx(direct.KL.value.mean_value(i)(0, 0)).epsilon(1e-9));
  const double k = testing::riccati_root(-1, 1, 0, 1, 0.3, 1.5);
  CHECK(full.K0()(0, 0) == doctest::Approx(k).epsilon(1e-3));
  CHECK(full.Theta0.evaluate(0.0)(0, 0) == doctest::Approx(-(k + 0.3) / 1.5).epsilon(1e-3));
}

TEST_CASE("deterministic planar solve against the Riccati ODE") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  const auto ode = periodic_riccati_ode(set);
  const auto det = solve_stochastic_riccati(set, *set.stabilizer, simulate_brownian(64, 1, 1, 1));
  CHECK(det.deterministic);
  check_descent(det, true);
  const auto mc = solve_stochastic_riccati(set, *set.stabilizer, simulate_brownian(64, 1, 10000, 5), mc_opts());
  CHECK_FALSE(mc.deterministic);
  check_descent(mc, false);
  for (int i = 0; i <= 64; ++i) {
    const Mat ref = ode.at(i / 64.0);
    CHECK((det.KL.value.mean_value(i) - ref).norm() < 0.05 * ref.norm());
    CHECK((mc.KL.value.mean_value(i) - ref).norm() < 0.05 * ref.norm());
  }
  CHECK(min_eigenvalue(det.K0()) > 0);
  const auto res = riccati_residual(det, set, simulate_brownian(64, 1, 50, 9));
  CHECK(res.normalized < 1e-6);

  // Another stabilizer reaches the same fixed point.
  const auto other = solve_stochastic_riccati(set, CoefficientFn::constant(Mat::Constant(1, 2, -0.5)),
                                              simulate_brownian(64, 1, 1, 1));
  CHECK((other.K0() - det.K0()).norm() < 1e-5);

  // One linear solve with Theta = Theta0 returns K.
  const CoefficientFn Th = det.Theta0;
  const CoefficientFn Acl = CoefficientFn::custom(
      CoeffKind::kDeterministicPeriodic, 2, 2, 0.0, [&](double ph, const PathPrefix& p, Eigen::Ref<Mat> o) {
        o = set.A.evaluate(ph, p) + set.B.evaluate(ph, p) * Th.evaluate(ph, p);
      });
  const CoefficientFn src = CoefficientFn::custom(
      CoeffKind::kDeterministicPeriodic, 2, 2, 0.0, [&](double ph, const PathPrefix& p, Eigen::Ref<Mat> o) {
        const Mat t = Th.evaluate(ph, p);
        o = set.Q.evaluate(ph, p) + t.transpose() * set.R.evaluate(ph, p) * t;
      });
  const auto lin = solve_linear_matrix_bsde(Acl, set.C, src, simulate_brownian(64, 1, 1, 1));
  CHECK((lin.initial() - det.K0()).norm() < 1e-4 * det.K0().norm());
}

TEST_CASE("zero solution leaves a residual of order Q dt") {
  testing::Scalar s;
  const auto set = s.build();
  auto sol = solve_stochastic_riccati(set, cst(-1), simulate_brownian(32, 1, 1, 1));
  sol.KL.value = GridField::zeros(1, 1, 32, 1.0, sol.KL.value.basis);
  sol.KL.integrand = GridField::zeros(1, 1, 32, 1.0, sol.KL.integrand.basis);
  const auto res = riccati_residual(sol, set, simulate_brownian(32, 1, 10, 2));
  CHECK(res.raw == doctest::Approx(1.0 / 32).epsilon(1e-9));
}

TEST_CASE("random periodic Monte Carlo solve") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const auto b = simulate_brownian(32, 1, 4000, 17);
  const auto sol = solve_stochastic_riccati(set, cst(0), b);
  CHECK_FALSE(sol.deterministic);
  CHECK(sol.converged);
  check_descent(sol, false);
  CHECK(sol.K0()(0, 0) > 0);
  const auto res = riccati_residual(sol, set, simulate_brownian(32, 1, 4000, 18));
  CHECK(res.normalized < 3 * res.floor);
  CHECK(stabilizer_check(sol.Theta0, set, simulate_brownian(32, 6, 1000, 19)).stable());
  // Different stabilizing initializer, same paths.
  const auto other = solve_stochastic_riccati(set, cst(-1), b);
  CHECK(std::abs(other.K0()(0, 0) - sol.K0()(0, 0)) < 3 * combined_se(other.K0_se()(0, 0), sol.K0_se()(0, 0)) + 1e-9);
}

TEST_CASE("optimal gains of the deterministic catalog scenarios stabilize") {
  for (const std::string name : {"scalar-constant", "scalar-noisy", "planar-deterministic-periodic"}) {
    const auto set = builtin_scenario(name);
    const auto sol = solve_stochastic_riccati(set, *set.stabilizer, simulate_brownian(64, 1, 1, 1));
    CHECK_MESSAGE(stabilizer_check(sol.Theta0, set, simulate_brownian(64, 6, 1000, 3)).stable(), name);
  }
}

TEST_CASE("initializer must stabilize") {
  testing::Scalar s;
  CHECK_THROWS_AS(solve_stochastic_riccati(s.build(), cst(3.0), simulate_brownian(32, 1, 1, 1)), Error);
}
