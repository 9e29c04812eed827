#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ergolq/ergodic.hpp"
#include "ergolq/oracle.hpp"
#include "ergolq/scenario.hpp"
#include "support.hpp"

using namespace ergolq;

namespace {

CoefficientFn cst(double v) { return CoefficientFn::constant_scalar(v); }

struct Solved {
  PeriodicCoefficientSet set;
  RiccatiSolution riccati;
  BsdeGridSolution eta;
  FeedbackLaw fb;
};

Solved solve(const PeriodicCoefficientSet& set, const PathBundle& b) {
  Solved s{set, {}, {}, {}};
  s.riccati = solve_stochastic_riccati(set, find_stabilizer(set, simulate_brownian(b.steps_per_period, 6, 500, 99)), b);
  s.eta = solve_eta(set, s.riccati, b);
  s.fb = optimal_feedback(s.riccati, s.eta, set);
  return s;
}

FeedbackLaw shifted(const FeedbackLaw& f, double dTheta, double dv) {
  const auto Th = f.Theta, v = f.v;
  return {CoefficientFn::custom(Th.kind(), Th.rows(), Th.cols(), 0.0,
                                [=](double ph, const PathPrefix& p, Eigen::Ref<Mat> o) {
                                  Th.evaluate_into(ph, p, o);
                                  o.array() += dTheta;
                                }),
          CoefficientFn::custom(v.kind(), v.rows(), 1, 0.0,
                                [=](double ph, const PathPrefix& p, Eigen::Ref<Mat> o) {
                                  v.evaluate_into(ph, p, o);
                                  o.array() += dv;
                                }),
          "shifted"};
}

}  // namespace

TEST_CASE("running cost") {
  testing::Scalar s;
  const auto set = s.build();
  CHECK(evaluate_running_cost(set, Vec::Zero(1), Vec::Zero(1), 0.0, {}) == 0.0);
  CHECK(evaluate_running_cost(set, Vec::Constant(1, 2.0), Vec::Constant(1, 1.0), 0.0, {}) == doctest::Approx(5.0));
  s.s = 0.5;
  s.q = 0.25;
  s.rho = -1;
  // 4 + 2*0.5*2*1 + 1 + 2*0.25*2 + 2*(-1)*1
  CHECK(evaluate_running_cost(s.build(), Vec::Constant(1, 2.0), Vec::Constant(1, 1.0), 0.3, {}) == doctest::Approx(6.0));
}

TEST_CASE("burn-in of a homogeneous loop collapses to zero") {
  testing::Scalar s;
  s.b_ctl = 0;
  BurnInOptions o;
  o.k_burn = 20;
  o.require_stationary = false;
  o.check_contraction = false;
  const auto st = burn_in_state(s.build(), FeedbackLaw::zero(1, 1), simulate_brownian(32, 1, 200, 4),
                                Vec::Constant(1, 5.0), o);
  CHECK(st.k_burn == 20);
  CHECK(st.samples.cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("zero-cost data") {
  testing::Scalar s;
  s.q_cost = 0;
  s.b = 1;
  s.sigma = 1;
  const auto set = s.build();
  const FeedbackLaw fb = FeedbackLaw::zero(1, 1);
  const auto b = simulate_brownian(16, 1, 100, 2);
  CHECK(finite_horizon_cost(set, fb, Vec::Constant(1, 1.0), 3.0, b).estimate.value == 0.0);
  const auto st = burn_in_state(set, fb, b, Vec::Zero(1));
  CHECK(single_period_cost(set, fb, st, b.fresh(1)).estimate.value == 0.0);
}

TEST_CASE("finite horizon must be whole periods") {
  testing::Scalar s;
  CHECK_THROWS_AS(finite_horizon_cost(s.build(), FeedbackLaw::zero(1, 1), Vec::Zero(1), 2.5,
                                      simulate_brownian(16, 1, 10, 1)),
                  Error);
}

TEST_CASE("optimal feedback assembly") {
  testing::Scalar s;
  s.r = 2;
  s.rho = 0.5;
  const auto set = s.build();
  const auto b = simulate_brownian(16, 1, 1, 1);
  const auto ric = solve_stochastic_riccati(set, cst(-1), b);
  BsdeGridSolution eta = solve_eta(set, ric, b);
  for (auto& c : eta.value.coef) {
    c.setZero();
    c(0, 0) = 1.0;
  }
  const auto fb = optimal_feedback(ric, eta, set);
  CHECK(fb.v.evaluate(0.0)(0, 0) == doctest::Approx(-0.75));
  CHECK(fb.v.evaluate(0.5)(0, 0) == doctest::Approx(-0.75));
}

TEST_CASE("no inhomogeneity: zero offset and zero value") {
  testing::Scalar s;
  const auto set = s.build();
  const auto b = simulate_brownian(32, 1, 1, 1);
  const auto sv = solve(set, b);
  CHECK(sv.fb.v.evaluate(0.3)(0, 0) == 0.0);
  CHECK(sv.eta.initial().norm() == 0.0);
  CHECK(value_function(sv.riccati, sv.eta, set, simulate_brownian(32, 1, 10, 3)).estimate.value == 0.0);
}

TEST_CASE("value formula against the stationary chain") {
  const auto set = builtin_scenario("scalar-constant");
  const auto sv = solve(set, simulate_brownian(64, 1, 1, 1));
  const auto V = value_function(sv.riccati, sv.eta, set, simulate_brownian(64, 1, 100, 3));
  const double k = std::sqrt(2.0) - 1, eta = k / (1 + k);
  CHECK(std::abs(V.estimate.value - (-eta * eta + k + 2 * eta)) <= 3 * V.estimate.se);
}

TEST_CASE("reduced cost form reproduces direct integration") {
  for (const std::string name : {"scalar-random-periodic", "planar-deterministic-periodic"}) {
    const auto set = builtin_scenario(name);
    const FeedbackLaw fb{find_stabilizer(set, simulate_brownian(32, 6, 500, 1)),
                         CoefficientFn::constant(Mat::Constant(set.m, 1, 0.3)), "fb"};
    const auto b = simulate_brownian(32, 1, 500, 6);
    const auto st = burn_in_state(set, fb, b, Vec::Zero(set.n));
    const auto direct = single_period_cost(set, fb, st, b.fresh(7));
    const auto reduced = single_period_cost(set, fb, st, b.fresh(7), true);
    for (std::size_t p = 0; p < direct.per_path.size(); ++p)
      CHECK(std::abs(direct.per_path[p] - reduced.per_path[p]) <= 1e-10 * (1 + std::abs(direct.per_path[p])));
  }
}

TEST_CASE("burned-in law is stationary and phase invariant") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const FeedbackLaw fb{cst(-0.5), cst(0.2), "fb"};
  const auto b = simulate_brownian(32, 1, 8000, 8);
  const auto st = burn_in_state(set, fb, b, Vec::Zero(1));
  CHECK(st.stationary);
  CHECK(st.stationarity_z <= 3.0);
  CHECK(st.contraction.contracting);
  const auto c0 = single_period_cost(set, fb, st, b.fresh(1));
  const auto c1 = single_period_cost(set, fb, st.advanced(), b.fresh(2));
  CHECK(std::abs(c0.estimate.value - c1.estimate.value) <= 3 * combined_se(c0.estimate.se, c1.estimate.se));
}

TEST_CASE("long-run average approaches the single-period cost") {
  const auto set = builtin_scenario("scalar-constant");
  const FeedbackLaw fb{cst(-1), cst(0), "fb"};
  // Euler chain x' = x + (1 - 2x) dt + dW: mean 1/2, variance 1 / (4 (1 - dt)),
  // and F = 2 x^2 along u = -x.
  const auto b = simulate_brownian(64, 1, 20000, 5);
  const auto st = burn_in_state(set, fb, b, Vec::Zero(1));
  const auto sp = single_period_cost(set, fb, st, b.fresh(11));
  const auto j10 = finite_horizon_cost(set, fb, Vec::Zero(1), 10.0, b.fresh(12).with_paths(4000));
  const auto j50 = finite_horizon_cost(set, fb, Vec::Zero(1), 50.0, b.fresh(12).with_paths(4000));
  CHECK(std::abs(j50.estimate.value - sp.estimate.value) <= 3 * combined_se(j50.estimate.se, sp.estimate.se));
  CHECK(std::abs(j50.estimate.value - sp.estimate.value) < std::abs(j10.estimate.value - sp.estimate.value));
  const double dt = 1.0 / 64, exact = 2 * (0.25 + 0.25 / (1 - dt));
  CHECK(std::abs(sp.estimate.value - exact) <= 3 * sp.estimate.se);
}

TEST_CASE("completion of square at and away from the optimum") {
  const auto set = builtin_scenario("scalar-constant");
  const auto sv = solve(set, simulate_brownian(64, 1, 1, 1));
  const auto b = simulate_brownian(256, 1, 10000, 31);
  const auto st = burn_in_state(set, sv.fb, b, Vec::Zero(1));
  const auto at = completion_of_square_check(set, sv.fb, sv.riccati, sv.eta, st, b.fresh(1));
  CHECK(at.quadratic.value == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(at.lhs.value - at.value.value) <= 3 * combined_se(at.lhs.se, at.value.se));
  for (auto [dT, dv] : {std::pair{0.3, 0.0}, std::pair{-0.3, 0.2}}) {
    const auto fb = shifted(sv.fb, dT, dv);
    const auto st2 = burn_in_state(set, fb, b, Vec::Zero(1));
    const auto cs = completion_of_square_check(set, fb, sv.riccati, sv.eta, st2, b.fresh(2));
    CHECK(cs.min_quadratic_integrand >= 0.0);
    CHECK(cs.quadratic.value > 0.0);
    CHECK(cs.consistent(3.0));
  }
}

TEST_CASE("optimality scan on the constant scalar problem") {
  const auto set = builtin_scenario("scalar-constant");
  const auto sv = solve(set, simulate_brownian(64, 1, 1, 1));
  const auto scan = optimality_scan(set, sv.riccati, sv.eta, gain_perturbations(Mat::Ones(1, 1), {-0.2, -0.1, 0, 0.1, 0.2}),
                                    simulate_brownian(64, 1, 5000, 3), simulate_brownian(64, 1, 5000, 4));
  CHECK(scan.min_at_zero);
  CHECK(scan.kappa.lo() > 0);
  for (const auto& r : scan.rows) {
    CHECK(r.stable);
    CHECK(r.cost.value >= scan.value.value - 3 * combined_se(r.cost.se, scan.value.se));
  }
  std::ostringstream os;
  write_scan_csv(os, scan);
  CHECK(os.str().rfind("epsilon,cost,stderr,stable_flag", 0) == 0);
  // A destabilizing perturbation is recorded, not fatal.
  const auto wild = optimality_scan(set, sv.riccati, sv.eta, gain_perturbations(Mat::Ones(1, 1), {0, 3.0}),
                                    simulate_brownian(64, 1, 500, 3), simulate_brownian(64, 1, 500, 4));
  CHECK_FALSE(wild.rows[1].stable);
}

TEST_CASE("report JSON carries all estimates") {
  const auto set = builtin_scenario("scalar-constant");
  const auto sv = solve(set, simulate_brownian(32, 1, 1, 1));
  ErgodicOptions o;
  o.longrun_periods = 10;
  const auto rep = ergodic_report(set, sv.fb, simulate_brownian(32, 1, 2000, 2), &sv.riccati, &sv.eta, o);
  const std::string j = ergodic_report_json(rep);
  CHECK(j.find("\"cost_longrun\"") != std::string::npos);
  CHECK(j.find("\"cost_single_period\"") != std::string::npos);
  CHECK(j.find("\"value_V\"") != std::string::npos);
  CHECK(rep.value.has_value());
}
