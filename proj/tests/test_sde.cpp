#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ergolq/parallel.hpp"
#include "ergolq/riccati.hpp"
#include "ergolq/scenario.hpp"
#include "ergolq/sde.hpp"
#include "support.hpp"

using namespace ergolq;

TEST_CASE("Brownian bundle is a pure function of seed and sizes") {
  const auto a = simulate_brownian(16, 3, 50, 42);
  const auto b = simulate_brownian(16, 3, 50, 42);
  const auto c = simulate_brownian(16, 3, 50, 43);
  CHECK(a.path(7) == b.path(7));
  CHECK(a.path(7) != c.path(7));
  CHECK(a.path(7).size() == 48u);
  // Shifting by one period is the discrete theta shift.
  const auto s = a.shifted(1);
  CHECK(s.path(7) == theta_shift(a.path(7), 1, 16));
  // Variance dt per increment.
  const auto big = simulate_brownian(4, 1, 20000, 1);
  double m2 = 0;
  for (std::size_t p = 0; p < big.n_paths; ++p) m2 += std::pow(big.increment(p, 2), 2);
  CHECK(m2 / big.n_paths == doctest::Approx(0.25).epsilon(0.04));
}

TEST_CASE("results do not depend on the number of workers") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const auto bundle = simulate_brownian(16, 2, 301, 9);
  const FeedbackLaw fb{CoefficientFn::constant_scalar(-0.5), CoefficientFn::constant_scalar(0.1), "fb"};
  set_default_workers(1);
  const auto one = simulate_closed_loop(set, fb, Mat::Constant(1, 1, 0.3), bundle);
  set_default_workers(5);
  const auto five = simulate_closed_loop(set, fb, Mat::Constant(1, 1, 0.3), bundle);
  set_default_workers(0);
  CHECK(one.values == five.values);
}

TEST_CASE("zero drift and diffusion keep the identity") {
  testing::Scalar s;
  s.a = 0;
  s.c = 0;
  s.b_ctl = 0;
  const auto traj = simulate_fundamental(s.build(), nullptr, simulate_brownian(8, 2, 5, 1));
  for (std::size_t p = 0; p < traj.n_paths; ++p)
    for (std::size_t r = 0; r < traj.records(); ++r) CHECK(traj.at(p, r)(0, 0) == 1.0);
}

TEST_CASE("noiseless scalar fundamental solution against the exponential") {
  testing::Scalar s;
  s.a = -1;
  const int N = 256;
  const auto traj = simulate_fundamental(s.build(), nullptr, simulate_brownian(N, 1, 3, 1));
  const double phi = traj.at(0, traj.records() - 1)(0, 0);
  // Euler recursion exactly, and e^{-1} within O(dt).
  CHECK(phi == doctest::Approx(std::pow(1.0 - 1.0 / N, N)).epsilon(1e-12));
  CHECK(std::abs(phi - std::exp(-1.0)) < 1.0 / N);
}

TEST_CASE("second moment of a multiplicative-noise scalar") {
  testing::Scalar s;
  s.a = -1;
  s.c = 0.5;
  s.b_ctl = 0;
  const auto traj = simulate_fundamental(s.build(), nullptr, simulate_brownian(64, 1, 40000, 5));
  const auto rows = moment_table(traj);
  const auto& last = rows.back();
  const double exact = std::exp((2 * -1.0 + 0.25) * 1.0);
  CHECK(std::abs(last.second_moment - exact) < std::max(0.02 * exact, 3 * last.stderr_));
}

TEST_CASE("closed loop with zero data stays at zero") {
  testing::Scalar s;
  const auto set = s.build();
  const auto traj = simulate_closed_loop(set, FeedbackLaw::zero(1, 1), Mat::Zero(1, 1),
                                         simulate_brownian(8, 3, 10, 2));
  for (double v : traj.values) CHECK(v == 0.0);
}

TEST_CASE("variation of constants with a constant forcing") {
  testing::Scalar s;
  s.b = 1;
  s.b_ctl = 0;
  const auto traj = simulate_closed_loop(s.build(), FeedbackLaw::zero(1, 1), Mat::Zero(1, 1),
                                         simulate_brownian(256, 10, 2, 2));
  const double x10 = traj.at(0, traj.records() - 1)(0, 0);
  CHECK(std::abs(x10 - 1.0) < 1e-3);
  CHECK(std::abs(x10 - (1.0 - std::exp(-10.0))) < 1e-3);
}

TEST_CASE("fundamental solution is covariant under the theta shift") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const FeedbackLaw fb{CoefficientFn::constant_scalar(-0.3), CoefficientFn::zeros(1, 1), "fb"};
  const auto full_b = simulate_brownian(16, 3, 4, 77);
  const auto full = simulate_fundamental(set, &fb, full_b);
  const int k = 1;
  const auto part = simulate_fundamental(set, &fb, full_b.shifted(k).with_periods(2));
  for (std::size_t p = 0; p < 4; ++p) {
    const double phi_k = full.at(p, full.record_of(16 * k))(0, 0);
    for (std::size_t j = 0; j <= 32; ++j) {
      const double expect = full.at(p, full.record_of(16 * k + j))(0, 0) / phi_k;
      const double got = part.at(p, part.record_of(j))(0, 0);
      CHECK(std::abs(got - expect) <= 1e-10 * std::abs(expect));
    }
  }
}

TEST_CASE("closed-loop state is affine in the forcing") {
  auto set = builtin_scenario("planar-deterministic-periodic");
  const auto bundle = simulate_brownian(16, 2, 6, 4);
  const CoefficientFn Th = CoefficientFn::constant(Mat::Constant(1, 2, -0.2));
  Mat x0(2, 1);
  x0 << 0.7, -0.4;
  Mat v1(1, 1), v2(1, 1);
  v1 << 0.3;
  v2 << -1.1;
  const FeedbackLaw f12{Th, CoefficientFn::constant(v1 + v2), "f12"};
  const FeedbackLaw f1{Th, CoefficientFn::constant(v1), "f1"};
  const FeedbackLaw f2{Th, CoefficientFn::constant(v2), "f2"};
  const auto a = simulate_closed_loop(set, f12, x0, bundle);
  const auto b = simulate_closed_loop(set, f1, x0, bundle);
  auto homog = set;
  homog.b = CoefficientFn::zeros(2, 1);
  homog.sigma = CoefficientFn::zeros(2, 1);
  const auto c = simulate_closed_loop(homog, f2, Mat::Zero(2, 1), bundle);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(a.values[i] == doctest::Approx(b.values[i] + c.values[i]).epsilon(1e-12).scale(1.0));
}

TEST_CASE("stabilized closed loop has bounded moments") {
  const auto set = builtin_scenario("planar-deterministic-periodic");
  const FeedbackLaw fb{*set.stabilizer, CoefficientFn::zeros(1, 1), "stab"};
  Mat x0(2, 1);
  x0 << 2.0, -1.0;
  SimulationOptions so;
  so.record_stride = 16;
  const auto traj = simulate_closed_loop(set, fb, x0, simulate_brownian(16, 10, 2000, 8), so);
  const auto rows = moment_table(traj);
  double late = 0, early = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) (r < rows.size() / 2 ? early : late) += rows[r].second_moment;
  CHECK(late <= early + 1e-12);
  const auto phi = simulate_fundamental(set, &fb, simulate_brownian(16, 10, 2000, 8));
  const auto rep = estimate_second_moment_decay(phi);
  CHECK(rep.stable());
  CHECK(rep.lambda_hat > 0);
}

TEST_CASE("decay rate of a known scalar") {
  testing::Scalar s;
  s.a = -1;
  s.c = 0.5;
  s.b_ctl = 0;
  const auto phi = simulate_fundamental(s.build(), nullptr, simulate_brownian(128, 8, 20000, 3));
  const auto rep = estimate_second_moment_decay(phi);
  // Euler: E X_{j+1}^2 = ((1 - dt)^2 + c^2 dt) E X_j^2; exact rate 2|a| - c^2.
  const double dt = 1.0 / 128, euler = -128 * std::log(std::pow(1 - dt, 2) + 0.25 * dt);
  CHECK(std::abs(rep.lambda_hat - euler) < 3 * rep.lambda_se);
  CHECK(rep.lambda_hat == doctest::Approx(1.75).epsilon(0.02));
  CHECK(rep.stable());
}

TEST_CASE("stabilizer check separates signs") {
  testing::Scalar s;
  const auto set = s.build();
  const auto bundle = simulate_brownian(32, 6, 500, 2);
  CHECK_FALSE(stabilizer_check(CoefficientFn::constant_scalar(2.0), set, bundle).stable());
  CHECK(stabilizer_check(CoefficientFn::constant_scalar(-1.0), set, bundle).stable());
  testing::Scalar nb;
  nb.b_ctl = 0;
  for (double th : {-5.0, 0.0, 5.0})
    CHECK(stabilizer_check(CoefficientFn::constant_scalar(th), nb.build(), bundle).stable());
}

TEST_CASE("overflowing paths are counted") {
  testing::Scalar s;
  s.a = 40;
  s.b_ctl = 0;
  SimulationOptions so;
  so.overflow_threshold = 1e6;
  const auto traj = simulate_fundamental(s.build(), nullptr, simulate_brownian(16, 4, 20, 1), so);
  CHECK(traj.overflow_count == 20u);
  CHECK(traj.first_overflow_node.has_value());
}

TEST_CASE("Gram lower bound of scalar examples") {
  testing::Scalar s;
  s.b_ctl = 0;
  s.c = 0;
  const auto d0 = estimate_gram_lower_bound(s.build(), nullptr, simulate_brownian(32, 12, 400, 5),
                                            {0.0, 0.5}, 12.0);
  CHECK(d0.delta_hat == doctest::Approx(0.5).epsilon(0.03));
  s.c = 1;
  const auto d1 = estimate_gram_lower_bound(s.build(), nullptr, simulate_brownian(32, 12, 4000, 5),
                                            {0.0, 0.5}, 12.0);
  CHECK(std::abs(d1.delta_hat - 1.0) < std::max(0.1, 3 * d1.delta_se));
}

TEST_CASE("contraction of a stabilized loop") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const FeedbackLaw fb{find_stabilizer(set, simulate_brownian(32, 6, 500, 1)), CoefficientFn::zeros(1, 1), "s"};
  const auto bundle = simulate_brownian(32, 10, 1000, 6);
  const auto rep = contraction_check(set, fb, Vec::Zero(1), Vec::Ones(1), bundle);
  CHECK(rep.contracting);
  CHECK(rep.slope_per_period < 0);
  const auto same = simulate_difference(set, fb, Vec::Ones(1), Vec::Ones(1), bundle);
  for (double v : same.values) CHECK(v == 0.0);
}

TEST_CASE("trajectory and moment CSV columns") {
  testing::Scalar s;
  const auto traj = simulate_fundamental(s.build(), nullptr, simulate_brownian(4, 1, 3, 1));
  std::ostringstream a, b;
  write_trajectory_csv(a, traj, 2);
  write_moments_csv(b, traj);
  CHECK(a.str().rfind("path_id,node_index,t,", 0) == 0);
  CHECK(b.str().rfind("t,mean,second_moment,stderr", 0) == 0);
}
