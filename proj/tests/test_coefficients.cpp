#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ergolq/coefficients.hpp"
#include "ergolq/scenario.hpp"
#include "support.hpp"

using namespace ergolq;

TEST_CASE("constant coefficient ignores phase and path") {
  const auto f = CoefficientFn::constant_scalar(2.0);
  const double incr[] = {0.3, -0.1};
  CHECK(eval_coeff(f, 0.0, {}, 1.0, 4)(0, 0) == 2.0);
  CHECK(eval_coeff(f, 0.5, incr, 1.0, 4)(0, 0) == 2.0);
}

TEST_CASE("sine coefficient at a quarter period") {
  const auto f = CoefficientFn::sine(Mat::Constant(1, 1, -2.0), Mat::Constant(1, 1, 1.0), 1, 0.0, 1.0);
  const double incr[] = {0.0};
  CHECK(eval_coeff(f, 0.25, incr, 1.0, 4)(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(f.kind() == CoeffKind::kDeterministicPeriodic);
}

TEST_CASE("tanh coefficient of a prefix summing to zero") {
  const auto f = CoefficientFn::tanh_of_increments(Mat::Constant(1, 1, -1.0), Mat::Constant(1, 1, 0.5), 1.0);
  const double incr[] = {0.4, -0.4};
  CHECK(eval_coeff(f, 0.5, incr, 1.0, 4)(0, 0) == doctest::Approx(-1.0));
  const double up[] = {0.4, 0.6};
  CHECK(eval_coeff(f, 0.5, up, 1.0, 4)(0, 0) == doctest::Approx(-1.0 + 0.5 * std::tanh(1.0)));
}

TEST_CASE("checked evaluation rejects a prefix that does not match the phase") {
  const auto f = CoefficientFn::constant_scalar(1.0);
  const double incr[] = {0.1};
  CHECK_THROWS_AS(eval_coeff(f, 0.5, incr, 1.0, 4), Error);
  CHECK_THROWS_AS(eval_coeff(f, 1.0, {}, 1.0, 4), Error);
}

TEST_CASE("theta shift drops whole periods") {
  const std::vector<double> p = {0.1, -0.2, 0.3, 0.4};
  CHECK(theta_shift(p, 0, 2) == p);
  CHECK(theta_shift(p, 1, 2) == std::vector<double>{0.3, 0.4});
  CHECK_THROWS(theta_shift(p, 3, 2));
}

TEST_CASE("evaluation on a shifted path equals evaluation at the later absolute time") {
  const auto set = builtin_scenario("scalar-random-periodic");
  std::vector<double> path(4 * 8);
  for (std::size_t i = 0; i < path.size(); ++i) path[i] = 0.3 * std::sin(1.7 * i + 0.2);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto shifted = theta_shift(path, k, 8);
    for (std::size_t node = 0; node < 8; ++node) {
      const Mat a = eval_at_node(set.A, shifted, node, 8, 1.0);
      const Mat b = eval_at_node(set.A, path, node + 8 * k, 8, 1.0);
      CHECK(a(0, 0) == b(0, 0));
    }
  }
}

TEST_CASE("evaluations are deterministic") {
  const auto set = builtin_scenario("scalar-random-periodic");
  const double incr[] = {0.2, -0.7, 0.1};
  const Mat x = eval_coeff(set.Q, 0.375, incr, 1.0, 8);
  const Mat y = eval_coeff(set.Q, 0.375, incr, 1.0, 8);
  CHECK(x(0, 0) == y(0, 0));
}

TEST_CASE("catalog scenarios") {
  const auto sc = builtin_scenario("scalar-constant");
  CHECK(sc.n == 1);
  CHECK(sc.m == 1);
  CHECK(sc.deterministic());
  for (const auto* f : {&sc.A, &sc.B, &sc.C, &sc.Q, &sc.R})
    CHECK(f->kind() == CoeffKind::kConstant);
  const auto planar = builtin_scenario("planar-deterministic-periodic");
  CHECK(planar.n == 2);
  CHECK(planar.m == 1);
  CHECK(planar.tau == 1.0);
  CHECK_THROWS_AS(builtin_scenario("no-such-scenario"), Error);
}

TEST_CASE("random periodic scenario reads only the current period") {
  const auto set = builtin_scenario("scalar-random-periodic");
  CHECK_FALSE(set.deterministic());
  for (const auto* f : {&set.A, &set.B, &set.C, &set.b, &set.sigma, &set.Q, &set.q})
    CHECK(check_within_period_dependence(*f, set.tau, 16, 200, 3));
  // A coefficient that looks back into the previous period fails the check.
  const auto leaky = CoefficientFn::custom(
      CoeffKind::kPathFunctional, 1, 1, 1.0,
      [](double, const PathPrefix& p, Eigen::Ref<Mat> o) {
        o(0, 0) = p.increments.empty() ? 0.0 : std::tanh(*(p.increments.data() - 1));
      },
      "leaky");
  CHECK_FALSE(check_within_period_dependence(leaky, 1.0, 16, 200, 3));
}

TEST_CASE("positivity margins") {
  for (const auto& name : catalog_names()) {
    const auto rep = check_positivity(builtin_scenario(name), 500, 11);
    CHECK_MESSAGE(rep.passed, name);
    CHECK(rep.margin_R >= 1e-6);
    CHECK(rep.margin_QSRS >= 1e-6);
  }
  auto set = builtin_scenario("planar-deterministic-periodic");
  set.m = 2;
  set.B = CoefficientFn::constant(Mat::Identity(2, 2));
  set.S = CoefficientFn::zeros(2, 2);
  set.rho = CoefficientFn::zeros(2, 1);
  set.R = CoefficientFn::constant(Mat::Identity(2, 2));
  set.stabilizer.reset();
  CHECK(check_positivity(set, 50, 1).margin_R == doctest::Approx(1.0));
  Mat R(2, 2);
  R << 2, 0, 0, 0.5;
  set.R = CoefficientFn::constant(R);
  CHECK(check_positivity(set, 50, 1).margin_R == doctest::Approx(0.5));

  testing::Scalar s;
  s.s = 1;
  const auto rep = check_positivity(s.build(), 50, 1);
  CHECK(rep.margin_QSRS == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(rep.passed);
}

TEST_CASE("scenario text round trip") {
  for (const auto& name : catalog_names()) {
    const auto set = builtin_scenario(name);
    const auto again = parse_scenario(serialize_scenario(set));
    CHECK(serialize_scenario(again) == serialize_scenario(set));
    const double incr[] = {0.3, -0.5};
    CHECK(eval_coeff(again.A, 0.25, incr, 1.0, 8) == eval_coeff(set.A, 0.25, incr, 1.0, 8));
  }
  CHECK_THROWS_AS(parse_scenario("name = x\ntau = 1\nn = 1\nm = 1\nA = wobble [1]\n"), Error);
  CHECK_THROWS_AS(parse_scenario("name = x\ntau = 1\nn = 2\nm = 1\nA = constant [1]\n"), Error);
}

TEST_CASE("bound check") {
  const auto f = CoefficientFn::tanh_of_increments(Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, 0.5), 2.0);
  CHECK(check_bound(f, 1.0, 16, 300, 5));
  const auto liar = CoefficientFn::custom(CoeffKind::kConstant, 1, 1, 0.5,
                                          [](double, const PathPrefix&, Eigen::Ref<Mat> o) { o(0, 0) = 1.0; });
  CHECK_FALSE(check_bound(liar, 1.0, 16, 10, 5));
}
