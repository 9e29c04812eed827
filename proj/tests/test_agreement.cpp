#include <doctest.h>

#include "ergolq/acceptance.hpp"
#include "ergolq/scenario.hpp"

using namespace ergolq;

TEST_CASE("long-run, single-period and value estimates agree at the optimum") {
  AcceptanceSuite suite;
  for (const auto& name : catalog_names()) {
    const auto r = suite.agreement(builtin_scenario(name));
    INFO(r.summary);
    CHECK_MESSAGE(r.passed, name);
  }
}
