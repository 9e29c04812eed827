#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ergolq/coefficients.hpp"

namespace ergolq {

struct AcceptanceConfig {
  std::uint64_t seed = 7;
  /// Multiplies every nominal path count (A1 and A2 keep their stated counts).
  double path_scale = 1.0;
};

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  std::string summary;       // one line of measured numbers
  std::string details_json;  // criterion-specific JSON object
  double seconds = 0.0;
};

/// The acceptance criteria A1..A10 with shared intermediate solves. Each
/// criterion runs at its own scenario and tolerance; the scenario-level
/// checks (contraction, three-way agreement) take any scenario.
class AcceptanceSuite {
 public:
  explicit AcceptanceSuite(AcceptanceConfig cfg = {});
  ~AcceptanceSuite();
  AcceptanceSuite(const AcceptanceSuite&) = delete;
  AcceptanceSuite& operator=(const AcceptanceSuite&) = delete;

  static std::vector<std::string> ids();
  /// Runs one of A1..A10; errors become failed results.
  CriterionResult run(const std::string& id);
  /// A9 on a single scenario.
  CriterionResult contraction(const PeriodicCoefficientSet& set);
  /// Long-run, single-period and value estimates at the optimum agree
  /// pairwise within 3 combined SE.
  CriterionResult agreement(const PeriodicCoefficientSet& set);

 private:
  struct Cache;
  AcceptanceConfig cfg_;
  std::unique_ptr<Cache> cache_;
};

/// "A3 PASS  Riccati correctness (constant case): ..." style line.
std::string format_result_line(const CriterionResult& r);
/// {"schema": ..., "passed": ..., "criteria": [...]}
std::string suite_json(const std::vector<CriterionResult>& results, const std::string& scenario,
                       std::uint64_t seed);

}  // namespace ergolq
