// One line per acceptance criterion; exit status 1 when any fails.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "ergolq/acceptance.hpp"

int main(int argc, char** argv) {
  ergolq::AcceptanceConfig cfg;
  std::string json_out;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--seed" && i + 1 < argc) cfg.seed = std::strtoull(argv[++i], nullptr, 10);
    else if (a == "--json" && i + 1 < argc) json_out = argv[++i];
  }
  ergolq::AcceptanceSuite suite(cfg);
  std::vector<ergolq::CriterionResult> results;
  int failed = 0;
  for (const auto& id : ergolq::AcceptanceSuite::ids()) {
    results.push_back(suite.run(id));
    std::cout << ergolq::format_result_line(results.back()) << std::endl;
    failed += results.back().passed ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << "\n";
  if (!json_out.empty()) std::ofstream(json_out) << ergolq::suite_json(results, "catalog", cfg.seed);
  return failed ? 1 : 0;
}
