#pragma once

#include <string>

#include "ergolq/coefficients.hpp"

namespace ergolq {

/// Scenario files are line-oriented `key = value` text. Blank lines and
/// `#` comments are ignored. Scalars:
///
///   name = my-scenario
///   tau = 1
///   n = 2
///   m = 1
///
/// Coefficients (A B C b sigma Q S R q rho, plus an optional stabilizer)
/// name a family followed by `key=value` parameters:
///
///   A = constant base=[-1, 0.5; -0.5, -1.5]
///   Q = sine base=[1, 0; 0, 1] amp=[0.5, 0; 0, 0] freq=1 shift=0
///   B = tanh base=[1] amp=[0.25] gain=1
///
/// Matrices are written row by row, `;` between rows. `constant [x]` is
/// accepted as shorthand for `constant base=[x]`. Missing b, sigma, S, q and
/// rho default to zero; A, B, C, Q and R are required.
PeriodicCoefficientSet parse_scenario(const std::string& text);
/// Inverse of parse_scenario; only parameterized coefficients are writable.
std::string serialize_scenario(const PeriodicCoefficientSet& set);
PeriodicCoefficientSet load_scenario_file(const std::string& path);
/// Catalog name or path to a scenario file.
PeriodicCoefficientSet resolve_scenario(const std::string& name_or_path);

std::string format_matrix(const Mat& m);
Mat parse_matrix(const std::string& text);

}  // namespace ergolq
