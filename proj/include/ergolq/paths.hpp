#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ergolq/common.hpp"

namespace ergolq {

/// A seeded ensemble of discretized Brownian paths on a uniform grid that
/// covers an integer number of periods.
///
/// Increments are not stored: increment(p, j) is a pure function of
/// (seed, p, absolute step), so a bundle is a cheap value that can be
/// copied, shifted by whole periods, or split across workers freely.
struct PathBundle {
  int steps_per_period = 64;
  int n_periods = 1;
  double tau = 1.0;
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
  bool antithetic = false;
  /// Whole periods dropped from the front (theta shift of the bundle).
  int period_offset = 0;

  double dt() const { return tau / steps_per_period; }
  std::size_t steps() const {
    return static_cast<std::size_t>(steps_per_period) * static_cast<std::size_t>(n_periods);
  }
  std::size_t nodes() const { return steps() + 1; }

  /// Increment of path p over step j (j relative to this view).
  double increment(std::size_t path, std::size_t step) const;
  void fill_path(std::size_t path, std::span<double> out) const;
  std::vector<double> path(std::size_t p) const;
  /// Increments of one period of every path, row-major [path][step].
  std::vector<double> period_block(int period) const;

  /// View that starts k periods later (the discrete theta_{k tau}).
  PathBundle shifted(int k) const;
  /// View of `count` periods starting at `first`.
  PathBundle window(int first, int count) const;
  /// Independent bundle of identical shape keyed by a derived seed.
  PathBundle fresh(std::uint64_t tag) const;
  PathBundle with_paths(std::size_t paths) const;
  PathBundle with_periods(int periods) const;
};

PathBundle simulate_brownian(int steps_per_period, int n_periods, std::size_t n_paths,
                             std::uint64_t seed, double tau = 1.0, bool antithetic = false);

}  // namespace ergolq
