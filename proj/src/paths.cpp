#include "ergolq/paths.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "ergolq/parallel.hpp"
#include "ergolq/rng.hpp"

namespace ergolq {

namespace {
std::atomic<int> g_workers{1};
}

int default_workers() { return g_workers.load(); }
void set_default_workers(int workers) { g_workers.store(workers < 1 ? 1 : workers); }

double PathBundle::increment(std::size_t p, std::size_t step) const {
  const std::uint64_t abs_step =
      static_cast<std::uint64_t>(period_offset) * static_cast<std::uint64_t>(steps_per_period) +
      step;
  const double sdt = std::sqrt(dt());
  if (antithetic) {
    const double z = counter_normal(seed, p / 2, abs_step);
    return (p & 1U) ? -sdt * z : sdt * z;
  }
  return sdt * counter_normal(seed, p, abs_step);
}

void PathBundle::fill_path(std::size_t p, std::span<double> out) const {
  require(out.size() <= steps(), ErrorKind::kDimension, "fill_path output longer than bundle");
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = increment(p, j);
}

std::vector<double> PathBundle::path(std::size_t p) const {
  std::vector<double> out(steps());
  fill_path(p, out);
  return out;
}

std::vector<double> PathBundle::period_block(int period) const {
  require(period >= 0 && period < n_periods, ErrorKind::kDomain, "period outside bundle");
  const auto N = static_cast<std::size_t>(steps_per_period);
  std::vector<double> out(n_paths * N);
  const std::size_t first = static_cast<std::size_t>(period) * N;
  parallel_blocks(n_paths, default_workers(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      for (std::size_t j = 0; j < N; ++j) out[p * N + j] = increment(p, first + j);
    }
  });
  return out;
}

PathBundle PathBundle::shifted(int k) const {
  require(k >= 0 && k <= n_periods, ErrorKind::kDomain,
          "shift by " + std::to_string(k) + " periods exceeds bundle length");
  PathBundle out = *this;
  out.period_offset += k;
  out.n_periods -= k;
  return out;
}

PathBundle PathBundle::window(int first, int count) const {
  require(first >= 0 && count >= 1 && first + count <= n_periods, ErrorKind::kDomain,
          "window outside bundle");
  PathBundle out = *this;
  out.period_offset += first;
  out.n_periods = count;
  return out;
}

PathBundle PathBundle::fresh(std::uint64_t tag) const {
  PathBundle out = *this;
  out.seed = derive_seed(seed, tag);
  out.period_offset = 0;
  return out;
}

PathBundle PathBundle::with_paths(std::size_t paths) const {
  PathBundle out = *this;
  out.n_paths = paths;
  return out;
}

PathBundle PathBundle::with_periods(int periods) const {
  PathBundle out = *this;
  out.n_periods = periods;
  return out;
}

PathBundle simulate_brownian(int steps_per_period, int n_periods, std::size_t n_paths,
                             std::uint64_t seed, double tau, bool antithetic) {
  require(steps_per_period > 0 && n_periods > 0 && n_paths > 0, ErrorKind::kDomain,
          "simulate_brownian needs positive steps, periods and paths");
  require(tau > 0.0, ErrorKind::kDomain, "tau must be positive");
  require(!antithetic || n_paths % 2 == 0, ErrorKind::kDomain,
          "antithetic bundles need an even path count");
  PathBundle b;
  b.steps_per_period = steps_per_period;
  b.n_periods = n_periods;
  b.tau = tau;
  b.n_paths = n_paths;
  b.seed = seed;
  b.antithetic = antithetic;
  return b;
}

}  // namespace ergolq
