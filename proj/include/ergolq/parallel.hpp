#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ergolq {

/// Process-wide worker count used by the path-parallel engines. Results never
/// depend on it: each worker owns a contiguous block of path indices and all
/// reductions run afterwards in path order.
int default_workers();
void set_default_workers(int workers);

/// Runs body(begin, end) over a partition of [0, n) into `workers` blocks.
template <typename F>
void parallel_blocks(std::size_t n, int workers, F&& body) {
  workers = std::max(1, workers);
  if (workers == 1 || n < 2) {
    body(std::size_t{0}, n);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    const std::size_t lo = k * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, k, lo, hi] {
      try {
        body(lo, hi);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace ergolq
