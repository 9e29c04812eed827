#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "ergolq/common.hpp"

namespace ergolq {

/// Counter-based standard normal draw keyed by (seed, stream, counter).
///
/// Each pair of counters (2k, 2k+1) shares one Box-Muller transform of two
/// uniforms obtained by hashing (seed, stream, k). Any draw can be produced
/// in O(1) without touching the others, so results do not depend on the
/// order in which paths or steps are visited.
inline double counter_normal(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t counter) {
  const std::uint64_t pair = counter >> 1;
  const std::uint64_t key = mix64(mix64(seed ^ 0xd1b54a32d192ed03ULL) + stream);
  const std::uint64_t h1 = mix64(key ^ mix64(2 * pair + 0x8cb92ba72f3d8dd7ULL));
  const std::uint64_t h2 = mix64(h1 + 0x9e3779b97f4a7c15ULL);
  // 53-bit uniforms; u1 in (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(h1 >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(h2 >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  return (counter & 1U) ? r * std::sin(a) : r * std::cos(a);
}

}  // namespace ergolq
