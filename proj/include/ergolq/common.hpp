#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ergolq {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Error categories surfaced by the library. The CLI maps kConfig to exit
/// code 2 and everything else to a failed run.
enum class ErrorKind {
  kConfig,      // bad user input: unknown scenario, malformed file, bad flag
  kDimension,   // shape mismatch between coefficients, states or feedbacks
  kDomain,      // argument outside its documented range
  kNumerical,   // singular regression, overflow, lost positivity
  kConvergence  // fixed point or outer iteration did not settle
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

/// Symmetric part (M + M^T)/2.
inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Largest entry of |M - M^T|.
inline double asymmetry(const Mat& m) {
  if (m.rows() != m.cols()) return 0.0;
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
inline double min_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double max_abs_entry(const Mat& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Deterministic 64-bit mixing (SplitMix64 finalizer).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for an independent stream tagged by `tag`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(mix64(seed) ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

}  // namespace ergolq
