#pragma once

// Reproducible random streams and random-matrix generators used by the
// Monte Carlo machinery and the property sweeps.

#include <cstdint>
#include <random>

#include "ccrb/matlin.hpp"

namespace ccrb {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator keyed by (seed, index). Streams for different
/// indices do not depend on how the index range is split across threads.
inline Rng stream(std::uint64_t seed, std::uint64_t index) { return Rng(mix64(mix64(seed) ^ mix64(~index))); }

inline Vec gaussian_vector(Eigen::Index n, Rng& rng, double sigma = 1.0) {
  std::normal_distribution<double> normal(0.0, sigma);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

inline Mat gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

/// G G^T with G of size n x rank; PSD with the given rank (almost surely).
inline SymMat random_psd(Eigen::Index n, Eigen::Index rank, Rng& rng) {
  const Mat g = gaussian_matrix(n, rank, rng);
  return symmetrize(g * g.transpose());
}

/// Positive definite with eigenvalues bounded away from zero.
inline SymMat random_spd(Eigen::Index n, Rng& rng, double floor = 0.1) {
  const Mat g = gaussian_matrix(n, n, rng);
  return symmetrize(g * g.transpose() / static_cast<double>(n) + floor * Mat::Identity(n, n));
}

/// Haar-ish orthogonal matrix from the QR factor of a Gaussian matrix.
inline Mat random_orthogonal(Eigen::Index n, Rng& rng) {
  Eigen::HouseholderQR<Mat> qr(gaussian_matrix(n, n, rng));
  return qr.householderQ() * Mat::Identity(n, n);
}

/// Q1 diag(s) Q2 with singular values s in [0.5, 2].
inline Mat random_invertible(Eigen::Index n, Rng& rng) {
  Vec s(n);
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  for (Eigen::Index i = 0; i < n; ++i) s(i) = unif(rng);
  const Mat q1 = random_orthogonal(n, rng);
  const Mat q2 = random_orthogonal(n, rng);
  return q1 * s.asDiagonal() * q2;
}

inline int uniform_int(int lo, int hi, Rng& rng) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline double uniform_real(double lo, double hi, Rng& rng) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace ccrb
