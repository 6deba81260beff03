#pragma once

// Random streams and the handful of distributions the samplers need.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace pdc {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; maps (base seed, stream id) to a well-mixed engine seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// One independent engine per slot, so results do not depend on thread scheduling.
inline std::vector<Rng> make_streams(std::uint64_t seed, std::size_t n, std::uint64_t salt = 0) {
  std::vector<Rng> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(derive_seed(seed ^ salt, i));
  return out;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// InverseGamma(shape, scale): density ∝ x^{-shape-1} exp(-scale / x).
inline double inverse_gamma(Rng& rng, double shape, double scale) {
  return scale / std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline double inverse_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0)) return -INFINITY;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

inline double normal_logpdf(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
}

inline Eigen::VectorXd std_normal_vector(Rng& rng, Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = std_normal(rng);
  return z;
}

}  // namespace pdc
