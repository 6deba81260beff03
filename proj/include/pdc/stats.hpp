#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace pdc {

/// log(sum(exp(v))) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

/// Normalized weights from log-weights. Returns false if every weight is zero.
inline bool normalize_log_weights(std::span<const double> logw, std::span<double> w) {
  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) return false;
  double total = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    w[i] = std::exp(logw[i] - lse);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return true;
}

/// Weighted mean of the columns of `x` (d x M).
inline Eigen::VectorXd weighted_mean(const Eigen::MatrixXd& x, std::span<const double> w) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.rows());
  for (Eigen::Index m = 0; m < x.cols(); ++m) mean += w[static_cast<std::size_t>(m)] * x.col(m);
  return mean;
}

/// sum_m W_m (x_m - mean)(x_m - mean)^T, no small-sample correction.
inline Eigen::MatrixXd weighted_covariance(const Eigen::MatrixXd& x, std::span<const double> w,
                                           const Eigen::VectorXd& mean) {
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(x.rows(), x.rows());
  for (Eigen::Index m = 0; m < x.cols(); ++m) {
    const double wm = w[static_cast<std::size_t>(m)];
    if (wm == 0.0) continue;
    const Eigen::VectorXd d = x.col(m) - mean;
    cov.noalias() += wm * d * d.transpose();
  }
  return 0.5 * (cov + cov.transpose());
}

/// Welford accumulator for an unweighted running mean and covariance.
class RunningMoments {
 public:
  explicit RunningMoments(Eigen::Index dim = 0)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

  void push(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_.noalias() += d * (x - mean_).transpose();
  }

  std::size_t count() const { return n_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Sample covariance with (n-1) denominator.
  Eigen::MatrixXd covariance() const {
    if (n_ < 2) return Eigen::MatrixXd::Zero(mean_.size(), mean_.size());
    Eigen::MatrixXd c = m2_ / static_cast<double>(n_ - 1);
    return 0.5 * (c + c.transpose());
  }

 private:
  std::size_t n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
};

}  // namespace pdc
