#pragma once

// Point estimates and k-rescaled asymptotic covariances from (weighted) samples
// of a k-cloned posterior.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/prob.hpp"
#include "pdc/stats.hpp"

namespace pdc {

struct FitSummary {
  int k = 1;
  /// Reporting-scale names (see ParamLayout::report_names).
  std::vector<std::string> names;
  /// Estimate on the reporting scale.
  Eigen::VectorXd estimate;
  /// k times the sample covariance: the asymptotic covariance of the MLE.
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se;
  Eigen::VectorXd wald_lower, wald_upper;
  /// Weighted 2.5% / 97.5% quantiles, reported for k = 1 only.
  std::optional<Eigen::VectorXd> credible_lower, credible_upper;
  /// Unscaled sample covariance on the reporting scale (the k-cloned posterior spread).
  Eigen::MatrixXd posterior_covariance;
  /// Mean and unscaled covariance on the raw parameter layout.
  Eigen::VectorXd layout_mean;
  Eigen::MatrixXd layout_covariance;
  /// Estimate mapped back onto the raw layout (used for likelihood evaluation).
  ParamVector layout_estimate;
  double loglik_at_estimate = kNegInf;
  std::size_t iterations = 0;
  std::size_t resamples = 0;
  bool degenerate = false;
};

/// Maps one raw parameter vector onto the reporting scale.
inline Eigen::VectorXd to_report_scale(const Problem& pb, const ParamVector& th) {
  Eigen::VectorXd r = th;
  for (auto p : pb.model.sign_symmetric) r[static_cast<Eigen::Index>(p)] = std::abs(r[static_cast<Eigen::Index>(p)]);
  const auto& L = pb.layout;
  for (Eigen::Index i = 0; i < L.n_sigma(); ++i)
    r[L.sigma_offset() + i] = std::exp(0.5 * th[L.sigma_offset() + i]);
  return r;
}

inline ParamVector from_report_scale(const Problem& pb, const Eigen::VectorXd& r) {
  ParamVector th = r;
  const auto& L = pb.layout;
  for (Eigen::Index i = 0; i < L.n_sigma(); ++i)
    th[L.sigma_offset() + i] = 2.0 * std::log(r[L.sigma_offset() + i]);
  return th;
}

namespace detail {

inline double weighted_quantile(std::vector<std::pair<double, double>>& vw, double q) {
  std::sort(vw.begin(), vw.end());
  double acc = 0.0;
  for (const auto& [v, w] : vw) {
    acc += w;
    if (acc >= q) return v;
  }
  return vw.back().first;
}

inline std::size_t count_distinct_columns(const Eigen::MatrixXd& x, std::span<const double> w) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index m = 0; m < x.cols(); ++m)
    if (w[static_cast<std::size_t>(m)] > 0) idx.push_back(m);
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (x(i, a) != x(i, b)) return x(i, a) < x(i, b);
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    if (i == 0 || less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

}  // namespace detail

/// Fills SEs, Wald intervals and the likelihood at the estimate from moments
/// that have already been computed.
inline FitSummary finish_summary(const Problem& pb, int k, Eigen::VectorXd report_mean,
                                 Eigen::MatrixXd report_cov, Eigen::VectorXd layout_mean,
                                 Eigen::MatrixXd layout_cov) {
  FitSummary s;
  s.k = k;
  s.names = pb.layout.report_names(pb.model);
  s.estimate = std::move(report_mean);
  s.posterior_covariance = std::move(report_cov);
  s.covariance = static_cast<double>(k) * s.posterior_covariance;
  s.se = s.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  s.wald_lower = s.estimate - 1.96 * s.se;
  s.wald_upper = s.estimate + 1.96 * s.se;
  s.layout_mean = std::move(layout_mean);
  s.layout_covariance = std::move(layout_cov);
  s.layout_estimate = from_report_scale(pb, s.estimate);
  s.loglik_at_estimate = log_likelihood(pb, s.layout_estimate);
  return s;
}

/// Weighted-sample summary: mean, k * weighted covariance (no small-sample correction).
/// `samples` is d x M on the raw layout; `w` is normalized.
inline FitSummary summarize_weighted(const Problem& pb, const Eigen::MatrixXd& samples,
                                     std::span<const double> w, int k) {
  Eigen::MatrixXd report(samples.rows(), samples.cols());
  for (Eigen::Index m = 0; m < samples.cols(); ++m)
    report.col(m) = to_report_scale(pb, samples.col(m));
  const Eigen::VectorXd rmean = weighted_mean(report, w);
  const Eigen::MatrixXd rcov = weighted_covariance(report, w, rmean);
  const Eigen::VectorXd lmean = weighted_mean(samples, w);
  const Eigen::MatrixXd lcov = weighted_covariance(samples, w, lmean);
  FitSummary s = finish_summary(pb, k, rmean, rcov, lmean, lcov);
  s.degenerate = detail::count_distinct_columns(samples, w) < 2;
  if (k == 1) {
    Eigen::VectorXd lo(report.rows()), hi(report.rows());
    std::vector<std::pair<double, double>> vw(static_cast<std::size_t>(report.cols()));
    for (Eigen::Index i = 0; i < report.rows(); ++i) {
      for (Eigen::Index m = 0; m < report.cols(); ++m)
        vw[static_cast<std::size_t>(m)] = {report(i, m), w[static_cast<std::size_t>(m)]};
      lo[i] = detail::weighted_quantile(vw, 0.025);
      hi[i] = detail::weighted_quantile(vw, 0.975);
    }
    s.credible_lower = lo;
    s.credible_upper = hi;
  }
  return s;
}

}  // namespace pdc
