#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "pdc/harness.hpp"

namespace testutil {

/// Upper quantile of chi^2_df at tail probability p.
inline double chi2_critical(double df, double p) {
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(df), p));
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
inline double ks_distance(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// dx/dt = 0 in two components, both observed, both starting values estimated.
inline pdc::ModelSpec constant_pair() {
  pdc::ModelSpec m;
  m.name = "constant_pair";
  m.dim = 2;
  m.state_names = {"a", "b"};
  m.observed = {0, 1};
  m.initial = {std::nullopt, std::nullopt};
  m.rhs = [](double, std::span<const double>, std::span<const double>, std::span<double> dx) {
    dx[0] = dx[1] = 0.0;
    return true;
  };
  return m;
}

/// y_ij ~ N(mu_j, 1) with known unit variances and N(0, 100) priors.
inline pdc::Problem constant_pair_problem(std::size_t n = 20, std::uint64_t seed = 9) {
  const auto m = constant_pair();
  auto prior = pdc::PriorSpec::broadcast(m, 0.0, 1.0, 0.0, 100.0);
  prior.known_sigma2 = Eigen::Vector2d(1.0, 1.0);
  const auto d = pdc::simulate(m, {}, {1.0, -2.0}, {1.0, 1.0}, pdc::equispaced(0, 1, n), pdc::SolverConfig{}, seed);
  return pdc::Problem(m, d, prior, pdc::SolverConfig{});
}

/// Exact k-cloned posterior N(mean, var) for the conjugate scenario.
struct ConjugatePosterior {
  double mean, var;
};

inline ConjugatePosterior conjugate_posterior(const pdc::Problem& pb, int k) {
  const double s2 = (*pb.prior.known_sigma2)[0];
  const double t2 = pb.prior.ic_var[0], m0 = pb.prior.ic_mean[0];
  const double n = static_cast<double>(pb.data.size());
  const double ybar = pb.data.y.col(0).mean();
  const double prec = k * n / s2 + 1.0 / t2;
  return {(k * n * ybar / s2 + m0 / t2) / prec, 1.0 / prec};
}

}  // namespace testutil
