#include <cmath>

#include <gtest/gtest.h>

#include "pdc/harness.hpp"
#include "pdc/prob.hpp"
#include "pdc/stats.hpp"
#include "pdc/summary.hpp"

using namespace pdc;

namespace {

Problem conjugate_problem(std::uint64_t seed = 3) {
  const auto sc = scenarios::conjugate();
  return make_problem(sc, simulate(sc, seed));
}

Problem scenario1_problem(std::uint64_t seed = 5) {
  const auto sc = scenarios::scenario1();
  return make_problem(sc, simulate(sc, seed));
}

}  // namespace

TEST(Stats, LogSumExp) {
  const std::vector<double> v = {1000.0, 1000.0};
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  const std::vector<double> ninf = {kNegInf, kNegInf};
  EXPECT_EQ(log_sum_exp(ninf), kNegInf);
  EXPECT_EQ(log_sum_exp(std::vector<double>{}), kNegInf);
}

TEST(Stats, NormalizeLogWeights) {
  const std::vector<double> lw = {0.0, std::log(3.0), kNegInf};
  std::vector<double> w(3);
  ASSERT_TRUE(normalize_log_weights(lw, w));
  EXPECT_NEAR(w[0], 0.25, 1e-15);
  EXPECT_NEAR(w[1], 0.75, 1e-15);
  EXPECT_EQ(w[2], 0.0);
  const std::vector<double> dead = {kNegInf, kNegInf};
  std::vector<double> w2(2);
  EXPECT_FALSE(normalize_log_weights(dead, w2));
}

TEST(Stats, WeightedMomentsAndRunningMoments) {
  Eigen::MatrixXd x(2, 4);
  x << 1, 2, 3, 4, 0, 0, 1, 1;
  const std::vector<double> w(4, 0.25);
  const auto mean = weighted_mean(x, w);
  EXPECT_DOUBLE_EQ(mean[0], 2.5);
  const auto cov = weighted_covariance(x, w, mean);
  EXPECT_DOUBLE_EQ(cov(0, 0), 1.25);
  EXPECT_DOUBLE_EQ(cov(0, 1), 0.5);
  RunningMoments rm(2);
  for (int m = 0; m < 4; ++m) rm.push(x.col(m));
  EXPECT_NEAR(rm.mean()[0], 2.5, 1e-15);
  EXPECT_NEAR(rm.covariance()(0, 0), 1.25 * 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(rm.covariance()(1, 1), 0.25 * 4.0 / 3.0, 1e-14);
}

TEST(Prob, DensityHandValues) {
  EXPECT_NEAR(inverse_gamma_logpdf(1.0, 1.0, 1.0), -1.0, 1e-15);
  EXPECT_NEAR(normal_logpdf(0.0, 0.0, 1.0), -0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_EQ(inverse_gamma_logpdf(0.0, 1.0, 1.0), -INFINITY);
  const Eigen::VectorXd rss = Eigen::Vector2d(4.0, 9.0), s2 = Eigen::Vector2d(1.0, 9.0);
  const double expected = -0.5 * 10 * std::log(2 * M_PI) - 2.0 - 0.5 * 10 * std::log(2 * M_PI * 9.0) - 0.5;
  EXPECT_NEAR(gaussian_loglik(rss, s2, 10), expected, 1e-12);
}

TEST(Prob, LayoutAndNames) {
  const auto pb = scenario1_problem();
  EXPECT_EQ(pb.layout.dim(), 6);
  EXPECT_EQ(pb.layout.block_dim(), 4);
  EXPECT_EQ(pb.layout.names(pb.model), (std::vector<std::string>{"theta1", "theta2", "x0_x1", "x0_x2",
                                                                   "log_sigma2_x1", "log_sigma2_x2"}));
  EXPECT_EQ(pb.layout.report_names(pb.model)[4], "sigma_x1");
  const auto sc2 = scenarios::scenario2();
  const auto l2 = ParamLayout::for_model(sc2.model);
  EXPECT_EQ(l2.report_names(sc2.model)[0], "abs_theta1");
}

TEST(Prob, ConjugateLikelihoodIsClosedForm) {
  const auto pb = conjugate_problem();
  ASSERT_EQ(pb.layout.dim(), 1);
  const double mu = 0.7;
  double expected = 0;
  for (Eigen::Index i = 0; i < pb.data.y.rows(); ++i) expected += normal_logpdf(pb.data.y(i, 0), mu, 1.0);
  const ParamVector th = Eigen::VectorXd::Constant(1, mu);
  EXPECT_NEAR(log_likelihood(pb, th), expected, 1e-9);
  EXPECT_NEAR(log_prior(pb, th), normal_logpdf(mu, 0.0, 100.0), 1e-14);
  EXPECT_NEAR(log_k_cloned_posterior(pb, th, 4), 4 * expected + normal_logpdf(mu, 0.0, 100.0), 1e-8);
}

TEST(Prob, PriorIncludesLogVarianceJacobian) {
  const auto pb = scenario1_problem();
  ParamVector th(6);
  th << 2.0, 1.0, 7.0, -10.0, 0.0, std::log(2.0);
  const double expected = normal_logpdf(2.0, 5, 25) + normal_logpdf(1.0, 5, 25) + normal_logpdf(7.0, 2, 16) +
                          normal_logpdf(-10.0, 2, 16) + (-1.0) +
                          (inverse_gamma_logpdf(2.0, 1, 1) + std::log(2.0));
  EXPECT_NEAR(log_prior(pb, th), expected, 1e-12);
}

TEST(Prob, IntermediatePathEndpointsAndLinearity) {
  const auto pb = scenario1_problem();
  ParamVector th(6);
  th << 2.01, 0.99, 7.2, -10.5, 0.1, 2.0;
  const Eigen::VectorXd mean = th.array() + 0.05;
  const auto ref = Reference::gaussian(mean, Eigen::MatrixXd::Identity(6, 6) * 0.3);
  const int k = 7;
  const double post = log_k_cloned_posterior(pb, th, k), lr = ref.log_density(pb, th);
  EXPECT_EQ(log_intermediate(pb, th, k, 0.0, ref), lr);
  EXPECT_NEAR(log_intermediate(pb, th, k, 1.0, ref), post, 1e-9);
  EXPECT_NEAR(log_intermediate(pb, th, k, 0.3, ref), 0.3 * post + 0.7 * lr, 1e-9);
  EXPECT_THROW(log_intermediate(pb, th, k, 1.5, ref), ConfigError);
  EXPECT_THROW(log_intermediate(pb, th, 0, 0.5, ref), ConfigError);
}

TEST(Prob, SolverFailureGivesZeroLikelihood) {
  const auto pb = scenario1_problem();
  ParamVector th(6);
  th << 2.0, 1.0, 7.0, -36.0, 0.0, 0.0;
  EXPECT_EQ(log_likelihood(pb, th), kNegInf);
  EXPECT_EQ(log_k_cloned_posterior(pb, th, 3), kNegInf);
  EXPECT_FALSE(evaluate_likelihood(pb, th).solved);
}

TEST(Prob, WrongLengthIsConfigError) {
  const auto pb = scenario1_problem();
  EXPECT_THROW(log_likelihood(pb, Eigen::VectorXd::Zero(5)), ConfigError);
  EXPECT_THROW(log_prior(pb, Eigen::VectorXd::Zero(7)), ConfigError);
}

TEST(Prob, GaussianReferenceDensity) {
  const auto pb = conjugate_problem();
  const auto ref = Reference::gaussian(Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
  EXPECT_NEAR(ref.log_density(pb, Eigen::VectorXd::Constant(1, 3.0)), normal_logpdf(3.0, 1.0, 4.0), 1e-14);
  EXPECT_THROW(Reference::gaussian(Eigen::Vector2d(0, 0), (Eigen::Matrix2d() << 1, 2, 2, 1).finished()),
               NumericalError);
  EXPECT_TRUE(Reference::prior().is_prior());
}

TEST(Prob, PriorSamplesHaveThePriorMoments) {
  const auto pb = scenario1_problem();
  Rng rng(11);
  const int n = 20000;
  RunningMoments rm(6);
  for (int i = 0; i < n; ++i) rm.push(sample_prior(pb, rng));
  EXPECT_NEAR(rm.mean()[0], 5.0, 4 * 5.0 / std::sqrt(n));
  EXPECT_NEAR(rm.mean()[3], 2.0, 4 * 4.0 / std::sqrt(n));
  EXPECT_NEAR(rm.covariance()(1, 1), 25.0, 25.0 * 4 * std::sqrt(2.0 / n));
  // log of an IG(1, 1) draw is -log(Exp(1)): mean = Euler's gamma.
  EXPECT_NEAR(rm.mean()[4], 0.5772156649, 4 * (M_PI / std::sqrt(6.0)) / std::sqrt(n));
}

TEST(Prob, PriorValidation) {
  const auto sc = scenarios::scenario1();
  auto bad = sc.prior;
  bad.ode_var[0] = 0.0;
  EXPECT_THROW(Problem(sc.model, simulate(sc, 1), bad, sc.solver), ConfigError);
  bad = sc.prior;
  bad.ig_shape = -1;
  EXPECT_THROW(Problem(sc.model, simulate(sc, 1), bad, sc.solver), ConfigError);
}

TEST(Summary, ReportScaleRoundTrip) {
  const auto pb = scenario1_problem();
  ParamVector th(6);
  th << 2.0, 1.0, 7.0, -10.0, std::log(4.0), std::log(9.0);
  const auto r = to_report_scale(pb, th);
  EXPECT_NEAR(r[4], 2.0, 1e-14);
  EXPECT_NEAR(r[5], 3.0, 1e-14);
  EXPECT_NEAR((from_report_scale(pb, r) - th).norm(), 0.0, 1e-14);
}

TEST(Summary, WeightedSummaryRescalesByK) {
  const auto pb = conjugate_problem();
  Eigen::MatrixXd x(1, 3);
  x << 0.9, 1.0, 1.1;
  const std::vector<double> w = {0.25, 0.5, 0.25};
  const auto s = summarize_weighted(pb, x, w, 4);
  EXPECT_NEAR(s.estimate[0], 1.0, 1e-15);
  EXPECT_NEAR(s.posterior_covariance(0, 0), 0.005, 1e-15);
  EXPECT_NEAR(s.covariance(0, 0), 0.02, 1e-15);
  EXPECT_NEAR(s.se[0], std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(s.wald_upper[0] - s.wald_lower[0], 2 * 1.96 * std::sqrt(0.02), 1e-14);
  EXPECT_FALSE(s.credible_lower);
  EXPECT_FALSE(s.degenerate);
  const auto s1 = summarize_weighted(pb, x, w, 1);
  ASSERT_TRUE(s1.credible_lower && s1.credible_upper);
  EXPECT_EQ((*s1.credible_lower)[0], 0.9);
  EXPECT_EQ((*s1.credible_upper)[0], 1.1);
}
