#include <cmath>

#include <gtest/gtest.h>

#include "pdc/dc.hpp"
#include "pdc/harness.hpp"
#include "test_util.hpp"

using namespace pdc;

namespace {

Problem conjugate_problem(std::uint64_t seed = 21) {
  const auto sc = scenarios::conjugate();
  return make_problem(sc, simulate(sc, seed));
}

DcConfig rw_config(int k, std::size_t iters, double step, std::uint64_t seed = 3) {
  DcConfig c;
  c.iterations = iters;
  c.k = k;
  c.kernel.kind = KernelKind::rwmh;
  c.kernel.rw_step_sizes = Eigen::VectorXd::Constant(1, step);
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Dc, ConjugateClonedPosteriorMoments) {
  const auto pb = conjugate_problem();
  for (int k : {1, 10}) {
    const auto exact = testutil::conjugate_posterior(pb, k);
    const auto res = dc_run(pb, rw_config(k, 200000, 2.4 * std::sqrt(exact.var)));
    // A random-walk chain of 1e5 retained draws has an effective size of a few 1e4.
    EXPECT_NEAR(res.summary.estimate[0], exact.mean, 0.03 * std::sqrt(exact.var)) << k;
    EXPECT_NEAR(res.summary.posterior_covariance(0, 0), exact.var, 0.05 * exact.var) << k;
    EXPECT_NEAR(res.summary.covariance(0, 0), k * exact.var, 0.05 * k * exact.var) << k;
    EXPECT_GT(res.accept_rate, 0.3);
    EXPECT_LT(res.accept_rate, 0.6);
    EXPECT_FALSE(res.mixing_warning);
    EXPECT_FALSE(res.summary.degenerate);
  }
}

TEST(Dc, AdaptiveKernelOnCorrelatedPair) {
  const auto pb = testutil::constant_pair_problem();
  DcConfig c;
  c.iterations = 60000;
  c.k = 5;
  c.kernel.kind = KernelKind::adaptive;
  const auto res = dc_run(pb, c);
  const double n = static_cast<double>(pb.data.size());
  const double var = 1.0 / (5 * n + 0.01);
  for (int j = 0; j < 2; ++j) {
    const double mean = 5 * n * pb.data.y.col(j).mean() * var;
    EXPECT_NEAR(res.summary.estimate[j], mean, 0.05 * std::sqrt(var));
    EXPECT_NEAR(res.summary.posterior_covariance(j, j), var, 0.1 * var);
  }
  EXPECT_NEAR(res.summary.posterior_covariance(0, 1), 0.0, 0.1 * var);
  EXPECT_GT(res.accept_rate_retained, 0.15);
}

TEST(Dc, ChainLayoutAndCounters) {
  const auto pb = conjugate_problem();
  auto c = rw_config(2, 1000, 0.1);
  c.thin = 7;
  const auto res = dc_run(pb, c);
  ASSERT_EQ(res.chain.size(), 1000u / 7u);
  EXPECT_EQ(res.chain.front().iteration, 7u);
  EXPECT_EQ(res.chain.back().iteration, 994u);
  for (const auto& row : res.chain) EXPECT_NEAR(row.loglik, log_likelihood(pb, row.theta), 1e-9);
  EXPECT_EQ(res.solves, 1001u);
  EXPECT_EQ(res.summary.iterations, 1000u);
  EXPECT_EQ(retained_chain(res).cols(), static_cast<Eigen::Index>(1000 / 7 - 500 / 7));
}

TEST(Dc, BitReproducible) {
  const auto pb = conjugate_problem();
  const auto a = dc_run(pb, rw_config(3, 2000, 0.1, 9));
  const auto b = dc_run(pb, rw_config(3, 2000, 0.1, 9));
  ASSERT_EQ(a.chain.size(), b.chain.size());
  for (std::size_t i = 0; i < a.chain.size(); ++i) EXPECT_EQ(a.chain[i].theta, b.chain[i].theta);
  EXPECT_EQ(a.summary.estimate, b.summary.estimate);
  const auto c = dc_run(pb, rw_config(3, 2000, 0.1, 10));
  EXPECT_NE(a.chain.back().theta, c.chain.back().theta);
}

TEST(Dc, SuppliedStartIsUsed) {
  const auto pb = conjugate_problem();
  auto c = rw_config(1, 10, 0.0);
  c.thin = 1;
  c.init = Eigen::VectorXd::Constant(1, 0.25);
  const auto res = dc_run(pb, c);
  // A zero step proposes the current state, which is always accepted.
  for (const auto& row : res.chain) EXPECT_EQ(row.theta[0], 0.25);
}

TEST(Dc, StuckChainIsFlagged) {
  const auto pb = conjugate_problem();
  auto c = rw_config(50, 4000, 1e6);
  c.stuck_window = 500;
  const auto res = dc_run(pb, c);
  EXPECT_TRUE(res.mixing_warning);
  EXPECT_LT(res.accept_rate, 0.01);
  EXPECT_GE(res.longest_rejection_run, 500u);
}

TEST(Dc, Validation) {
  const auto pb = conjugate_problem();
  EXPECT_THROW(dc_run(pb, rw_config(1, 0, 0.1)), ConfigError);
  EXPECT_THROW(dc_run(pb, rw_config(1, 1001, 0.1)), ConfigError);
  EXPECT_THROW(dc_run(pb, rw_config(0, 1000, 0.1)), ConfigError);
  auto c = rw_config(1, 1000, 0.1);
  c.init = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(dc_run(pb, c), ConfigError);
}

TEST(Dc, EstimatesSigmaOnScenario1) {
  const auto sc = scenarios::scenario1();
  const auto pb = make_problem(sc, simulate(sc, 4));
  DcConfig c;
  c.iterations = 6000;
  c.k = 1;
  c.kernel = sc.kernel(KernelKind::rwmh);
  ParamVector start(6);
  start << 2.0, 1.0, 7.0, -10.0, 0.0, std::log(9.0);
  c.init = start;
  const auto res = dc_run(pb, c);
  ASSERT_FALSE(res.summary.degenerate);
  EXPECT_NEAR(res.summary.estimate[4], 1.0, 0.25);
  EXPECT_NEAR(res.summary.estimate[5], 3.0, 0.75);
  EXPECT_EQ(res.summary.names[5], "sigma_x2");
}
