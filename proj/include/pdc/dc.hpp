#pragma once

// MCMC data cloning: a single MH-Gibbs chain on the k-cloned posterior.
// The kernel is the annealed one with phi fixed at 1; the estimate is the chain
// mean over the second half and the asymptotic covariance k times its sample
// covariance.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/error.hpp"
#include "pdc/prob.hpp"
#include "pdc/random.hpp"
#include "pdc/smc.hpp"
#include "pdc/stats.hpp"
#include "pdc/summary.hpp"

namespace pdc {

struct DcConfig {
  /// Total length 2L; the first L states are burn-in.
  std::size_t iterations = 300000;
  std::size_t thin = 10;
  int k = 1;
  KernelConfig kernel;
  /// Adaptive kernel: the proposal covariance is re-estimated at iterations
  /// adapt_start * 2^j from the states of the epoch just finished, so the
  /// transient from the starting point is forgotten. Adaptation stops at the
  /// end of burn-in, so the retained half is a time-homogeneous chain.
  std::size_t adapt_start = 1000;
  /// Consecutive all-rejected block proposals that trigger the mixing warning.
  std::size_t stuck_window = 5000;
  std::uint64_t seed = 1;
  std::optional<ParamVector> init;
  std::size_t init_attempts = 100;

  void validate(Eigen::Index block_dim) const {
    detail::require(iterations > 0, "dc: iterations must be positive");
    detail::require(iterations % 2 == 0, "dc: iterations must be even (burn-in is the first half)");
    detail::require(thin >= 1, "dc: thin must be >= 1");
    detail::require(k >= 1, "dc: k must be >= 1");
    detail::require(stuck_window >= 1, "dc: stuck_window must be >= 1");
    kernel.validate(block_dim);
  }
};

struct ChainRow {
  std::size_t iteration = 0;
  ParamVector theta;
  double loglik = kNegInf;
};

struct DcResult {
  /// Every `thin`-th state, burn-in included.
  std::vector<ChainRow> chain;
  FitSummary summary;
  double accept_rate = 0.0;
  double accept_rate_retained = 0.0;
  std::size_t longest_rejection_run = 0;
  bool mixing_warning = false;
  std::size_t solves = 0;
  double seconds = 0.0;
};

inline DcResult dc_run(const Problem& pb, const DcConfig& cfg) {
  const Eigen::Index bd = pb.layout.block_dim();
  cfg.validate(bd);
  const auto t0 = std::chrono::steady_clock::now();
  const int k = cfg.k;
  Rng rng(derive_seed(cfg.seed, 0xDCULL));
  const Reference prior = Reference::prior();
  DcResult out;

  Particle cur;
  if (cfg.init) {
    pb.check(*cfg.init);
    cur.theta = *cfg.init;
    cur.lik = evaluate_likelihood(pb, cur.theta);
    ++out.solves;
    if (cur.lik.loglik == kNegInf) throw NumericalError("dc: likelihood is zero at the supplied start");
  } else {
    for (std::size_t a = 0; a < std::max<std::size_t>(cfg.init_attempts, 1); ++a) {
      cur.theta = sample_prior(pb, rng);
      cur.lik = evaluate_likelihood(pb, cur.theta);
      ++out.solves;
      if (cur.lik.loglik != kNegInf) break;
    }
    if (cur.lik.loglik == kNegInf) throw NumericalError("dc: no prior draw with finite likelihood");
  }
  cur.log_prior = log_prior(pb, cur.theta);
  cur.log_ref = cur.log_prior;

  const std::size_t L = cfg.iterations / 2;
  RunningMoments adapt(bd);
  RunningMoments kept_layout(pb.layout.dim());
  RunningMoments kept_report(pb.layout.dim());
  std::optional<BlockProposal> proposal;
  if (cfg.kernel.kind == KernelKind::rwmh) {
    proposal = BlockProposal::random_walk(cfg.kernel, bd);
  } else {
    proposal = BlockProposal::adaptive(cfg.kernel, bd, std::nullopt);
  }
  std::size_t accepted = 0, accepted_kept = 0, run = 0;
  std::size_t next_epoch = std::max<std::size_t>(cfg.adapt_start, 1);

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    if (cfg.kernel.kind == KernelKind::adaptive && it <= L && it == next_epoch) {
      if (adapt.count() > static_cast<std::size_t>(bd) + 1)
        proposal = BlockProposal::adaptive(cfg.kernel, bd, adapt.covariance());
      adapt = RunningMoments(bd);
      next_epoch *= 2;
    }
    gibbs_sigma2(pb, cur, 1.0, k, prior, rng);
    MoveStats ms;
    const bool acc = mh_theta_block(pb, cur, *proposal, 1.0, k, prior, rng, &ms);
    out.solves += ms.solves;
    if (acc) {
      ++accepted;
      if (it > L) ++accepted_kept;
      run = 0;
    } else if (ms.block_proposed) {
      out.longest_rejection_run = std::max(out.longest_rejection_run, ++run);
    }
    if (bd > 0 && it <= L) adapt.push(cur.theta.head(bd));
    if (it > L) {
      kept_layout.push(cur.theta);
      kept_report.push(to_report_scale(pb, cur.theta));
    }
    if (it % cfg.thin == 0) out.chain.push_back({it, cur.theta, cur.lik.loglik});
  }

  out.accept_rate = static_cast<double>(accepted) / static_cast<double>(cfg.iterations);
  out.accept_rate_retained = static_cast<double>(accepted_kept) / static_cast<double>(L);
  out.mixing_warning = bd > 0 && out.longest_rejection_run >= std::min(cfg.stuck_window, L);
  out.summary = finish_summary(pb, k, kept_report.mean(), kept_report.covariance(), kept_layout.mean(),
                               kept_layout.covariance());
  out.summary.iterations = cfg.iterations;
  out.summary.degenerate = bd > 0 && accepted_kept == 0;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace pdc
