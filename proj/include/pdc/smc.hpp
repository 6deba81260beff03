#pragma once

// Annealed sequential Monte Carlo on k-cloned posteriors (particle data cloning).
//
// Path: gamma_r(theta) = [p(y|theta)^k p0(theta)]^phi_r ref(theta)^(1 - phi_r),
// 0 = phi_0 < phi_1 < ... < phi_R = 1, with phi_r chosen so that the relative
// conditional ESS of the incremental weights equals a threshold. Particles are
// rejuvenated by one (or more) pi_r-invariant MH-Gibbs sweeps per step:
// an inverse-gamma draw for the measurement variances followed by a
// Metropolis-Hastings update of (theta_ode, x(0)).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/error.hpp"
#include "pdc/parallel.hpp"
#include "pdc/prob.hpp"
#include "pdc/random.hpp"
#include "pdc/stats.hpp"
#include "pdc/summary.hpp"

namespace pdc {

enum class KernelKind { rwmh, adaptive };

inline const char* to_string(KernelKind k) { return k == KernelKind::rwmh ? "rwmh" : "adaptive"; }

inline KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "rwmh" || s == "rwmh_gibbs") return KernelKind::rwmh;
  if (s == "adaptive" || s == "adaptive_mh_gibbs") return KernelKind::adaptive;
  throw ConfigError("unknown kernel '" + s + "' (expected rwmh or adaptive)");
}

struct KernelConfig {
  KernelKind kind = KernelKind::adaptive;
  /// Per-coordinate random-walk scales for the (theta_ode, x0) block; rwmh only.
  /// Empty means 0.1 / sqrt(d) for every coordinate.
  Eigen::VectorXd rw_step_sizes;
  /// Mixture: main_weight N(., main_scale/d * Sigma) + (1 - main_weight) N(., small_scale/d * I).
  double main_weight = 0.95;
  double main_scale = 2.38 * 2.38;
  double small_scale = 0.1 * 0.1;
  /// Proposal dimension d; 0 means the block dimension.
  Eigen::Index proposal_dim = 0;
  double cov_regularization = 1e-10;
  std::size_t moves_per_step = 1;

  Eigen::Index dim_for(Eigen::Index block_dim) const {
    return proposal_dim > 0 ? proposal_dim : std::max<Eigen::Index>(block_dim, 1);
  }

  void validate(Eigen::Index block_dim) const {
    detail::require(main_weight >= 0 && main_weight <= 1, "kernel: main_weight must be in [0, 1]");
    detail::require(main_scale > 0 && small_scale >= 0, "kernel: proposal scales must be positive");
    detail::require(proposal_dim >= 0, "kernel: proposal_dim must be >= 0");
    detail::require(cov_regularization >= 0, "kernel: cov_regularization must be >= 0");
    detail::require(moves_per_step >= 1, "kernel: moves_per_step must be >= 1");
    if (kind == KernelKind::rwmh && rw_step_sizes.size() > 0) {
      detail::require(rw_step_sizes.size() == block_dim,
                      "kernel: rw_step_sizes length must equal the block dimension");
      detail::require((rw_step_sizes.array() >= 0).all(), "kernel: rw_step_sizes must be >= 0");
    }
  }
};

struct ScheduleConfig {
  double rcess_threshold = 0.999;
  double resample_threshold = 0.5;
  double bisection_tol = 1e-10;
  int bisection_max_iter = 100;
  std::size_t max_iterations = 100000;

  void validate() const {
    detail::require(rcess_threshold > 0 && rcess_threshold <= 1, "schedule: rcess threshold must be in (0, 1]");
    detail::require(resample_threshold > 0 && resample_threshold <= 1,
                    "schedule: resample threshold must be in (0, 1]");
    detail::require(bisection_tol > 0 && bisection_max_iter > 0, "schedule: bad bisection settings");
    detail::require(max_iterations > 0, "schedule: max_iterations must be positive");
  }
};

struct ParticleSystem;
struct TraceRow;

struct PdcConfig {
  std::size_t particles = 500;
  int k = 1;
  KernelConfig kernel;
  ScheduleConfig schedule;
  std::uint64_t seed = 1;
  /// 0 = hardware concurrency. Results do not depend on this value.
  std::size_t threads = 1;
  /// Re-draws from the reference for particles whose likelihood is -inf.
  std::size_t init_attempts = 100;
  /// Called after each move step, before any resampling.
  std::function<void(const ParticleSystem&, const TraceRow&)> on_step;
};

struct Particle {
  ParamVector theta;
  LikelihoodTerms lik;
  double log_prior = kNegInf;
  double log_ref = kNegInf;
};

struct ParticleSystem {
  std::vector<Particle> particles;
  std::vector<double> logw;
  std::vector<double> weights;
  std::size_t r = 0;
  double phi = 0.0;

  std::size_t size() const { return particles.size(); }

  Eigen::MatrixXd matrix() const {
    if (particles.empty()) return {};
    Eigen::MatrixXd x(particles.front().theta.size(), static_cast<Eigen::Index>(particles.size()));
    for (std::size_t m = 0; m < particles.size(); ++m) x.col(static_cast<Eigen::Index>(m)) = particles[m].theta;
    return x;
  }

  std::vector<double> cached_loglik() const {
    std::vector<double> out;
    out.reserve(particles.size());
    for (const auto& p : particles) out.push_back(p.lik.loglik);
    return out;
  }
};

struct TraceRow {
  std::size_t r = 0;
  double phi = 0.0;
  /// ESS / M after reweighting (propagation leaves weights unchanged).
  double ress = 1.0;
  double accept_rate = 0.0;
  double sigma_accept_rate = 0.0;
  double log_z_increment = 0.0;
  bool resampled = false;
};

class ScheduleError : public NumericalError {
 public:
  ScheduleError(const std::string& what, std::vector<TraceRow> trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const std::vector<TraceRow>& trace() const { return trace_; }

 private:
  std::vector<TraceRow> trace_;
};

/// 1 / sum W^2.
inline double ess(std::span<const double> w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return 1.0 / s;
}

/// (sum W w~)^2 / sum W w~^2 from incremental log-weights, evaluated in log space.
/// Zero-weight entries are skipped.
inline double rcess(std::span<const double> w, std::span<const double> log_incr) {
  detail::require(w.size() == log_incr.size(), "rcess: length mismatch");
  std::vector<double> a, b;
  a.reserve(w.size());
  b.reserve(w.size());
  for (std::size_t m = 0; m < w.size(); ++m) {
    if (!(w[m] > 0) || log_incr[m] == kNegInf) continue;
    const double lw = std::log(w[m]);
    a.push_back(lw + log_incr[m]);
    b.push_back(lw + 2.0 * log_incr[m]);
  }
  if (a.empty()) throw NumericalError("rcess: every incremental weight is zero");
  return std::min(1.0, std::exp(2.0 * log_sum_exp(a) - log_sum_exp(b)));
}

/// Per-particle log-increment per unit of phi: k log p(y|theta) + log p0 - log ref.
inline std::vector<double> annealing_slopes(const ParticleSystem& ps, int k) {
  std::vector<double> u(ps.size());
  for (std::size_t m = 0; m < ps.size(); ++m) {
    const auto& p = ps.particles[m];
    u[m] = p.lik.loglik == kNegInf ? kNegInf
                                   : static_cast<double>(k) * p.lik.loglik + p.log_prior - p.log_ref;
  }
  return u;
}

namespace detail {

inline double rcess_at(std::span<const double> w, std::span<const double> slopes, double dphi,
                       std::vector<double>& buf) {
  if (dphi == 0.0) return 1.0;
  buf.resize(slopes.size());
  for (std::size_t m = 0; m < slopes.size(); ++m)
    buf[m] = slopes[m] == kNegInf ? kNegInf : dphi * slopes[m];
  return rcess(w, buf);
}

}  // namespace detail

/// Next annealing parameter by bisection on (phi_{r-1}, 1]; uses cached likelihoods only.
inline double next_phi(const ParticleSystem& ps, int k, const ScheduleConfig& sched) {
  detail::require(ps.phi < 1.0, "next_phi: annealing already finished");
  const auto u = annealing_slopes(ps, k);
  std::vector<double> buf;
  auto f = [&](double phi) { return detail::rcess_at(ps.weights, u, phi - ps.phi, buf); };
  const double eps = sched.rcess_threshold;
  if (f(ps.phi) < eps) throw NumericalError("next_phi: bisection does not bracket the threshold");
  if (f(1.0) >= eps) return 1.0;
  double lo = ps.phi, hi = 1.0;
  for (int it = 0; it < sched.bisection_max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) >= eps) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < sched.bisection_tol && lo > ps.phi) break;
  }
  return lo > ps.phi ? lo : hi;
}

/// Multiplies in the incremental weights for phi -> phi_new and renormalizes.
/// Returns log sum_m W_{r-1} w~ (the log normalizing-constant increment).
inline double reweight(ParticleSystem& ps, double phi_new, int k) {
  detail::require(phi_new >= ps.phi, "reweight: phi must not decrease");
  const double dphi = phi_new - ps.phi;
  const auto u = annealing_slopes(ps, k);
  std::vector<double> terms(ps.size());
  for (std::size_t m = 0; m < ps.size(); ++m) {
    const double incr = dphi == 0.0 ? 0.0 : (u[m] == kNegInf ? kNegInf : dphi * u[m]);
    terms[m] = ps.weights[m] > 0 ? std::log(ps.weights[m]) + incr : kNegInf;
    ps.logw[m] = ps.logw[m] == kNegInf ? kNegInf : ps.logw[m] + incr;
  }
  if (!normalize_log_weights(ps.logw, ps.weights))
    throw NumericalError("reweight: every particle has zero weight");
  ps.phi = phi_new;
  return log_sum_exp(terms);
}

/// Multinomial resampling; resets to equal weights.
inline void resample_multinomial(ParticleSystem& ps, Rng& rng) {
  const std::size_t M = ps.size();
  std::vector<double> cdf(M);
  std::partial_sum(ps.weights.begin(), ps.weights.end(), cdf.begin());
  std::vector<Particle> next;
  next.reserve(M);
  for (std::size_t m = 0; m < M; ++m) {
    const double u = uniform01(rng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), M - 1);
    while (ps.weights[idx] == 0.0 && idx > 0) --idx;  // never pick a zero-weight slot
    next.push_back(ps.particles[idx]);
  }
  ps.particles = std::move(next);
  std::fill(ps.logw.begin(), ps.logw.end(), 0.0);
  std::fill(ps.weights.begin(), ps.weights.end(), 1.0 / static_cast<double>(M));
}

/// Proposal for the (theta_ode, x0) block.
class BlockProposal {
 public:
  /// Random walk with fixed per-coordinate scales.
  static BlockProposal random_walk(const KernelConfig& cfg, Eigen::Index block_dim) {
    BlockProposal p;
    p.kind_ = KernelKind::rwmh;
    p.cfg_ = cfg;
    p.steps_ = cfg.rw_step_sizes.size() == block_dim
                   ? cfg.rw_step_sizes
                   : Eigen::VectorXd::Constant(block_dim, 0.1 / std::sqrt(static_cast<double>(cfg.dim_for(block_dim))));
    return p;
  }

  /// Normal mixture around the current point. Without a usable covariance the
  /// small isotropic component is used alone.
  static BlockProposal adaptive(const KernelConfig& cfg, Eigen::Index block_dim,
                                const std::optional<Eigen::MatrixXd>& block_cov) {
    BlockProposal p;
    p.kind_ = KernelKind::adaptive;
    p.cfg_ = cfg;
    const double d = static_cast<double>(cfg.dim_for(block_dim));
    p.small_sd_ = std::sqrt(cfg.small_scale / d);
    if (block_cov) {
      Eigen::MatrixXd c = *block_cov * (cfg.main_scale / d);
      c.diagonal().array() += cfg.cov_regularization;
      Eigen::LLT<Eigen::MatrixXd> llt(c);
      if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().allFinite())
        p.main_lower_ = Eigen::MatrixXd(llt.matrixL());
    }
    return p;
  }

  bool has_main_component() const { return main_lower_.has_value(); }

  Eigen::VectorXd draw(const Eigen::VectorXd& current, Rng& rng) const {
    const Eigen::Index n = current.size();
    if (kind_ == KernelKind::rwmh) return current + steps_.cwiseProduct(std_normal_vector(rng, n));
    const bool main = main_lower_ && uniform01(rng) < cfg_.main_weight;
    const Eigen::VectorXd z = std_normal_vector(rng, n);
    return main ? Eigen::VectorXd(current + (*main_lower_) * z) : Eigen::VectorXd(current + small_sd_ * z);
  }

 private:
  KernelKind kind_ = KernelKind::adaptive;
  KernelConfig cfg_;
  Eigen::VectorXd steps_;
  std::optional<Eigen::MatrixXd> main_lower_;
  double small_sd_ = 0.0;
};

/// Counters from one particle's moves.
struct MoveStats {
  std::size_t block_proposed = 0, block_accepted = 0;
  std::size_t sigma_proposed = 0, sigma_accepted = 0;
  std::size_t solves = 0;

  MoveStats& operator+=(const MoveStats& o) {
    block_proposed += o.block_proposed;
    block_accepted += o.block_accepted;
    sigma_proposed += o.sigma_proposed;
    sigma_accepted += o.sigma_accepted;
    solves += o.solves;
    return *this;
  }
};

inline double log_target(const Particle& p, double phi, int k) {
  if (p.lik.loglik == kNegInf) return kNegInf;
  const double post = static_cast<double>(k) * p.lik.loglik + p.log_prior;
  if (phi == 1.0) return post;
  return phi * post + (1.0 - phi) * p.log_ref;
}

/// Draws sigma_j^2 ~ IG(a + N k phi / 2, b + k phi rss_j / 2) for every observed j.
/// That is the exact conditional when the reference is the prior; for a Gaussian
/// reference the draw is used as an independence proposal with the
/// (1 - phi) [log ref - log p0] correction, which keeps pi_r invariant.
/// Returns true if the move was accepted.
inline bool gibbs_sigma2(const Problem& pb, Particle& p, double phi, int k, const Reference& ref,
                         Rng& rng, MoveStats* stats = nullptr) {
  const auto& L = pb.layout;
  if (L.n_sigma() == 0 || !p.lik.solved) return false;
  const double kphi = static_cast<double>(k) * phi;
  const double shape = pb.prior.ig_shape + 0.5 * static_cast<double>(pb.data.size()) * kphi;
  Particle cand = p;
  for (Eigen::Index j = 0; j < L.n_sigma(); ++j) {
    const double scale = pb.prior.ig_scale + 0.5 * kphi * p.lik.rss[j];
    cand.theta[L.sigma_offset() + j] = std::log(inverse_gamma(rng, shape, scale));
  }
  if (!cand.theta.allFinite()) return false;
  cand.lik.loglik = gaussian_loglik(cand.lik.rss, pb.sigma2(cand.theta), pb.data.size());
  cand.log_prior = log_prior(pb, cand.theta);
  cand.log_ref = ref.is_prior() ? cand.log_prior : ref.log_density(pb, cand.theta);
  if (stats) ++stats->sigma_proposed;
  bool accept = true;
  if (!ref.is_prior() && phi < 1.0) {
    const double log_alpha =
        (1.0 - phi) * ((cand.log_ref - cand.log_prior) - (p.log_ref - p.log_prior));
    accept = std::log(uniform01(rng)) < log_alpha;
  }
  if (accept) {
    p = std::move(cand);
    if (stats) ++stats->sigma_accepted;
  }
  return accept;
}

/// One Metropolis-Hastings step on (theta_ode, x0) with sigma^2 held fixed.
/// The proposal is symmetric, so the acceptance ratio is the target ratio.
inline bool mh_theta_block(const Problem& pb, Particle& p, const BlockProposal& proposal,
                           double phi, int k, const Reference& ref, Rng& rng,
                           MoveStats* stats = nullptr) {
  const Eigen::Index bd = pb.layout.block_dim();
  if (bd == 0 || !p.lik.solved) return false;
  Particle cand;
  cand.theta = p.theta;
  cand.theta.head(bd) = proposal.draw(p.theta.head(bd), rng);
  if (stats) {
    ++stats->block_proposed;
    ++stats->solves;
  }
  const double u = uniform01(rng);
  if (!cand.theta.allFinite()) return false;
  cand.lik = evaluate_likelihood(pb, cand.theta);
  if (cand.lik.loglik == kNegInf) return false;
  cand.log_prior = log_prior(pb, cand.theta);
  cand.log_ref = ref.is_prior() ? cand.log_prior : ref.log_density(pb, cand.theta);
  const double log_alpha = log_target(cand, phi, k) - log_target(p, phi, k);
  if (!(std::log(u) < log_alpha)) return false;
  p = std::move(cand);
  if (stats) ++stats->block_accepted;
  return true;
}

/// Weighted covariance of the block coordinates; nullopt if not usable.
inline std::optional<Eigen::MatrixXd> block_covariance(const ParticleSystem& ps, Eigen::Index bd) {
  if (bd == 0) return std::nullopt;
  const Eigen::MatrixXd x = ps.matrix().topRows(bd);
  const Eigen::VectorXd mean = weighted_mean(x, ps.weights);
  Eigen::MatrixXd cov = weighted_covariance(x, ps.weights, mean);
  if (!cov.allFinite() || cov.trace() <= 0.0) return std::nullopt;
  return cov;
}

/// Applies cfg.moves_per_step MH-Gibbs sweeps targeting pi_r to every particle.
inline MoveStats propagate(const Problem& pb, ParticleSystem& ps, int k, const Reference& ref,
                           const KernelConfig& kcfg, const BlockProposal& proposal,
                           std::vector<Rng>& streams, std::size_t threads) {
  std::vector<MoveStats> per(ps.size());
  parallel_for(ps.size(), threads, [&](std::size_t m) {
    if (ps.weights[m] == 0.0) return;
    for (std::size_t s = 0; s < kcfg.moves_per_step; ++s) {
      gibbs_sigma2(pb, ps.particles[m], ps.phi, k, ref, streams[m], &per[m]);
      mh_theta_block(pb, ps.particles[m], proposal, ps.phi, k, ref, streams[m], &per[m]);
    }
  });
  MoveStats total;
  for (const auto& s : per) total += s;
  return total;
}

/// Draws M particles from the reference with equal weights. A particle whose
/// likelihood stays -inf after `attempts` draws is kept with zero weight.
inline ParticleSystem initialize_particles(const Problem& pb, const Reference& ref, std::size_t M,
                                           std::vector<Rng>& streams, std::size_t attempts,
                                           std::size_t threads, std::size_t* solves = nullptr) {
  ParticleSystem ps;
  ps.particles.resize(M);
  ps.logw.assign(M, 0.0);
  ps.weights.assign(M, 1.0 / static_cast<double>(M));
  std::vector<std::size_t> used(M, 0);
  parallel_for(M, threads, [&](std::size_t m) {
    Particle& p = ps.particles[m];
    for (std::size_t a = 0; a < std::max<std::size_t>(attempts, 1); ++a) {
      p.theta = ref.sample(pb, streams[m]);
      ++used[m];
      if (!p.theta.allFinite()) continue;
      p.lik = evaluate_likelihood(pb, p.theta);
      if (p.lik.loglik != kNegInf) break;
    }
    p.log_prior = p.theta.allFinite() ? log_prior(pb, p.theta) : kNegInf;
    p.log_ref = p.theta.allFinite() ? ref.log_density(pb, p.theta) : kNegInf;
    if (p.lik.loglik == kNegInf) ps.logw[m] = kNegInf;
  });
  if (!normalize_log_weights(ps.logw, ps.weights))
    throw NumericalError("initialization: no particle with finite likelihood");
  if (solves)
    for (auto u : used) *solves += u;
  return ps;
}

struct PdcResult {
  ParticleSystem particles;
  FitSummary summary;
  std::vector<TraceRow> trace;
  /// ODE solves spent (initialization + proposals); the budget unit for comparisons.
  std::size_t solves = 0;
  std::size_t kernel_moves = 0;
  std::size_t resamples = 0;
  double seconds = 0.0;
};

/// Weighted mean and k-rescaled covariance of the final particle cloud.
inline FitSummary summarize(const Problem& pb, const ParticleSystem& ps, int k) {
  detail::require(ps.phi == 1.0, "summarize: particle system has not reached phi = 1");
  FitSummary s = summarize_weighted(pb, ps.matrix(), ps.weights, k);
  s.iterations = ps.r;
  return s;
}

/// Runs the full annealed SMC from `ref` to the k-cloned posterior.
inline PdcResult pdc_run(const Problem& pb, const Reference& ref, const PdcConfig& cfg) {
  detail::require(cfg.particles >= 2, "pdc: need at least 2 particles");
  detail::require(cfg.k >= 1, "pdc: k must be >= 1");
  cfg.kernel.validate(pb.layout.block_dim());
  cfg.schedule.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int k = cfg.k;
  const std::size_t M = cfg.particles;

  PdcResult out;
  auto streams = make_streams(cfg.seed, M, 0x5eedULL);
  Rng resample_rng(derive_seed(cfg.seed, 0xFFFFFFFFULL));
  out.particles = initialize_particles(pb, ref, M, streams, cfg.init_attempts, cfg.threads, &out.solves);
  ParticleSystem& ps = out.particles;
  const Eigen::Index bd = pb.layout.block_dim();

  while (ps.phi < 1.0) {
    if (ps.r >= cfg.schedule.max_iterations)
      throw ScheduleError("pdc: exceeded max_iterations = " + std::to_string(cfg.schedule.max_iterations) +
                              " at phi = " + format_double(ps.phi),
                          out.trace);
    ++ps.r;
    TraceRow row;
    row.r = ps.r;
    double phi_new = 0.0;
    try {
      phi_new = next_phi(ps, k, cfg.schedule);
    } catch (const NumericalError& e) {
      throw ScheduleError(e.what(), out.trace);
    }
    row.log_z_increment = reweight(ps, phi_new, k);
    row.phi = ps.phi;
    row.ress = ess(ps.weights) / static_cast<double>(M);

    BlockProposal proposal =
        cfg.kernel.kind == KernelKind::rwmh
            ? BlockProposal::random_walk(cfg.kernel, bd)
            : BlockProposal::adaptive(cfg.kernel, bd,
                                      ps.r > 1 ? block_covariance(ps, bd) : std::nullopt);
    const MoveStats ms = propagate(pb, ps, k, ref, cfg.kernel, proposal, streams, cfg.threads);
    out.solves += ms.solves;
    out.kernel_moves += ms.block_proposed;
    row.accept_rate = ms.block_proposed ? static_cast<double>(ms.block_accepted) / ms.block_proposed : 0.0;
    row.sigma_accept_rate =
        ms.sigma_proposed ? static_cast<double>(ms.sigma_accepted) / ms.sigma_proposed : 0.0;

    if (cfg.on_step) cfg.on_step(ps, row);
    if (ps.phi < 1.0 && row.ress < cfg.schedule.resample_threshold) {
      resample_multinomial(ps, resample_rng);
      row.resampled = true;
      ++out.resamples;
    }
    out.trace.push_back(row);
  }
  out.summary = summarize(pb, ps, k);
  out.summary.resamples = out.resamples;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace pdc
