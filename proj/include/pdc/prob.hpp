#pragma once

// Densities in log space: priors, the Gaussian measurement likelihood,
// k-cloned posteriors and the annealed path between a reference and them.
//
// A parameter point is a flat vector laid out as
//   [ theta_ode (P) | estimated x(0) components | log sigma^2 per observed component ]
// The variance block is absent when the measurement variances are known.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/data.hpp"
#include "pdc/error.hpp"
#include "pdc/model.hpp"
#include "pdc/random.hpp"
#include "pdc/solver.hpp"

namespace pdc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using ParamVector = Eigen::VectorXd;

class ParamLayout {
 public:
  ParamLayout() = default;

  static ParamLayout for_model(const ModelSpec& model, bool estimate_sigma = true) {
    ParamLayout l;
    l.n_ode_ = static_cast<Eigen::Index>(model.num_params());
    l.free_ic_ = model.free_initial();
    l.n_ic_ = static_cast<Eigen::Index>(l.free_ic_.size());
    l.n_sigma_ = estimate_sigma ? static_cast<Eigen::Index>(model.observed.size()) : 0;
    l.fixed_ic_.resize(model.dim);
    for (std::size_t j = 0; j < model.dim; ++j) l.fixed_ic_[j] = model.initial[j].value_or(0.0);
    return l;
  }

  Eigen::Index n_ode() const { return n_ode_; }
  Eigen::Index n_ic() const { return n_ic_; }
  Eigen::Index n_sigma() const { return n_sigma_; }
  Eigen::Index dim() const { return n_ode_ + n_ic_ + n_sigma_; }
  /// The block updated by Metropolis-Hastings: ODE parameters and free initial conditions.
  Eigen::Index block_dim() const { return n_ode_ + n_ic_; }
  Eigen::Index ic_offset() const { return n_ode_; }
  Eigen::Index sigma_offset() const { return n_ode_ + n_ic_; }
  const std::vector<std::size_t>& free_ic() const { return free_ic_; }

  std::vector<double> ode_params(const ParamVector& th) const {
    return {th.data(), th.data() + n_ode_};
  }

  std::vector<double> initial_state(const ParamVector& th) const {
    std::vector<double> x0 = fixed_ic_;
    for (std::size_t i = 0; i < free_ic_.size(); ++i)
      x0[free_ic_[i]] = th[n_ode_ + static_cast<Eigen::Index>(i)];
    return x0;
  }

  std::vector<std::string> names(const ModelSpec& model) const {
    std::vector<std::string> out(model.param_names.begin(), model.param_names.end());
    for (auto j : free_ic_) out.push_back("x0_" + model.state_names[j]);
    if (n_sigma_ > 0)
      for (auto j : model.observed) out.push_back("log_sigma2_" + model.state_names[j]);
    return out;
  }

  /// Names on the reporting scale: |theta| for sign-symmetric parameters, sigma instead of log sigma^2.
  std::vector<std::string> report_names(const ModelSpec& model) const {
    std::vector<std::string> out(model.param_names.begin(), model.param_names.end());
    for (auto p : model.sign_symmetric) out[p] = "abs_" + out[p];
    for (auto j : free_ic_) out.push_back("x0_" + model.state_names[j]);
    if (n_sigma_ > 0)
      for (auto j : model.observed) out.push_back("sigma_" + model.state_names[j]);
    return out;
  }

 private:
  Eigen::Index n_ode_ = 0, n_ic_ = 0, n_sigma_ = 0;
  std::vector<std::size_t> free_ic_;
  std::vector<double> fixed_ic_;
};

/// Independent priors: normal on theta_ode and on free x(0), InverseGamma(a, b) on each sigma^2.
struct PriorSpec {
  Eigen::VectorXd ode_mean, ode_var;
  Eigen::VectorXd ic_mean, ic_var;
  double ig_shape = 1.0;
  double ig_scale = 1.0;
  /// When set, sigma^2 is known and not part of the parameter vector.
  std::optional<Eigen::VectorXd> known_sigma2;

  /// The same N(mean, var) for every ODE parameter and every free initial condition.
  static PriorSpec broadcast(const ModelSpec& model, double ode_mean, double ode_var,
                             double ic_mean, double ic_var, double a = 1.0, double b = 1.0) {
    PriorSpec p;
    const auto P = static_cast<Eigen::Index>(model.num_params());
    const auto F = static_cast<Eigen::Index>(model.num_free_initial());
    p.ode_mean = Eigen::VectorXd::Constant(P, ode_mean);
    p.ode_var = Eigen::VectorXd::Constant(P, ode_var);
    p.ic_mean = Eigen::VectorXd::Constant(F, ic_mean);
    p.ic_var = Eigen::VectorXd::Constant(F, ic_var);
    p.ig_shape = a;
    p.ig_scale = b;
    return p;
  }

  void validate(const ParamLayout& layout, std::size_t n_observed) const {
    detail::require(ode_mean.size() == layout.n_ode() && ode_var.size() == layout.n_ode(),
                    "prior: ODE parameter prior has wrong length");
    detail::require(ic_mean.size() == layout.n_ic() && ic_var.size() == layout.n_ic(),
                    "prior: initial-condition prior has wrong length");
    detail::require((ode_var.array() > 0).all() && (ic_var.array() > 0).all(),
                    "prior: variances must be positive");
    detail::require(ig_shape > 0 && ig_scale > 0, "prior: inverse-gamma a, b must be positive");
    if (known_sigma2) {
      detail::require(static_cast<std::size_t>(known_sigma2->size()) == n_observed,
                      "prior: known sigma^2 has wrong length");
      detail::require((known_sigma2->array() > 0).all(), "prior: known sigma^2 must be positive");
    }
  }
};

/// Everything needed to evaluate a posterior: model, data, prior, solver settings.
struct Problem {
  ModelSpec model;
  Dataset data;
  PriorSpec prior;
  SolverConfig solver;
  ParamLayout layout;

  Problem(ModelSpec m, Dataset d, PriorSpec p, SolverConfig s)
      : model(std::move(m)), data(std::move(d)), prior(std::move(p)), solver(s) {
    model.validate();
    data.check_against(model);
    solver.validate();
    layout = ParamLayout::for_model(model, !prior.known_sigma2.has_value());
    prior.validate(layout, model.observed.size());
  }

  Eigen::VectorXd sigma2(const ParamVector& th) const {
    if (prior.known_sigma2) return *prior.known_sigma2;
    return th.segment(layout.sigma_offset(), layout.n_sigma()).array().exp();
  }

  void check(const ParamVector& th) const {
    detail::require(th.size() == layout.dim(), "parameter vector has length " +
                                                   std::to_string(th.size()) + ", expected " +
                                                   std::to_string(layout.dim()));
  }
};

/// Solved trajectory summarized as per-component residual sums of squares.
struct LikelihoodTerms {
  bool solved = false;
  Eigen::VectorXd rss;
  double loglik = kNegInf;
};

/// sum_j [ -N/2 log(2 pi sigma_j^2) - rss_j / (2 sigma_j^2) ].
inline double gaussian_loglik(const Eigen::VectorXd& rss, const Eigen::VectorXd& sigma2,
                              std::size_t n) {
  double ll = 0.0;
  const double nn = static_cast<double>(n);
  for (Eigen::Index j = 0; j < rss.size(); ++j)
    ll += -0.5 * nn * std::log(2.0 * M_PI * sigma2[j]) - 0.5 * rss[j] / sigma2[j];
  return std::isfinite(ll) ? ll : kNegInf;
}

inline std::optional<Eigen::VectorXd> residual_ss(const Problem& pb, const ParamVector& th) {
  const auto theta = pb.layout.ode_params(th);
  const auto x0 = pb.layout.initial_state(th);
  const auto traj = solve(pb.model, theta, x0, pb.data.times, pb.solver);
  if (!traj.ok()) return std::nullopt;
  Eigen::VectorXd rss = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pb.data.observed.size()));
  for (std::size_t c = 0; c < pb.data.observed.size(); ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    const auto j = static_cast<Eigen::Index>(pb.data.observed[c]);
    rss[ci] = (pb.data.y.col(ci) - traj.states.col(j)).squaredNorm();
  }
  if (!rss.allFinite()) return std::nullopt;
  return rss;
}

/// One ODE solve; the cached residuals let sigma^2 and k vary without re-solving.
inline LikelihoodTerms evaluate_likelihood(const Problem& pb, const ParamVector& th) {
  pb.check(th);
  LikelihoodTerms out;
  auto rss = residual_ss(pb, th);
  if (!rss) return out;
  out.solved = true;
  out.rss = std::move(*rss);
  out.loglik = gaussian_loglik(out.rss, pb.sigma2(th), pb.data.size());
  return out;
}

inline double log_likelihood(const Problem& pb, const ParamVector& th) {
  return evaluate_likelihood(pb, th).loglik;
}

/// Normal parts plus inverse-gamma densities in the log sigma^2 coordinates
/// (the +log sigma^2 Jacobian is included).
inline double log_prior(const Problem& pb, const ParamVector& th) {
  pb.check(th);
  const auto& L = pb.layout;
  const auto& p = pb.prior;
  double lp = 0.0;
  for (Eigen::Index i = 0; i < L.n_ode(); ++i) lp += normal_logpdf(th[i], p.ode_mean[i], p.ode_var[i]);
  for (Eigen::Index i = 0; i < L.n_ic(); ++i)
    lp += normal_logpdf(th[L.ic_offset() + i], p.ic_mean[i], p.ic_var[i]);
  for (Eigen::Index i = 0; i < L.n_sigma(); ++i) {
    const double ls = th[L.sigma_offset() + i];
    lp += inverse_gamma_logpdf(std::exp(ls), p.ig_shape, p.ig_scale) + ls;
  }
  return std::isfinite(lp) ? lp : kNegInf;
}

inline ParamVector sample_prior(const Problem& pb, Rng& rng) {
  const auto& L = pb.layout;
  const auto& p = pb.prior;
  ParamVector th(L.dim());
  for (Eigen::Index i = 0; i < L.n_ode(); ++i)
    th[i] = p.ode_mean[i] + std::sqrt(p.ode_var[i]) * std_normal(rng);
  for (Eigen::Index i = 0; i < L.n_ic(); ++i)
    th[L.ic_offset() + i] = p.ic_mean[i] + std::sqrt(p.ic_var[i]) * std_normal(rng);
  for (Eigen::Index i = 0; i < L.n_sigma(); ++i)
    th[L.sigma_offset() + i] = std::log(inverse_gamma(rng, p.ig_shape, p.ig_scale));
  return th;
}

/// Starting distribution of the annealing path: the prior, or a multivariate
/// normal on the full parameter layout (log sigma^2 coordinates included).
class Reference {
 public:
  enum class Kind { prior, gaussian };

  static Reference prior() { return Reference{}; }

  /// Throws NumericalError if `cov` is not positive definite.
  static Reference gaussian(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    detail::require(cov.rows() == mean.size() && cov.cols() == mean.size(),
                    "gaussian reference: covariance shape mismatch");
    Reference r;
    r.kind_ = Kind::gaussian;
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (cov + cov.transpose()));
    if (llt.info() != Eigen::Success) throw NumericalError("gaussian reference: covariance not PD");
    r.lower_ = llt.matrixL();
    if (!((r.lower_.diagonal().array() > 0).all() && r.lower_.allFinite()))
      throw NumericalError("gaussian reference: covariance not PD");
    r.mean_ = std::move(mean);
    r.cov_ = std::move(cov);
    const double logdet = 2.0 * r.lower_.diagonal().array().log().sum();
    r.log_norm_ = -0.5 * (static_cast<double>(r.mean_.size()) * std::log(2.0 * M_PI) + logdet);
    return r;
  }

  Kind kind() const { return kind_; }
  bool is_prior() const { return kind_ == Kind::prior; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }

  double log_density(const Problem& pb, const ParamVector& th) const {
    if (kind_ == Kind::prior) return log_prior(pb, th);
    pb.check(th);
    const Eigen::VectorXd z = lower_.triangularView<Eigen::Lower>().solve(th - mean_);
    return log_norm_ - 0.5 * z.squaredNorm();
  }

  ParamVector sample(const Problem& pb, Rng& rng) const {
    if (kind_ == Kind::prior) return sample_prior(pb, rng);
    return mean_ + lower_ * std_normal_vector(rng, mean_.size());
  }

 private:
  Kind kind_ = Kind::prior;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_, lower_;
  double log_norm_ = 0.0;
};

/// k log p(y | theta) + log p0(theta), unnormalized.
inline double log_k_cloned_posterior(const Problem& pb, const ParamVector& th, int k) {
  detail::require(k >= 1, "clone count k must be >= 1");
  const double ll = log_likelihood(pb, th);
  if (ll == kNegInf) return kNegInf;
  return static_cast<double>(k) * ll + log_prior(pb, th);
}

/// phi [k log p(y|theta) + log p0(theta)] + (1 - phi) log ref(theta), unnormalized.
inline double log_intermediate(const Problem& pb, const ParamVector& th, int k, double phi,
                               const Reference& ref) {
  detail::require(phi >= 0.0 && phi <= 1.0, "annealing parameter must lie in [0, 1]");
  detail::require(k >= 1, "clone count k must be >= 1");
  const double lr = ref.log_density(pb, th);
  if (phi == 0.0) return lr;
  const double ll = log_likelihood(pb, th);
  if (ll == kNegInf) return kNegInf;
  const double post = static_cast<double>(k) * ll + log_prior(pb, th);
  if (phi == 1.0) return post;
  return phi * post + (1.0 - phi) * lr;
}

}  // namespace pdc
