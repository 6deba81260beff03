#pragma once

// Synthetic data, replicate coverage studies, bimodality masses, goodness of fit
// and the DC / PDC x kernel benchmark grid.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/data.hpp"
#include "pdc/dc.hpp"
#include "pdc/error.hpp"
#include "pdc/ladder.hpp"
#include "pdc/model.hpp"
#include "pdc/parallel.hpp"
#include "pdc/prob.hpp"
#include "pdc/random.hpp"
#include "pdc/smc.hpp"
#include "pdc/solver.hpp"
#include "pdc/summary.hpp"

namespace pdc {

/// A model with generating values, design and prior: everything a study needs.
struct Scenario {
  ModelSpec model;
  std::vector<double> theta;
  /// Full initial state used to generate data.
  std::vector<double> x0;
  /// Measurement SD per observed component.
  std::vector<double> sigma;
  std::vector<double> times;
  PriorSpec prior;
  SolverConfig solver;
  /// Random-walk scales for the (theta_ode, free x0) block.
  Eigen::VectorXd rw_steps;
  /// Proposal dimension for the adaptive mixture (0 = block dimension).
  Eigen::Index proposal_dim = 0;
  bool surrogate = false;

  /// Generating values on the reporting scale (see ParamLayout::report_names).
  Eigen::VectorXd truth() const {
    const auto layout = ParamLayout::for_model(model, !prior.known_sigma2.has_value());
    Eigen::VectorXd t(layout.dim());
    for (Eigen::Index i = 0; i < layout.n_ode(); ++i) t[i] = theta[static_cast<std::size_t>(i)];
    for (auto p : model.sign_symmetric) t[static_cast<Eigen::Index>(p)] = std::abs(t[static_cast<Eigen::Index>(p)]);
    for (std::size_t i = 0; i < layout.free_ic().size(); ++i)
      t[layout.ic_offset() + static_cast<Eigen::Index>(i)] = x0[layout.free_ic()[i]];
    for (Eigen::Index i = 0; i < layout.n_sigma(); ++i)
      t[layout.sigma_offset() + i] = sigma[static_cast<std::size_t>(i)];
    return t;
  }

  KernelConfig kernel(KernelKind kind) const {
    KernelConfig k;
    k.kind = kind;
    k.proposal_dim = proposal_dim;
    if (kind == KernelKind::rwmh) k.rw_step_sizes = rw_steps;
    return k;
  }
};

inline std::vector<double> equispaced(double a, double b, std::size_t n) {
  detail::require(n >= 1, "equispaced: need at least one point");
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

namespace scenarios {

namespace detail {

inline Scenario two_state(ModelSpec m) {
  Scenario s;
  s.model = std::move(m);
  s.theta = {2.0, 1.0};
  s.x0 = {7.0, -10.0};
  s.sigma = {1.0, 3.0};
  s.times = equispaced(0.0, 60.0, 121);
  s.prior = PriorSpec::broadcast(s.model, 5.0, 25.0, 2.0, 16.0, 1.0, 1.0);
  s.solver = default_solver_for(s.model);
  // Roughly the k = 12 posterior SDs of (theta1, theta2, x1(0), x2(0)).
  s.rw_steps = Eigen::Vector4d(0.003, 0.003, 0.03, 0.12);
  return s;
}

}  // namespace detail

/// theta = (2, 1), x(0) = (7, -10), sigma = (1, 3), 121 points on [0, 60].
inline Scenario scenario1() { return detail::two_state(models::scenario1()); }

/// As scenario1 with |theta1| in the dynamics.
inline Scenario scenario2() { return detail::two_state(models::scenario2()); }

/// Published PDC k = 20 estimates as generating values. N(0) and R(0) are fixed;
/// C(0) and B(0) are estimated. Not the laboratory data.
inline Scenario prey_predator() {
  Scenario s;
  s.model = models::prey_predator();
  s.model.initial = {40.0, std::nullopt, 2.0, std::nullopt};
  s.theta = {3.501, 3.211, 0.007, 32.42, 0.101, 0.249, -0.042};
  s.x0 = {40.0, 20.0, 2.0, 5.0};
  s.sigma = {5.0, 1.0};
  s.times = equispaced(0.0, 20.0, 21);
  s.surrogate = true;
  PriorSpec p;
  // Centered at the profiling estimates, SD twice their reported SEs.
  p.ode_mean = (Eigen::VectorXd(7) << 3.9, 1.97, 4.3, 15.7, 0.11, 0.01, 0.152).finished();
  const Eigen::VectorXd se = (Eigen::VectorXd(7) << 0.47, 0.26, 1.95, 2.01, 0.02, 0.14, 0.073).finished();
  p.ode_var = (2.0 * se).array().square();
  p.ic_mean = Eigen::Vector2d(20.0, 5.0);
  p.ic_var = Eigen::Vector2d(100.0, 6.25);
  s.prior = p;
  s.solver = default_solver_for(s.model);
  s.rw_steps = (Eigen::VectorXd(9) << 0.05, 0.05, 0.05, 0.5, 0.002, 0.01, 0.01, 0.5, 0.1).finished();
  s.proposal_dim = 9;
  return s;
}

/// dx/dt = -x from x(0) = 5, sigma = 0.1 on [0, 5].
inline Scenario linear_decay() {
  Scenario s;
  s.model = models::linear_decay();
  s.x0 = {5.0};
  s.sigma = {0.1};
  s.times = equispaced(0.0, 5.0, 51);
  s.prior = PriorSpec::broadcast(s.model, 0.0, 1.0, 0.0, 100.0, 1.0, 1.0);
  s.solver = default_solver_for(s.model);
  s.rw_steps = Eigen::VectorXd::Constant(1, 0.01);
  return s;
}

/// y_i ~ N(mu, sigma^2) with sigma known, prior mu ~ N(mu0, tau0^2).
inline Scenario conjugate(double mu = 1.0, double sigma = 1.0, std::size_t n = 50, double mu0 = 0.0,
                          double tau0_sq = 100.0) {
  Scenario s;
  s.model = models::constant_mean();
  s.x0 = {mu};
  s.sigma = {sigma};
  s.times = equispaced(0.0, 1.0, n);
  s.prior = PriorSpec::broadcast(s.model, 0.0, 1.0, mu0, tau0_sq, 1.0, 1.0);
  s.prior.known_sigma2 = Eigen::VectorXd::Constant(1, sigma * sigma);
  s.solver = default_solver_for(s.model);
  s.rw_steps = Eigen::VectorXd::Constant(1, 0.1);
  return s;
}

inline std::vector<std::string> names() {
  return {"scenario1", "scenario2", "prey_predator", "linear_decay", "constant_mean"};
}

inline Scenario by_name(const std::string& name) {
  if (name == "scenario1") return scenario1();
  if (name == "scenario2") return scenario2();
  if (name == "prey_predator") return prey_predator();
  if (name == "linear_decay") return linear_decay();
  if (name == "constant_mean" || name == "conjugate") return conjugate();
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace scenarios

/// y_ij = x_j(t_i) + eps_ij, eps_ij ~ N(0, sigma_j^2).
inline Dataset simulate(const ModelSpec& model, const std::vector<double>& theta,
                        const std::vector<double>& x0, const std::vector<double>& sigma,
                        const std::vector<double>& times, const SolverConfig& solver,
                        std::uint64_t seed) {
  detail::require(sigma.size() == model.observed.size(), "simulate: one sigma per observed component");
  for (double s : sigma) detail::require(s >= 0 && std::isfinite(s), "simulate: sigma must be >= 0");
  const auto traj = solve(model, theta, x0, times, solver);
  if (!traj.ok())
    throw ConfigError("simulate: solver failed at the generating parameters (" +
                      std::string(to_string(traj.status)) + ")");
  Rng rng(derive_seed(seed, 0x51AULL));
  Dataset d;
  d.times = times;
  d.observed = model.observed;
  d.y.resize(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(model.observed.size()));
  for (std::size_t i = 0; i < times.size(); ++i)
    for (std::size_t c = 0; c < model.observed.size(); ++c) {
      const auto ii = static_cast<Eigen::Index>(i), cc = static_cast<Eigen::Index>(c);
      const double noise = std_normal(rng);
      d.y(ii, cc) = traj.states(ii, static_cast<Eigen::Index>(model.observed[c])) + sigma[c] * noise;
    }
  std::ostringstream os;
  os << "simulated(seed=" << seed << ",model=" << model.name << ",theta=";
  for (std::size_t i = 0; i < theta.size(); ++i) os << (i ? ";" : "") << format_double(theta[i]);
  os << ",x0=";
  for (std::size_t i = 0; i < x0.size(); ++i) os << (i ? ";" : "") << format_double(x0[i]);
  os << ",sigma=";
  for (std::size_t i = 0; i < sigma.size(); ++i) os << (i ? ";" : "") << format_double(sigma[i]);
  os << ')';
  d.provenance = os.str();
  return d;
}

inline Dataset simulate(const Scenario& s, std::uint64_t seed) {
  return simulate(s.model, s.theta, s.x0, s.sigma, s.times, s.solver, seed);
}

inline Problem make_problem(const Scenario& s, Dataset data) {
  return Problem(s.model, std::move(data), s.prior, s.solver);
}

struct FitMetrics {
  bool ok = false;
  double rmse = std::nan("");
  double loglik = kNegInf;
};

/// Pooled root mean squared residual over all observed components, and the
/// log-likelihood, at a raw-layout parameter vector.
inline FitMetrics fit_metrics(const Problem& pb, const ParamVector& th) {
  FitMetrics m;
  const auto lik = evaluate_likelihood(pb, th);
  if (!lik.solved) return m;
  m.ok = true;
  const double n = static_cast<double>(pb.data.size() * pb.data.observed.size());
  m.rmse = std::sqrt(lik.rss.sum() / n);
  m.loglik = lik.loglik;
  return m;
}

/// Weighted mass within `radius` of each center along one coordinate of the raw layout.
inline std::vector<double> bimodality_report(const Eigen::MatrixXd& samples, std::span<const double> w,
                                             Eigen::Index coordinate, const std::vector<double>& centers,
                                             double radius) {
  detail::require(static_cast<std::size_t>(samples.cols()) == w.size(), "bimodality: weight length mismatch");
  detail::require(coordinate >= 0 && coordinate < samples.rows(), "bimodality: coordinate out of range");
  double total = 0;
  for (double x : w) total += x;
  std::vector<double> mass(centers.size(), 0.0);
  for (Eigen::Index m = 0; m < samples.cols(); ++m)
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (std::abs(samples(coordinate, m) - centers[c]) <= radius) mass[c] += w[static_cast<std::size_t>(m)] / total;
  return mass;
}

/// Chain states after burn-in as an equally weighted sample.
inline Eigen::MatrixXd retained_chain(const DcResult& r) {
  const std::size_t half = r.summary.iterations / 2;
  std::vector<const ChainRow*> keep;
  for (const auto& row : r.chain)
    if (row.iteration > half) keep.push_back(&row);
  if (keep.empty()) return {};
  Eigen::MatrixXd x(keep.front()->theta.size(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = keep[i]->theta;
  return x;
}

enum class Method { pdc, dc };

inline const char* to_string(Method m) { return m == Method::pdc ? "pdc" : "dc"; }

inline Method method_from_string(const std::string& s) {
  if (s == "pdc") return Method::pdc;
  if (s == "dc") return Method::dc;
  throw ConfigError("unknown method '" + s + "' (expected pdc or dc)");
}

struct StudyConfig {
  std::size_t replicates = 50;
  int k = 12;
  std::size_t particles = 500;
  KernelKind pdc_kernel = KernelKind::adaptive;
  KernelKind dc_kernel = KernelKind::rwmh;
  ScheduleConfig schedule;
  std::size_t moves_per_step = 1;
  /// 0 = match the paired PDC run's ODE solve count (rounded up to even).
  std::size_t dc_iterations = 0;
  std::size_t dc_thin = 10;
  /// DC replicates whose log-likelihood at the estimate falls this far below PDC's are flagged.
  double trap_margin = 20.0;
  std::uint64_t seed = 1;
  /// Replicates run concurrently on this many threads; each fit is single-threaded.
  std::size_t threads = 1;

  void validate() const {
    detail::require(replicates >= 1, "study: replicates must be >= 1");
    detail::require(k >= 1, "study: k must be >= 1");
    detail::require(particles >= 2, "study: particles must be >= 2");
    detail::require(dc_iterations % 2 == 0, "study: dc iterations must be even");
    detail::require(trap_margin > 0, "study: trap margin must be positive");
  }
};

struct ReplicateFit {
  bool ok = false;
  std::string message;
  Eigen::VectorXd estimate, se;
  std::vector<bool> covered;
  double loglik = kNegInf;
  double rmse = std::nan("");
  std::size_t iterations = 0;
  std::size_t solves = 0;
  double seconds = 0.0;
  bool trapped = false;
  /// PDC only.
  std::optional<std::vector<double>> mode_mass;
};

struct ReplicateResult {
  std::size_t index = 0;
  std::uint64_t data_seed = 0;
  std::optional<ReplicateFit> pdc, dc;
};

struct MethodAggregate {
  std::size_t ok = 0, failed = 0, trapped = 0;
  Eigen::VectorXd mean_estimate, mean_se, coverage;
  /// Over replicates not flagged as trapped.
  Eigen::VectorXd mean_estimate_untrapped, mean_se_untrapped;

  double average_coverage() const { return coverage.size() ? coverage.mean() : std::nan(""); }
};

struct StudyReport {
  std::string scenario;
  std::vector<std::string> names;
  Eigen::VectorXd truth;
  int k = 1;
  std::size_t replicates = 0;
  std::vector<ReplicateResult> rows;
  std::optional<MethodAggregate> pdc, dc;
};

namespace detail {

inline ReplicateFit assess(const Problem& pb, const FitSummary& s, const Eigen::VectorXd& truth) {
  ReplicateFit f;
  f.ok = true;
  f.estimate = s.estimate;
  f.se = s.se;
  f.covered.resize(static_cast<std::size_t>(truth.size()));
  for (Eigen::Index i = 0; i < truth.size(); ++i)
    f.covered[static_cast<std::size_t>(i)] = s.wald_lower[i] <= truth[i] && truth[i] <= s.wald_upper[i];
  const auto m = fit_metrics(pb, s.layout_estimate);
  f.loglik = m.loglik;
  f.rmse = m.rmse;
  f.iterations = s.iterations;
  return f;
}

inline MethodAggregate aggregate(const std::vector<ReplicateResult>& rows, bool use_dc, Eigen::Index d) {
  MethodAggregate a;
  a.mean_estimate = a.mean_se = a.coverage = Eigen::VectorXd::Zero(d);
  a.mean_estimate_untrapped = a.mean_se_untrapped = Eigen::VectorXd::Zero(d);
  std::size_t untrapped = 0;
  for (const auto& r : rows) {
    const auto& f = use_dc ? r.dc : r.pdc;
    if (!f) continue;
    if (!f->ok) {
      ++a.failed;
      continue;
    }
    ++a.ok;
    a.mean_estimate += f->estimate;
    a.mean_se += f->se;
    for (Eigen::Index i = 0; i < d; ++i) a.coverage[i] += f->covered[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    if (f->trapped) {
      ++a.trapped;
    } else {
      ++untrapped;
      a.mean_estimate_untrapped += f->estimate;
      a.mean_se_untrapped += f->se;
    }
  }
  const double n = static_cast<double>(a.ok);
  if (a.ok) {
    a.mean_estimate /= n;
    a.mean_se /= n;
    a.coverage /= n;
  } else {
    a.mean_estimate.setConstant(std::nan(""));
    a.mean_se.setConstant(std::nan(""));
    a.coverage.setConstant(std::nan(""));
  }
  if (untrapped) {
    a.mean_estimate_untrapped /= static_cast<double>(untrapped);
    a.mean_se_untrapped /= static_cast<double>(untrapped);
  } else {
    a.mean_estimate_untrapped.setConstant(std::nan(""));
    a.mean_se_untrapped.setConstant(std::nan(""));
  }
  return a;
}

}  // namespace detail

/// Replicate study: simulate, fit, Wald intervals from the k-rescaled SEs.
/// `methods` may hold pdc, dc or both; with both, DC runs on the same datasets
/// with the PDC solve count as its budget and is checked for local trapping.
inline StudyReport coverage_study(const Scenario& sc, const std::vector<Method>& methods,
                                  const StudyConfig& cfg) {
  cfg.validate();
  detail::require(!methods.empty(), "study: no method selected");
  const bool run_pdc = std::find(methods.begin(), methods.end(), Method::pdc) != methods.end();
  const bool run_dc = std::find(methods.begin(), methods.end(), Method::dc) != methods.end();

  StudyReport rep;
  rep.scenario = sc.model.name;
  rep.truth = sc.truth();
  rep.k = cfg.k;
  rep.replicates = cfg.replicates;
  rep.names = ParamLayout::for_model(sc.model, !sc.prior.known_sigma2.has_value()).report_names(sc.model);
  rep.rows.resize(cfg.replicates);

  parallel_for(cfg.replicates, cfg.threads, [&](std::size_t r) {
    ReplicateResult& row = rep.rows[r];
    row.index = r;
    row.data_seed = derive_seed(cfg.seed, 3 * r);
    std::optional<Problem> pb;
    try {
      pb.emplace(make_problem(sc, simulate(sc, row.data_seed)));
    } catch (const std::exception& e) {
      ReplicateFit f;
      f.message = e.what();
      if (run_pdc) row.pdc = f;
      if (run_dc) row.dc = f;
      return;
    }
    std::size_t budget = cfg.dc_iterations;
    if (run_pdc) {
      PdcConfig pc;
      pc.particles = cfg.particles;
      pc.k = cfg.k;
      pc.kernel = sc.kernel(cfg.pdc_kernel);
      pc.kernel.moves_per_step = cfg.moves_per_step;
      pc.schedule = cfg.schedule;
      pc.seed = derive_seed(cfg.seed, 3 * r + 1);
      pc.threads = 1;
      try {
        const auto res = pdc_run(*pb, Reference::prior(), pc);
        ReplicateFit f = detail::assess(*pb, res.summary, rep.truth);
        f.solves = res.solves;
        f.seconds = res.seconds;
        if (!sc.model.sign_symmetric.empty()) {
          const auto p = static_cast<Eigen::Index>(sc.model.sign_symmetric.front());
          const double c = std::abs(sc.theta[static_cast<std::size_t>(p)]);
          f.mode_mass = bimodality_report(res.particles.matrix(), res.particles.weights, p, {c, -c}, 0.5);
        }
        if (budget == 0) budget = res.solves + (res.solves % 2);
        row.pdc = std::move(f);
      } catch (const NumericalError& e) {
        ReplicateFit f;
        f.message = e.what();
        row.pdc = std::move(f);
      }
    }
    if (run_dc) {
      DcConfig dc;
      dc.iterations = budget > 0 ? budget : 300000;
      dc.thin = cfg.dc_thin;
      dc.k = cfg.k;
      dc.kernel = sc.kernel(cfg.dc_kernel);
      dc.seed = derive_seed(cfg.seed, 3 * r + 2);
      try {
        const auto res = dc_run(*pb, dc);
        ReplicateFit f = detail::assess(*pb, res.summary, rep.truth);
        f.solves = res.solves;
        f.seconds = res.seconds;
        if (row.pdc && row.pdc->ok) f.trapped = f.loglik < row.pdc->loglik - cfg.trap_margin;
        if (!sc.model.sign_symmetric.empty()) {
          const auto p = static_cast<Eigen::Index>(sc.model.sign_symmetric.front());
          const double c = std::abs(sc.theta[static_cast<std::size_t>(p)]);
          const Eigen::MatrixXd kept = retained_chain(res);
          std::vector<double> w(static_cast<std::size_t>(kept.cols()), 1.0);
          f.mode_mass = bimodality_report(kept, w, p, {c, -c}, 0.5);
        }
        row.dc = std::move(f);
      } catch (const NumericalError& e) {
        ReplicateFit f;
        f.message = e.what();
        row.dc = std::move(f);
      }
    }
  });
  const auto d = rep.truth.size();
  if (run_pdc) rep.pdc = detail::aggregate(rep.rows, false, d);
  if (run_dc) rep.dc = detail::aggregate(rep.rows, true, d);
  return rep;
}

/// One row per parameter: truth, mean estimate, mean SE and coverage for each method.
inline void write_study_csv(std::ostream& os, const StudyReport& rep,
                            const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "# scenario=" << rep.scenario << ", k=" << rep.k << ", replicates=" << rep.replicates << '\n';
  for (const auto* m : {&rep.pdc, &rep.dc})
    if (*m)
      os << "# " << (m == &rep.pdc ? "pdc" : "dc") << ": ok=" << (*m)->ok << ", failed=" << (*m)->failed
         << ", trapped=" << (*m)->trapped << '\n';
  os << "parameter,truth";
  if (rep.pdc) os << ",pdc_estimate,pdc_se,pdc_coverage";
  if (rep.dc) os << ",dc_estimate,dc_se,dc_coverage,dc_estimate_untrapped,dc_se_untrapped";
  os << '\n';
  for (std::size_t i = 0; i < rep.names.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    os << rep.names[i] << ',' << format_double(rep.truth[ii]);
    if (rep.pdc)
      os << ',' << format_double(rep.pdc->mean_estimate[ii]) << ',' << format_double(rep.pdc->mean_se[ii]) << ','
         << format_double(rep.pdc->coverage[ii]);
    if (rep.dc)
      os << ',' << format_double(rep.dc->mean_estimate[ii]) << ',' << format_double(rep.dc->mean_se[ii]) << ','
         << format_double(rep.dc->coverage[ii]) << ',' << format_double(rep.dc->mean_estimate_untrapped[ii])
         << ',' << format_double(rep.dc->mean_se_untrapped[ii]);
    os << '\n';
  }
}

/// One row per replicate and method.
inline void write_replicates_csv(std::ostream& os, const StudyReport& rep,
                                 const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "replicate,data_seed,method,status,loglik,rmse,iterations,solves,time_sec,trapped,mass_pos,mass_neg";
  for (const auto& n : rep.names) os << ',' << n << ",se_" << n << ",covered_" << n;
  os << '\n';
  for (const auto& r : rep.rows)
    for (int m = 0; m < 2; ++m) {
      const auto& f = m == 0 ? r.pdc : r.dc;
      if (!f) continue;
      os << r.index << ',' << r.data_seed << ',' << (m == 0 ? "pdc" : "dc") << ','
         << (f->ok ? "ok" : "failed") << ',' << format_double(f->loglik) << ',' << format_double(f->rmse) << ','
         << f->iterations << ',' << f->solves << ',' << format_double(f->seconds) << ',' << (f->trapped ? 1 : 0)
         << ',' << (f->mode_mass ? format_double((*f->mode_mass)[0]) : "nan") << ','
         << (f->mode_mass ? format_double((*f->mode_mass)[1]) : "nan");
      for (std::size_t i = 0; i < rep.names.size(); ++i) {
        if (f->ok) {
          const auto ii = static_cast<Eigen::Index>(i);
          os << ',' << format_double(f->estimate[ii]) << ',' << format_double(f->se[ii]) << ','
             << (f->covered[i] ? 1 : 0);
        } else {
          os << ",nan,nan,0";
        }
      }
      os << '\n';
    }
}

struct BenchmarkConfig {
  std::vector<int> k_sequence = {1, 5, 10, 15, 20, 25, 30, 40, 50};
  std::vector<Method> methods = {Method::dc, Method::pdc};
  std::vector<KernelKind> kernels = {KernelKind::rwmh, KernelKind::adaptive};
  std::size_t particles = 500;
  ScheduleConfig schedule;
  /// A run whose final-kernel acceptance rate falls below this is degenerate.
  double min_accept_rate = 0.01;
  /// PDC: fewer distinct final particles than this fraction of M is degenerate.
  double min_distinct_fraction = 0.1;
  /// 0 = each DC run gets the ODE solve count of the PDC run at the same k and kernel
  /// (or, when PDC is not in the grid, 300000 iterations).
  std::size_t dc_iterations = 0;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    detail::require(!k_sequence.empty() && k_sequence.front() >= 1, "benchmark: bad k sequence");
    for (std::size_t i = 1; i < k_sequence.size(); ++i)
      detail::require(k_sequence[i] > k_sequence[i - 1], "benchmark: k sequence must be increasing");
    detail::require(!methods.empty() && !kernels.empty(), "benchmark: empty grid");
    detail::require(particles >= 2, "benchmark: particles must be >= 2");
    detail::require(dc_iterations % 2 == 0, "benchmark: dc iterations must be even");
  }
};

struct BenchmarkPoint {
  int k = 1;
  bool completed = false;
  bool degenerate = false;
  std::string message;
  double accept_rate = std::nan("");
  double loglik = kNegInf;
  double rmse = std::nan("");
  std::size_t iterations = 0;
  std::size_t solves = 0;
  double seconds = 0.0;
};

struct BenchmarkCell {
  Method method = Method::pdc;
  KernelKind kernel = KernelKind::adaptive;
  /// Largest k reached before the first failure or degenerate run (0 if none).
  int k_max = 0;
  double llik_max = kNegInf;
  double rmse_min = std::nan("");
  std::size_t solves = 0;
  std::size_t kernel_moves = 0;
  std::vector<BenchmarkPoint> points;
};

struct BenchmarkTable {
  std::vector<BenchmarkCell> cells;

  const BenchmarkCell* find(Method m, KernelKind k) const {
    for (const auto& c : cells)
      if (c.method == m && c.kernel == k) return &c;
    return nullptr;
  }
};

namespace detail {

inline void close_cell(BenchmarkCell& cell) {
  for (const auto& p : cell.points) {
    if (!p.completed || p.degenerate) break;
    cell.k_max = p.k;
    if (p.loglik > cell.llik_max) cell.llik_max = p.loglik;
    if (std::isfinite(p.rmse) && !(p.rmse >= cell.rmse_min)) cell.rmse_min = p.rmse;
  }
}

}  // namespace detail

/// The method x kernel grid. PDC walks the k sequence with adaptive reference
/// recycling; DC walks it warm-started from the previous chain's last state. Each
/// cell stops at its first failed or degenerate k.
inline BenchmarkTable kernel_benchmark(const Problem& pb, const Scenario& sc, const BenchmarkConfig& cfg) {
  cfg.validate();
  BenchmarkTable table;
  std::vector<std::vector<std::size_t>> pdc_solves(cfg.kernels.size());
  // PDC first so DC can use its solve counts as budgets.
  std::vector<Method> order = cfg.methods;
  std::stable_sort(order.begin(), order.end(), [](Method a, Method b) { return a == Method::pdc && b != Method::pdc; });
  for (Method method : order)
    for (std::size_t ki = 0; ki < cfg.kernels.size(); ++ki) {
      const KernelKind kernel = cfg.kernels[ki];
      BenchmarkCell cell;
      cell.method = method;
      cell.kernel = kernel;
      const std::uint64_t cell_seed = derive_seed(cfg.seed, 16 * static_cast<std::uint64_t>(method) + ki);
      std::optional<FitSummary> previous;
      std::optional<ParamVector> last_state;
      for (std::size_t step = 0; step < cfg.k_sequence.size(); ++step) {
        const int k = cfg.k_sequence[step];
        BenchmarkPoint pt;
        pt.k = k;
        const auto t0 = std::chrono::steady_clock::now();
        try {
          if (method == Method::pdc) {
            PdcConfig pc;
            pc.particles = cfg.particles;
            pc.k = k;
            pc.kernel = sc.kernel(kernel);
            pc.schedule = cfg.schedule;
            pc.seed = derive_seed(cell_seed, static_cast<std::uint64_t>(k));
            pc.threads = cfg.threads;
            Reference ref = Reference::prior();
            if (previous) {
              auto choice = make_reference(*previous);
              if (!choice.fell_back) ref = choice.reference;
            }
            const auto res = pdc_run(pb, ref, pc);
            pt.completed = true;
            pt.accept_rate = res.trace.back().accept_rate;
            pt.iterations = res.summary.iterations;
            pt.solves = res.solves;
            cell.kernel_moves += res.kernel_moves;
            const auto distinct = detail::count_distinct_columns(res.particles.matrix(), res.particles.weights);
            pt.degenerate = pt.accept_rate < cfg.min_accept_rate ||
                            static_cast<double>(distinct) < cfg.min_distinct_fraction * static_cast<double>(cfg.particles);
            const auto fm = fit_metrics(pb, res.summary.layout_estimate);
            pt.loglik = fm.loglik;
            pt.rmse = fm.rmse;
            previous = res.summary;
            pdc_solves[ki].push_back(res.solves);
          } else {
            DcConfig dc;
            std::size_t budget = cfg.dc_iterations;
            if (budget == 0) {
              const auto& ps = pdc_solves[ki];
              budget = step < ps.size() ? ps[step] : (ps.empty() ? 300000 : ps.back());
            }
            dc.iterations = budget + (budget % 2);
            dc.k = k;
            dc.kernel = sc.kernel(kernel);
            dc.seed = derive_seed(cell_seed, static_cast<std::uint64_t>(k));
            dc.init = last_state;
            const auto res = dc_run(pb, dc);
            pt.completed = true;
            pt.accept_rate = res.accept_rate_retained;
            pt.iterations = res.summary.iterations;
            pt.solves = res.solves;
            cell.kernel_moves += res.summary.iterations;
            pt.degenerate = pt.accept_rate < cfg.min_accept_rate || res.mixing_warning;
            const auto fm = fit_metrics(pb, res.summary.layout_estimate);
            pt.loglik = fm.loglik;
            pt.rmse = fm.rmse;
            last_state = res.chain.empty() ? std::nullopt : std::optional<ParamVector>(res.chain.back().theta);
          }
        } catch (const NumericalError& e) {
          pt.message = e.what();
        }
        pt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        cell.solves += pt.solves;
        const bool stop = !pt.completed || pt.degenerate;
        cell.points.push_back(std::move(pt));
        if (stop) break;
      }
      detail::close_cell(cell);
      table.cells.push_back(std::move(cell));
    }
  return table;
}

inline void write_benchmark_csv(std::ostream& os, const BenchmarkTable& t,
                                const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "method,kernel,k_max,llik_max,rmse_min,solves,kernel_moves\n";
  for (const auto& c : t.cells)
    os << to_string(c.method) << ',' << to_string(c.kernel) << ',' << c.k_max << ',' << format_double(c.llik_max)
       << ',' << format_double(c.rmse_min) << ',' << c.solves << ',' << c.kernel_moves << '\n';
}

inline void write_benchmark_points_csv(std::ostream& os, const BenchmarkTable& t,
                                       const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "method,kernel,k,status,accept_rate,loglik,rmse,iterations,solves,time_sec\n";
  for (const auto& c : t.cells)
    for (const auto& p : c.points)
      os << to_string(c.method) << ',' << to_string(c.kernel) << ',' << p.k << ','
         << (!p.completed ? "failed" : (p.degenerate ? "degenerate" : "ok")) << ','
         << format_double(p.accept_rate) << ',' << format_double(p.loglik) << ',' << format_double(p.rmse) << ','
         << p.iterations << ',' << p.solves << ',' << format_double(p.seconds) << '\n';
}

}  // namespace pdc
