#pragma once

// Clone ladder: PDC at increasing k, optionally starting each run from a
// Gaussian fitted to the previous run's particles, with the standardized
// largest-eigenvalue diagnostic lambda_k^S = lambda_k^max / lambda_1^max.

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/data.hpp"
#include "pdc/error.hpp"
#include "pdc/prob.hpp"
#include "pdc/smc.hpp"
#include "pdc/summary.hpp"

namespace pdc {

enum class InitMode { adaptive, prior };

inline const char* to_string(InitMode m) { return m == InitMode::adaptive ? "adaptive" : "prior"; }

inline InitMode init_mode_from_string(const std::string& s) {
  if (s == "adaptive") return InitMode::adaptive;
  if (s == "prior") return InitMode::prior;
  throw ConfigError("unknown init mode '" + s + "' (expected adaptive or prior)");
}

struct LadderConfig {
  std::vector<int> k_sequence = {1, 5, 10, 20, 30, 40, 50};
  InitMode init = InitMode::adaptive;
  double lambda_threshold = 0.05;
  /// |k lambda_k^S - k' lambda_k'^S| / (k' lambda_k'^S) below this counts as stable.
  double ratio_tolerance = 0.2;
  /// Ridge added to the reference covariance, relative to trace / dim.
  double ref_regularization = 1e-8;
  /// Stop at the first k that meets the rule; false runs the whole sequence.
  bool stop_early = true;

  void validate() const {
    detail::require(!k_sequence.empty(), "ladder: empty k sequence");
    detail::require(k_sequence.front() == 1, "ladder: k sequence must start at 1");
    for (std::size_t i = 1; i < k_sequence.size(); ++i)
      detail::require(k_sequence[i] > k_sequence[i - 1], "ladder: k sequence must be strictly increasing");
    detail::require(lambda_threshold > 0, "ladder: lambda threshold must be positive");
    detail::require(ratio_tolerance > 0, "ladder: ratio tolerance must be positive");
    detail::require(ref_regularization >= 0, "ladder: ref_regularization must be >= 0");
  }
};

struct ReferenceChoice {
  Reference reference;
  bool fell_back = false;
  std::string warning;
};

/// Gaussian with the weighted particle mean and (unscaled) weighted covariance
/// of a previous run, on the raw parameter layout. Falls back to the prior when
/// the covariance is degenerate.
inline ReferenceChoice make_reference(const FitSummary& s, double ridge = 1e-8) {
  ReferenceChoice out{Reference::prior(), true, {}};
  if (s.degenerate) {
    out.warning = "degenerate particle summary; using the prior reference";
    return out;
  }
  const auto d = s.layout_covariance.rows();
  if (d == 0 || !s.layout_covariance.allFinite() || !s.layout_mean.allFinite()) {
    out.warning = "non-finite particle covariance; using the prior reference";
    return out;
  }
  Eigen::MatrixXd c = 0.5 * (s.layout_covariance + s.layout_covariance.transpose());
  const double tr = c.trace();
  if (!(tr > 0)) {
    out.warning = "zero particle covariance; using the prior reference";
    return out;
  }
  c.diagonal().array() += ridge * tr / static_cast<double>(d);
  try {
    out.reference = Reference::gaussian(s.layout_mean, c);
    out.fell_back = false;
  } catch (const NumericalError&) {
    out.warning = "particle covariance not positive definite after ridge; using the prior reference";
  }
  return out;
}

inline double largest_eigenvalue(const Eigen::MatrixXd& c) {
  if (c.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (c + c.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

struct EigenDiagnostic {
  std::vector<double> lambda_max;
  std::vector<double> lambda_s;
};

/// lambda_k^max of each summary's unscaled covariance and its ratio to the k = 1 value.
/// summaries[0] must be the k = 1 run.
inline EigenDiagnostic eigen_diagnostic(const std::vector<FitSummary>& summaries) {
  detail::require(!summaries.empty() && summaries.front().k == 1,
                  "eigen diagnostic: the k = 1 run is required");
  EigenDiagnostic d;
  for (const auto& s : summaries) d.lambda_max.push_back(largest_eigenvalue(s.posterior_covariance));
  const double l1 = d.lambda_max.front();
  if (!(l1 > 0)) throw NumericalError("eigen diagnostic: lambda_1^max is not positive");
  for (double l : d.lambda_max) d.lambda_s.push_back(l / l1);
  return d;
}

/// The stopping rule on the last two ladder points.
inline bool ladder_should_stop(int k_prev, double ls_prev, int k, double ls, double threshold,
                               double tolerance) {
  if (!(ls < threshold)) return false;
  const double a = static_cast<double>(k) * ls, b = static_cast<double>(k_prev) * ls_prev;
  return b > 0 && std::abs(a - b) / b < tolerance;
}

struct LadderRow {
  int k = 1;
  bool failed = false;
  std::string message;
  /// Reference actually used: "prior" or "adaptive".
  std::string reference = "prior";
  std::size_t iterations = 0;
  double lambda_max = std::nan("");
  double lambda_s = std::nan("");
  double seconds = 0.0;
  std::size_t solves = 0;
  FitSummary summary;
};

struct LadderReport {
  InitMode init = InitMode::adaptive;
  std::vector<LadderRow> rows;
  bool stopped = false;
  std::optional<int> chosen_k;
  /// Ladder points where lambda^S increased relative to the previous point.
  std::vector<int> monotonicity_violations;
  std::vector<std::string> warnings;

  double total_seconds() const {
    double s = 0;
    for (const auto& r : rows) s += r.seconds;
    return s;
  }
};

/// Runs PDC at each k in turn. `base` supplies particles, kernel and schedule; its
/// k and seed are overridden per ladder point (seed derived from base.seed and k).
inline LadderReport ladder_run(const Problem& pb, const LadderConfig& cfg, const PdcConfig& base) {
  cfg.validate();
  LadderReport rep;
  rep.init = cfg.init;
  std::optional<FitSummary> previous;
  std::vector<FitSummary> ok_summaries;
  std::vector<std::size_t> ok_rows;

  for (int k : cfg.k_sequence) {
    LadderRow row;
    row.k = k;
    PdcConfig pc = base;
    pc.k = k;
    pc.seed = derive_seed(base.seed, static_cast<std::uint64_t>(k));
    Reference ref = Reference::prior();
    if (cfg.init == InitMode::adaptive && k > 1 && previous) {
      auto choice = make_reference(*previous, cfg.ref_regularization);
      if (choice.fell_back) {
        rep.warnings.push_back("k=" + std::to_string(k) + ": " + choice.warning);
      } else {
        ref = choice.reference;
        row.reference = "adaptive";
      }
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<PdcResult> res;
    try {
      res = pdc_run(pb, ref, pc);
    } catch (const NumericalError& e) {
      row.message = e.what();
      if (!ref.is_prior()) {
        rep.warnings.push_back("k=" + std::to_string(k) + ": adaptive run failed (" + row.message +
                               "); retrying from the prior");
        row.reference = "prior";
        try {
          res = pdc_run(pb, Reference::prior(), pc);
          row.message.clear();
        } catch (const NumericalError& e2) {
          row.message = e2.what();
        }
      }
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!res) {
      row.failed = true;
      rep.rows.push_back(std::move(row));
      previous.reset();
      continue;
    }
    row.iterations = res->summary.iterations;
    row.solves = res->solves;
    row.summary = res->summary;
    previous = res->summary;
    rep.rows.push_back(std::move(row));

    if (k == 1 || !ok_summaries.empty()) {
      ok_summaries.push_back(rep.rows.back().summary);
      ok_rows.push_back(rep.rows.size() - 1);
    }
    if (ok_summaries.empty() || ok_summaries.front().k != 1) continue;
    const auto diag = eigen_diagnostic(ok_summaries);
    const std::size_t last = ok_summaries.size() - 1;
    auto& cur = rep.rows[ok_rows[last]];
    cur.lambda_max = diag.lambda_max[last];
    cur.lambda_s = diag.lambda_s[last];
    if (last >= 1) {
      const auto& prev = rep.rows[ok_rows[last - 1]];
      if (cur.lambda_s > prev.lambda_s) rep.monotonicity_violations.push_back(k);
      if (ladder_should_stop(prev.k, prev.lambda_s, k, cur.lambda_s, cfg.lambda_threshold,
                             cfg.ratio_tolerance) &&
          !rep.stopped) {
        rep.stopped = true;
        rep.chosen_k = k;
        if (cfg.stop_early) break;
      }
    }
  }
  return rep;
}

inline void write_ladder_csv(std::ostream& os, const LadderReport& rep,
                             const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << '\n';
  if (rep.stopped) os << "# chosen_k=" << *rep.chosen_k << '\n';
  std::vector<std::string> names;
  for (const auto& r : rep.rows)
    if (!r.failed) {
      names = r.summary.names;
      break;
    }
  os << "k,R_k,lambda_max,lambda_S,time_sec,llik_at_mle,init,reference,status";
  for (const auto& n : names) os << ',' << n << ",se_" << n;
  os << '\n';
  for (const auto& r : rep.rows) {
    os << r.k << ',' << r.iterations << ',' << format_double(r.lambda_max) << ','
       << format_double(r.lambda_s) << ',' << format_double(r.seconds) << ','
       << format_double(r.failed ? std::nan("") : r.summary.loglik_at_estimate) << ',' << to_string(rep.init)
       << ',' << r.reference << ',' << (r.failed ? "failed" : "ok");
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (r.failed) {
        os << ",nan,nan";
      } else {
        const auto ii = static_cast<Eigen::Index>(i);
        os << ',' << format_double(r.summary.estimate[ii]) << ',' << format_double(r.summary.se[ii]);
      }
    }
    os << '\n';
  }
}

}  // namespace pdc
