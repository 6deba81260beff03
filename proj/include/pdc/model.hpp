#pragma once

// ODE system descriptors and the built-in systems.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdc/error.hpp"

namespace pdc {

/// Right-hand side g(x | theta_ode). Writes dx/dt into `dxdt` and returns
/// false when the evaluation hits a pole or produces a non-finite value.
using RhsFn = std::function<bool(double t, std::span<const double> x,
                                 std::span<const double> theta,
                                 std::span<double> dxdt)>;

enum class SolverMethod { dopri5, rosenbrock4, rk4 };

/// Denominators smaller than this in magnitude are treated as a pole.
inline constexpr double kPoleTolerance = 1e-12;

struct ModelSpec {
  std::string name;
  std::size_t dim = 0;
  std::vector<std::string> state_names;
  std::vector<std::string> param_names;
  RhsFn rhs;
  /// Observed state components (0-based, strictly increasing).
  std::vector<std::size_t> observed;
  /// Per-component initial condition: nullopt = estimated, value = held fixed.
  std::vector<std::optional<double>> initial;
  /// Known experimental constants baked into `rhs` (kept for provenance).
  std::map<std::string, double> constants;
  /// Parameters whose sign is not identifiable (rhs even in them); reported as |theta|.
  std::vector<std::size_t> sign_symmetric;
  SolverMethod preferred_method = SolverMethod::dopri5;

  std::size_t num_params() const { return param_names.size(); }

  std::size_t num_free_initial() const {
    std::size_t n = 0;
    for (const auto& v : initial) n += v.has_value() ? 0 : 1;
    return n;
  }

  std::vector<std::size_t> free_initial() const {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < initial.size(); ++j)
      if (!initial[j]) idx.push_back(j);
    return idx;
  }

  /// P + estimated initial conditions + one variance per observed component.
  std::size_t num_estimated() const {
    return num_params() + num_free_initial() + observed.size();
  }

  void validate() const {
    detail::require(dim > 0, "model '" + name + "': dimension must be positive");
    detail::require(state_names.size() == dim, "model '" + name + "': state_names size != dim");
    detail::require(initial.size() == dim, "model '" + name + "': initial size != dim");
    detail::require(static_cast<bool>(rhs), "model '" + name + "': rhs not set");
    detail::require(!observed.empty(), "model '" + name + "': observed set is empty");
    for (std::size_t i = 0; i < observed.size(); ++i) {
      detail::require(observed[i] < dim, "model '" + name + "': observed index out of range");
      detail::require(i == 0 || observed[i] > observed[i - 1],
                      "model '" + name + "': observed indices must be strictly increasing");
    }
    for (auto p : sign_symmetric)
      detail::require(p < num_params(), "model '" + name + "': sign_symmetric index out of range");
  }

  /// Fix or free the initial condition of component `j`.
  ModelSpec& fix_initial(std::size_t j, std::optional<double> value) {
    detail::require(j < dim, "fix_initial: component out of range");
    initial[j] = value;
    return *this;
  }
};

/// Evaluates g at (t, x, theta). nullopt signals a numeric failure.
inline std::optional<std::vector<double>> eval_rhs(const ModelSpec& model, double t,
                                                   std::span<const double> x,
                                                   std::span<const double> theta) {
  detail::require(x.size() == model.dim, "eval_rhs: state length != model dimension");
  detail::require(theta.size() == model.num_params(), "eval_rhs: parameter length mismatch");
  std::vector<double> dx(model.dim);
  if (!model.rhs(t, x, theta, dx)) return std::nullopt;
  for (double v : dx)
    if (!std::isfinite(v)) return std::nullopt;
  return dx;
}

namespace models {

namespace detail {

inline bool safe_ratio(double num, double den, double& out) {
  if (std::abs(den) < kPoleTolerance) return false;
  out = num / den;
  return std::isfinite(out);
}

inline ModelSpec two_state_base(std::string name, bool abs_theta1) {
  ModelSpec m;
  m.name = std::move(name);
  m.dim = 2;
  m.state_names = {"x1", "x2"};
  m.param_names = {"theta1", "theta2"};
  m.observed = {0, 1};
  m.initial = {std::nullopt, std::nullopt};
  if (abs_theta1) m.sign_symmetric = {0};
  m.rhs = [abs_theta1](double, std::span<const double> x, std::span<const double> th,
                       std::span<double> dx) {
    double ratio = 0.0;
    if (!safe_ratio(72.0, 36.0 + x[1], ratio)) return false;
    const double t1 = abs_theta1 ? std::abs(th[0]) : th[0];
    dx[0] = ratio - t1;
    dx[1] = th[1] * x[0] - 1.0;
    return std::isfinite(dx[0]) && std::isfinite(dx[1]);
  };
  return m;
}

}  // namespace detail

/// dx1/dt = 72/(36 + x2) - theta1,  dx2/dt = theta2 x1 - 1.
inline ModelSpec scenario1() { return detail::two_state_base("scenario1", false); }

/// Same as scenario1 with |theta1|; two symmetric modes in theta1.
inline ModelSpec scenario2() { return detail::two_state_base("scenario2", true); }

/// Nitrogen / Chlorella / reproducing Brachionus / total Brachionus chemostat.
/// Parameters: b_C, b_B, k_C, k_B, epsilon, alpha, m. Only C and B are observed.
inline ModelSpec prey_predator(double dilution = 0.68, double inflow_nitrogen = 80.0) {
  ModelSpec m;
  m.name = "prey_predator";
  m.dim = 4;
  m.state_names = {"N", "C", "R", "B"};
  m.param_names = {"b_C", "b_B", "k_C", "k_B", "epsilon", "alpha", "m"};
  m.observed = {1, 3};
  m.initial = {std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  m.constants = {{"delta", dilution}, {"N_star", inflow_nitrogen}};
  const double delta = dilution;
  const double nstar = inflow_nitrogen;
  m.rhs = [delta, nstar](double, std::span<const double> x, std::span<const double> th,
                         std::span<double> dx) {
    const double n = x[0], c = x[1], r = x[2], b = x[3];
    const double b_c = th[0], b_b = th[1], k_c = th[2], k_b = th[3];
    const double eps = th[4], alpha = th[5], mort = th[6];
    double f_c = 0.0, f_b = 0.0, inv_eps = 0.0;
    if (!detail::safe_ratio(b_c * n, k_c + n, f_c)) return false;
    if (!detail::safe_ratio(b_b * c, k_b + c, f_b)) return false;
    if (!detail::safe_ratio(1.0, eps, inv_eps)) return false;
    dx[0] = delta * (nstar - n) - f_c * c;
    dx[1] = f_c * c - f_b * b * inv_eps - delta * c;
    dx[2] = f_b * r - (delta + alpha + mort) * r;
    dx[3] = f_b * r - (delta + mort) * b;
    for (double v : dx)
      if (!std::isfinite(v)) return false;
    return true;
  };
  return m;
}

/// dx/dt = -x, no parameters; x(t) = x0 e^{-t}.
inline ModelSpec linear_decay() {
  ModelSpec m;
  m.name = "linear_decay";
  m.dim = 1;
  m.state_names = {"x"};
  m.param_names = {};
  m.observed = {0};
  m.initial = {std::nullopt};
  m.rhs = [](double, std::span<const double> x, std::span<const double>, std::span<double> dx) {
    dx[0] = -x[0];
    return true;
  };
  return m;
}

/// dx/dt = 0 with estimated x(0): y_i ~ N(x0, sigma^2). Conjugate-Gaussian test target.
inline ModelSpec constant_mean() {
  ModelSpec m;
  m.name = "constant_mean";
  m.dim = 1;
  m.state_names = {"x"};
  m.param_names = {};
  m.observed = {0};
  m.initial = {std::nullopt};
  m.rhs = [](double, std::span<const double>, std::span<const double>, std::span<double> dx) {
    dx[0] = 0.0;
    return true;
  };
  return m;
}

inline const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names = {"scenario1", "scenario2", "prey_predator",
                                                 "linear_decay", "constant_mean"};
  return names;
}

inline ModelSpec by_name(const std::string& name) {
  if (name == "scenario1") return scenario1();
  if (name == "scenario2") return scenario2();
  if (name == "prey_predator") return prey_predator();
  if (name == "linear_decay") return linear_decay();
  if (name == "constant_mean") return constant_mean();
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace models
}  // namespace pdc
