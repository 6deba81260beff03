#pragma once

// Forward integration of a ModelSpec at requested observation times.
//
// dopri5      explicit Dormand-Prince 5(4), FSAL, 4th-order dense output
// rosenbrock4 linearly implicit L-stable Rosenbrock 4(3), for stiff systems
// rk4         fixed-step classical RK4, profiling only

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pdc/error.hpp"
#include "pdc/model.hpp"

namespace pdc {

struct SolverConfig {
  double rel_tol = 1e-6;
  double abs_tol = 1e-8;
  std::size_t max_steps = 100000;
  /// 0 selects an automatic initial step.
  double initial_step = 0.0;
  /// 0 selects 1e-10 * (t_N - t_1).
  double min_step = 0.0;
  SolverMethod method = SolverMethod::dopri5;
  /// Step used by the fixed-step rk4 method.
  double fixed_step = 1e-3;

  void validate() const {
    detail::require(rel_tol > 0 && abs_tol > 0, "solver: tolerances must be positive");
    detail::require(max_steps > 0, "solver: max_steps must be positive");
    detail::require(initial_step >= 0 && min_step >= 0, "solver: step sizes must be >= 0");
    detail::require(initial_step == 0 || min_step == 0 || min_step < initial_step,
                    "solver: min_step must be smaller than initial_step");
    detail::require(fixed_step > 0, "solver: fixed_step must be positive");
  }
};

/// Solver defaults with the model's preferred integration method.
inline SolverConfig default_solver_for(const ModelSpec& model) {
  SolverConfig cfg;
  cfg.method = model.preferred_method;
  return cfg;
}

enum class SolveStatus { ok, step_underflow, max_steps, rhs_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::ok: return "ok";
    case SolveStatus::step_underflow: return "step_underflow";
    case SolveStatus::max_steps: return "max_steps";
    case SolveStatus::rhs_failure: return "rhs_failure";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<double> times;
  /// Row i holds the state at times[i]. On failure only rows before t_fail are present.
  Eigen::MatrixXd states;
  SolveStatus status = SolveStatus::ok;
  double t_fail = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  std::size_t rhs_evals = 0;

  bool ok() const { return status == SolveStatus::ok; }
};

namespace detail {

struct RhsFailure {};

class RhsCaller {
 public:
  RhsCaller(const ModelSpec& model, std::span<const double> theta)
      : model_(model), theta_(theta) {}

  bool operator()(double t, std::span<const double> x, std::span<double> dx) {
    ++evals;
    if (!model_.rhs(t, x, theta_, dx)) return false;
    for (double v : dx)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::size_t evals = 0;

 private:
  const ModelSpec& model_;
  std::span<const double> theta_;
};

inline double rms_scaled(std::span<const double> v, std::span<const double> y0,
                         std::span<const double> y1, double atol, double rtol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double e = v[i] / sc;
    acc += e * e;
  }
  return std::sqrt(acc / static_cast<double>(v.size()));
}

// Dormand-Prince tableau.
inline constexpr std::array<double, 7> kDpC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double kDpA[6][5] = {
    {0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656}};
inline constexpr std::array<double, 6> kDpB = {35.0 / 384, 0.0, 500.0 / 1113,
                                               125.0 / 192, -2187.0 / 6784, 11.0 / 84};
inline constexpr std::array<double, 7> kDpE = {-71.0 / 57600, 0.0, 71.0 / 16695, -71.0 / 1920,
                                               17253.0 / 339200, -22.0 / 525, 1.0 / 40};
// Continuous extension: y(t0 + s h) = y0 + h * sum_i k_i * sum_p P[i][p] s^(p+1).
inline constexpr double kDpP[7][4] = {
    {1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
    {0, 0, 0, 0},
    {0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
     87487479700.0 / 32700410799},
    {0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
    {0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
     701980252875.0 / 199316789632},
    {0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
    {0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423}};

inline double auto_initial_step(RhsCaller& f, double t0, std::span<const double> y0,
                                std::span<const double> f0, double atol, double rtol,
                                double span, bool& ok) {
  const std::size_t n = y0.size();
  const double d0 = rms_scaled(y0, y0, y0, atol, rtol);
  const double d1 = rms_scaled(f0, y0, y0, atol, rtol);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  std::vector<double> y1(n), f1(n), df(n);
  for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + h0 * f0[i];
  ok = f(t0 + h0, y1, f1);
  if (!ok) return h0 * 1e-3;
  for (std::size_t i = 0; i < n; ++i) df[i] = f1[i] - f0[i];
  const double d2 = rms_scaled(df, y0, y0, atol, rtol) / h0;
  double h1 = (std::max(d1, d2) <= 1e-15) ? std::max(1e-6, h0 * 1e-3)
                                           : std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min({100 * h0, h1, span});
}

inline void dopri5(const ModelSpec& model, std::span<const double> theta,
                   std::span<const double> x0, const SolverConfig& cfg, Trajectory& out) {
  const std::size_t n = model.dim;
  const auto& times = out.times;
  const double t_end = times.back();
  const double span = std::max(t_end, 1e-300);
  const double h_min = cfg.min_step > 0 ? cfg.min_step : 1e-10 * span;
  RhsCaller f(model, theta);

  std::vector<double> y(x0.begin(), x0.end()), y_new(n), tmp(n), err(n);
  std::array<std::vector<double>, 7> k;
  for (auto& ki : k) ki.assign(n, 0.0);

  double t = 0.0;
  std::size_t next = 0;
  auto record = [&](std::size_t row, std::span<const double> v) {
    for (std::size_t j = 0; j < n; ++j) out.states(static_cast<Eigen::Index>(row),
                                                  static_cast<Eigen::Index>(j)) = v[j];
  };
  while (next < times.size() && times[next] <= 0.0) record(next++, y);
  if (next == times.size()) return;

  auto fail = [&](SolveStatus s) {
    out.status = s;
    out.t_fail = t;
    out.states.conservativeResize(static_cast<Eigen::Index>(next), Eigen::NoChange);
  };

  if (!f(t, y, k[0])) return fail(SolveStatus::rhs_failure);
  bool ok = true;
  double h = cfg.initial_step > 0 ? cfg.initial_step
                                  : auto_initial_step(f, t, y, k[0], cfg.abs_tol, cfg.rel_tol,
                                                      span, ok);
  if (!ok) h = std::max(h, h_min);

  while (next < times.size()) {
    if (out.steps >= cfg.max_steps) return fail(SolveStatus::max_steps);
    if (h < h_min) return fail(SolveStatus::step_underflow);
    h = std::min(h, t_end - t);
    ++out.steps;

    bool stage_ok = true;
    for (std::size_t s = 1; s < 6 && stage_ok; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t q = 0; q < s; ++q) acc += kDpA[s][q] * k[q][i];
        tmp[i] = y[i] + h * acc;
      }
      stage_ok = f(t + kDpC[s] * h, tmp, k[s]);
    }
    if (stage_ok) {
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t q = 0; q < 6; ++q) acc += kDpB[q] * k[q][i];
        y_new[i] = y[i] + h * acc;
      }
      stage_ok = f(t + h, y_new, k[6]);
    }
    if (!stage_ok) {
      // Treat a failed stage as a rejected step; persistent failure ends in underflow.
      h *= 0.25;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t q = 0; q < 7; ++q) acc += kDpE[q] * k[q][i];
      err[i] = h * acc;
    }
    const double en = rms_scaled(err, y, y_new, cfg.abs_tol, cfg.rel_tol);
    if (!std::isfinite(en)) {
      h *= 0.25;
      continue;
    }
    if (en > 1.0) {
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      continue;
    }

    const double t_new = (t_end - (t + h) <= 1e-14 * span) ? t_end : t + h;
    while (next < times.size() && times[next] <= t_new) {
      const double s = (times[next] - t) / h;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t q = 0; q < 7; ++q) {
          const double* p = kDpP[q];
          acc += k[q][i] * s * (p[0] + s * (p[1] + s * (p[2] + s * p[3])));
        }
        tmp[i] = y[i] + h * acc;
      }
      const std::size_t row = next++;
      record(row, times[row] == t_new ? std::span<const double>(y_new)
                                      : std::span<const double>(tmp));
    }
    const double factor = en == 0.0 ? 10.0 : std::min(10.0, 0.9 * std::pow(en, -0.2));
    t = t_new;
    y.swap(y_new);
    k[0].swap(k[6]);
    h *= factor;
  }
  out.rhs_evals = f.evals;
}

inline void rk4_fixed(const ModelSpec& model, std::span<const double> theta,
                      std::span<const double> x0, const SolverConfig& cfg, Trajectory& out) {
  const std::size_t n = model.dim;
  RhsCaller f(model, theta);
  std::vector<double> y(x0.begin(), x0.end()), k1(n), k2(n), k3(n), k4(n), tmp(n);
  double t = 0.0;
  std::size_t next = 0;
  auto record = [&](std::size_t row) {
    for (std::size_t j = 0; j < n; ++j) out.states(static_cast<Eigen::Index>(row),
                                                  static_cast<Eigen::Index>(j)) = y[j];
  };
  auto fail = [&](SolveStatus s) {
    out.status = s;
    out.t_fail = t;
    out.states.conservativeResize(static_cast<Eigen::Index>(next), Eigen::NoChange);
  };
  while (next < out.times.size()) {
    if (out.times[next] <= t) {
      record(next++);
      continue;
    }
    if (out.steps >= cfg.max_steps) return fail(SolveStatus::max_steps);
    const double h = std::min(cfg.fixed_step, out.times[next] - t);
    ++out.steps;
    bool ok = f(t, y, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
    ok = ok && f(t + 0.5 * h, tmp, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
    ok = ok && f(t + 0.5 * h, tmp, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
    ok = ok && f(t + h, tmp, k4);
    if (!ok) return fail(SolveStatus::rhs_failure);
    for (std::size_t i = 0; i < n; ++i) y[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    t = (out.times[next] - (t + h) <= 1e-14 * std::max(1.0, t)) ? out.times[next] : t + h;
  }
  out.rhs_evals = f.evals;
}

// Shampine's L-stable Rosenbrock 4(3) coefficients with a 3rd-order continuous extension
// (the parameter set used by Boost.Odeint's rosenbrock4).
struct Ros4 {
  static constexpr double gamma = 0.25;
  static constexpr double d1 = 0.25, d2 = -0.1043, d3 = 0.1035, d4 = 0.3620000000000023e-01;
  static constexpr double c2 = 0.386, c3 = 0.21, c4 = 0.63;
  static constexpr double c21 = -0.5668800000000000e+01, a21 = 0.1544000000000000e+01;
  static constexpr double c31 = -0.2430093356833875e+01, c32 = -0.2063599157091915e+00;
  static constexpr double a31 = 0.9466785280815826e+00, a32 = 0.2557011698983284e+00;
  static constexpr double c41 = -0.1073529058151375e+00, c42 = -0.9594562251023355e+01,
                          c43 = -0.2047028614809616e+02;
  static constexpr double a41 = 0.3314825187068521e+01, a42 = 0.2896124015972201e+01,
                          a43 = 0.9986419139977817e+00;
  static constexpr double c51 = 0.7496443313967647e+01, c52 = -0.1024680431464352e+02,
                          c53 = -0.3399990352819905e+02, c54 = 0.1170890893206160e+02;
  static constexpr double a51 = 0.1221224509226641e+01, a52 = 0.6019134481288629e+01,
                          a53 = 0.1253708332932087e+02, a54 = -0.6878860361058950e+00;
  static constexpr double c61 = 0.8083246795921522e+01, c62 = -0.7981132988064893e+01,
                          c63 = -0.3152159432874371e+02, c64 = 0.1631930543123136e+02,
                          c65 = -0.6058818238834054e+01;
  static constexpr double d21 = 0.1012623508344586e+02, d22 = -0.7487995877610167e+01,
                          d23 = -0.3480091861555747e+02, d24 = -0.7992771707568823e+01,
                          d25 = 0.1025137723295662e+01;
  static constexpr double d31 = -0.6762803392801253e+00, d32 = 0.6087714651680015e+01,
                          d33 = 0.1643084320892478e+02, d34 = 0.2476722511418386e+02,
                          d35 = -0.6594389125716872e+01;
};

inline void rosenbrock(const ModelSpec& model, std::span<const double> theta,
                       std::span<const double> x0, const SolverConfig& cfg, Trajectory& out) {
  using Vec = Eigen::VectorXd;
  using C = Ros4;
  const auto n = static_cast<Eigen::Index>(model.dim);
  const auto& times = out.times;
  const double t_end = times.back();
  const double span = std::max(t_end, 1e-300);
  const double h_min = cfg.min_step > 0 ? cfg.min_step : 1e-10 * span;
  RhsCaller f(model, theta);
  auto F = [&](double t, const Vec& x, Vec& dx) {
    return f(t, std::span<const double>(x.data(), x.size()), std::span<double>(dx.data(), dx.size()));
  };

  Vec x = Eigen::Map<const Vec>(x0.data(), n);
  Vec dxdt(n), dfdt(n), xs(n), fs(n), xp(n), g1(n), g2(n), g3(n), g4(n), g5(n), err(n), xnew(n);
  Eigen::MatrixXd J(n, n);
  double t = 0.0;
  std::size_t next = 0;
  auto record = [&](std::size_t row, const Vec& v) {
    out.states.row(static_cast<Eigen::Index>(row)) = v.transpose();
  };
  while (next < times.size() && times[next] <= 0.0) record(next++, x);
  auto fail = [&](SolveStatus s) {
    out.status = s;
    out.t_fail = t;
    out.states.conservativeResize(static_cast<Eigen::Index>(next), Eigen::NoChange);
    out.rhs_evals = f.evals;
  };
  if (next == times.size()) return;

  // Forward-difference Jacobian and time derivative at (t, x); f(t, x) must already be in dxdt.
  auto jacobian = [&]() {
    for (Eigen::Index c = 0; c < n; ++c) {
      xp = x;
      const double dh = 1.4901161193847656e-08 * std::max(std::abs(x[c]), 1e-6);
      xp[c] += dh;
      if (!F(t, xp, fs)) return false;
      J.col(c) = (fs - dxdt) / dh;
    }
    const double dt = 1.4901161193847656e-08 * std::max(std::abs(t), 1.0);
    if (!F(t + dt, x, fs)) return false;
    dfdt = (fs - dxdt) / dt;
    return true;
  };

  constexpr double safe = 0.9, fac1 = 5.0, fac2 = 1.0 / 6.0;
  double h = cfg.initial_step > 0 ? cfg.initial_step : 1e-3 * span;
  bool first = true, last_rejected = false;
  double err_old = 0.0, h_old = 0.0;
  std::size_t attempts = 0;
  bool need_jac = true;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;

  while (next < times.size()) {
    if (attempts >= cfg.max_steps) return fail(SolveStatus::max_steps);
    if (h < h_min) return fail(SolveStatus::step_underflow);
    h = std::min(h, t_end - t);
    ++attempts;
    if (need_jac) {
      if (!F(t, x, dxdt) || !jacobian()) return fail(SolveStatus::rhs_failure);
      need_jac = false;
    }
    Eigen::MatrixXd W = -J;
    W.diagonal().array() += 1.0 / (C::gamma * h);
    lu.compute(W);
    bool ok = std::isfinite(lu.rcond()) && lu.rcond() > 1e-14;
    if (ok) {
      g1 = lu.solve(dxdt + h * C::d1 * dfdt);
      xs = x + C::a21 * g1;
      ok = F(t + C::c2 * h, xs, fs);
    }
    if (ok) {
      g2 = lu.solve(fs + h * C::d2 * dfdt + C::c21 * g1 / h);
      xs = x + C::a31 * g1 + C::a32 * g2;
      ok = F(t + C::c3 * h, xs, fs);
    }
    if (ok) {
      g3 = lu.solve(fs + h * C::d3 * dfdt + (C::c31 * g1 + C::c32 * g2) / h);
      xs = x + C::a41 * g1 + C::a42 * g2 + C::a43 * g3;
      ok = F(t + C::c4 * h, xs, fs);
    }
    if (ok) {
      g4 = lu.solve(fs + h * C::d4 * dfdt + (C::c41 * g1 + C::c42 * g2 + C::c43 * g3) / h);
      xs = x + C::a51 * g1 + C::a52 * g2 + C::a53 * g3 + C::a54 * g4;
      ok = F(t + h, xs, fs);
    }
    if (ok) {
      g5 = lu.solve(fs + (C::c51 * g1 + C::c52 * g2 + C::c53 * g3 + C::c54 * g4) / h);
      xs += g5;
      ok = F(t + h, xs, fs);
    }
    if (ok) {
      err = lu.solve(fs + (C::c61 * g1 + C::c62 * g2 + C::c63 * g3 + C::c64 * g4 + C::c65 * g5) / h);
      xnew = xs + err;
      ok = xnew.allFinite() && err.allFinite();
    }
    if (!ok) {
      h *= 0.25;
      last_rejected = true;
      continue;
    }
    const double en = rms_scaled(std::span<const double>(err.data(), err.size()),
                                 std::span<const double>(x.data(), x.size()),
                                 std::span<const double>(xnew.data(), xnew.size()), cfg.abs_tol,
                                 cfg.rel_tol);
    double fac = std::max(fac2, std::min(fac1, std::pow(en, 0.25) / safe));
    if (en > 1.0) {
      h /= fac;
      last_rejected = true;
      continue;
    }
    if (first) {
      first = false;
    } else {
      const double pred = std::max(fac2, std::min(fac1, (h_old / h) * std::pow(en * en / err_old, 0.25) / safe));
      fac = std::max(fac, pred);
    }
    double h_new = h / fac;
    if (last_rejected) h_new = std::min(h_new, h);
    h_old = h;
    err_old = std::max(0.01, en);
    last_rejected = false;
    ++out.steps;

    const double t_new = (t_end - (t + h) <= 1e-14 * span) ? t_end : t + h;
    const Vec cont3 = C::d21 * g1 + C::d22 * g2 + C::d23 * g3 + C::d24 * g4 + C::d25 * g5;
    const Vec cont4 = C::d31 * g1 + C::d32 * g2 + C::d33 * g3 + C::d34 * g4 + C::d35 * g5;
    while (next < times.size() && times[next] <= t_new) {
      const std::size_t row = next++;
      if (times[row] == t_new) {
        record(row, xnew);
      } else {
        const double s = (times[row] - t) / h, s1 = 1.0 - s;
        record(row, x * s1 + s * (xnew + s1 * (cont3 + s * cont4)));
      }
    }
    t = t_new;
    x = xnew;
    h = h_new;
    need_jac = true;
  }
  out.rhs_evals = f.evals;
}

}  // namespace detail

/// Integrates `model` from t = 0 and returns the states at `times`.
/// Failures are returned in `Trajectory::status`, never thrown.
inline Trajectory solve(const ModelSpec& model, std::span<const double> theta,
                        std::span<const double> x0, std::span<const double> times,
                        const SolverConfig& cfg) {
  detail::require(x0.size() == model.dim, "solve: x0 length != model dimension");
  detail::require(theta.size() == model.num_params(), "solve: parameter length mismatch");
  detail::require(!times.empty(), "solve: empty time grid");
  detail::require(times.front() >= 0.0, "solve: times must start at or after t=0");
  for (std::size_t i = 1; i < times.size(); ++i)
    detail::require(times[i] > times[i - 1], "solve: times must be strictly increasing");

  Trajectory out;
  out.times.assign(times.begin(), times.end());
  out.states.resize(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(model.dim));
  for (double v : x0) {
    if (!std::isfinite(v)) {
      out.status = SolveStatus::rhs_failure;
      out.t_fail = 0.0;
      out.states.resize(0, static_cast<Eigen::Index>(model.dim));
      return out;
    }
  }
  switch (cfg.method) {
    case SolverMethod::dopri5: detail::dopri5(model, theta, x0, cfg, out); break;
    case SolverMethod::rosenbrock4: detail::rosenbrock(model, theta, x0, cfg, out); break;
    case SolverMethod::rk4: detail::rk4_fixed(model, theta, x0, cfg, out); break;
  }
  return out;
}

inline const char* to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::dopri5: return "dopri5";
    case SolverMethod::rosenbrock4: return "rosenbrock4";
    case SolverMethod::rk4: return "rk4";
  }
  return "unknown";
}

inline SolverMethod solver_method_from_string(const std::string& s) {
  if (s == "dopri5") return SolverMethod::dopri5;
  if (s == "rosenbrock4") return SolverMethod::rosenbrock4;
  if (s == "rk4") return SolverMethod::rk4;
  throw ConfigError("unknown solver method '" + s + "'");
}

}  // namespace pdc
