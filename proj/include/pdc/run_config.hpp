#pragma once

// Run configuration as an INI document (sections and key = value pairs).
// Every key has a default; files and command-line overrides go through set(),
// which rejects unknown keys. to_ini() emits every key, so a written config
// read back yields the same configuration.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pdc/data.hpp"
#include "pdc/error.hpp"
#include "pdc/harness.hpp"
#include "pdc/ladder.hpp"
#include "pdc/smc.hpp"
#include "pdc/solver.hpp"

namespace pdc {

namespace detail {

inline std::vector<double> parse_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& item : split(s, ',')) out.push_back(parse_double(item, key));
  return out;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  for (double v : parse_list(s, key)) {
    require(v == std::floor(v) && std::abs(v) < 1e9, key + ": expected integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline long long parse_int(const std::string& s, const std::string& key, long long lo = 0) {
  const double v = parse_double(s, key);
  require(v == std::floor(v) && v >= static_cast<double>(lo) && v < 9.2e18, key + ": expected an integer >= " + std::to_string(lo));
  return static_cast<long long>(v);
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size() || (!s.empty() && s[0] == '-')) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
}

inline bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

// "N(m,v)" or "N(m1,v1);N(m2,v2);..."; one entry broadcasts to every component.
inline void parse_normals(const std::string& s, const std::string& key, std::vector<double>& mean,
                          std::vector<double>& var) {
  mean.clear();
  var.clear();
  if (trim(s).empty()) return;
  for (const auto& item : split(s, ';')) {
    const auto t = trim(item);
    require(t.size() > 3 && t.rfind("N(", 0) == 0 && t.back() == ')', key + ": expected N(mean,var), got '" + t + "'");
    const auto args = split(t.substr(2, t.size() - 3), ',');
    require(args.size() == 2, key + ": expected N(mean,var), got '" + t + "'");
    mean.push_back(parse_double(args[0], key));
    var.push_back(parse_double(args[1], key));
    require(var.back() > 0, key + ": variance must be positive");
  }
}

inline std::string format_normals(const std::vector<double>& mean, const std::vector<double>& var) {
  std::string s;
  for (std::size_t i = 0; i < mean.size(); ++i)
    s += (i ? ";" : "") + ("N(" + format_double(mean[i]) + "," + format_double(var[i]) + ")");
  return s;
}

inline void parse_inverse_gamma(const std::string& s, const std::string& key, double& a, double& b) {
  const auto t = trim(s);
  require(t.size() > 4 && t.rfind("IG(", 0) == 0 && t.back() == ')', key + ": expected IG(a,b), got '" + t + "'");
  const auto args = split(t.substr(3, t.size() - 4), ',');
  require(args.size() == 2, key + ": expected IG(a,b), got '" + t + "'");
  a = parse_double(args[0], key);
  b = parse_double(args[1], key);
  require(a > 0 && b > 0, key + ": a and b must be positive");
}

inline Eigen::VectorXd broadcast(const std::vector<double>& v, Eigen::Index n, const std::string& key) {
  if (v.size() == 1) return Eigen::VectorXd::Constant(n, v[0]);
  require(static_cast<Eigen::Index>(v.size()) == n, key + ": expected 1 or " + std::to_string(n) + " entries");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> from_eigen(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string output = ".";
  // [model]
  std::string model = "scenario1";
  // [data]: a CSV path, or empty to simulate from [truth].
  std::string data_path;
  /// Empty means run.seed.
  std::optional<std::uint64_t> data_seed;
  // [truth]; empty lists mean the scenario defaults.
  std::vector<double> truth_theta, truth_x0, truth_sigma;
  double t_start = 0.0, t_end = 60.0;
  std::size_t n_times = 0;
  // [prior]; empty lists mean the scenario defaults.
  std::vector<double> ode_mean, ode_var, ic_mean, ic_var;
  double ig_shape = 1.0, ig_scale = 1.0;
  // [solver]
  std::string solver_method = "default";
  double rel_tol = 1e-6, abs_tol = 1e-8;
  std::size_t max_steps = 100000;
  // [pdc]
  std::size_t particles = 500;
  int pdc_k = 1;
  std::string pdc_kernel = "adaptive";
  double rcess = 0.999, resample = 0.5;
  std::size_t moves_per_step = 1;
  /// Empty means run.seed.
  std::optional<std::uint64_t> pdc_seed;
  // [dc]
  std::size_t dc_iterations = 300000;
  std::size_t dc_thin = 10;
  int dc_k = 1;
  std::string dc_kernel = "rwmh";
  std::size_t adapt_start = 1000;
  // [ladder]
  std::vector<int> ladder_ks = {1, 5, 10, 20, 30, 40, 50};
  std::string ladder_init = "adaptive";
  double lambda_threshold = 0.05, ratio_tolerance = 0.2, ref_regularization = 1e-8;
  bool stop_early = true;
  // [study]
  std::string study_method = "pdc";
  std::size_t replicates = 50;
  int study_k = 12;
  std::size_t study_dc_iterations = 0;
  double trap_margin = 20.0;
  // [benchmark]
  std::vector<int> benchmark_ks = {1, 5, 10, 15, 20, 25, 30, 40, 50};
  std::size_t benchmark_dc_iterations = 0;
  double min_accept_rate = 0.01;

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "run.seed", "run.threads", "run.output", "model.name", "data.path", "data.seed",
        "truth.theta", "truth.x0", "truth.sigma", "truth.t_start", "truth.t_end", "truth.n_times",
        "prior.theta", "prior.x0", "prior.sigma2", "solver.method", "solver.rel_tol", "solver.abs_tol", "solver.max_steps",
        "pdc.particles", "pdc.k", "pdc.kernel", "pdc.rcess", "pdc.resample_threshold", "pdc.moves_per_step",
        "pdc.seed",
        "dc.iterations", "dc.thin", "dc.k", "dc.kernel", "dc.adapt_start", "ladder.ks", "ladder.init",
        "ladder.lambda_threshold", "ladder.ratio_tolerance", "ladder.ref_regularization",
        "ladder.stop_early", "study.method", "study.replicates", "study.k", "study.dc_iterations",
        "study.trap_margin", "benchmark.ks", "benchmark.dc_iterations", "benchmark.min_accept_rate"};
    return k;
  }

  void set(const std::string& key, const std::string& raw) {
    using namespace detail;
    const std::string v = trim(raw);
    if (key == "run.seed") seed = parse_u64(v, key);
    else if (key == "run.threads") threads = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "run.output") output = v;
    else if (key == "model.name") model = v;
    else if (key == "data.path") data_path = v;
    else if (key == "data.seed") data_seed = v.empty() ? std::nullopt : std::optional<std::uint64_t>(parse_u64(v, key));
    else if (key == "truth.theta") truth_theta = parse_list(v, key);
    else if (key == "truth.x0") truth_x0 = parse_list(v, key);
    else if (key == "truth.sigma") truth_sigma = parse_list(v, key);
    else if (key == "truth.t_start") t_start = parse_double(v, key);
    else if (key == "truth.t_end") t_end = parse_double(v, key);
    else if (key == "truth.n_times") n_times = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "prior.theta") parse_normals(v, key, ode_mean, ode_var);
    else if (key == "prior.x0") parse_normals(v, key, ic_mean, ic_var);
    else if (key == "prior.sigma2") parse_inverse_gamma(v, key, ig_shape, ig_scale);
    else if (key == "solver.method") {
      if (v != "default") solver_method_from_string(v);
      solver_method = v;
    }
    else if (key == "solver.rel_tol") rel_tol = parse_double(v, key);
    else if (key == "solver.abs_tol") abs_tol = parse_double(v, key);
    else if (key == "solver.max_steps") max_steps = static_cast<std::size_t>(parse_int(v, key, 1));
    else if (key == "pdc.particles") particles = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "pdc.k") pdc_k = static_cast<int>(parse_int(v, key));
    else if (key == "pdc.kernel") pdc_kernel = to_string(kernel_kind_from_string(v));
    else if (key == "pdc.rcess") rcess = parse_double(v, key);
    else if (key == "pdc.resample_threshold") resample = parse_double(v, key);
    else if (key == "pdc.moves_per_step") moves_per_step = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "pdc.seed") pdc_seed = v.empty() ? std::nullopt : std::optional<std::uint64_t>(parse_u64(v, key));
    else if (key == "dc.iterations") dc_iterations = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "dc.thin") dc_thin = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "dc.k") dc_k = static_cast<int>(parse_int(v, key));
    else if (key == "dc.kernel") dc_kernel = to_string(kernel_kind_from_string(v));
    else if (key == "dc.adapt_start") adapt_start = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "ladder.ks") ladder_ks = parse_int_list(v, key);
    else if (key == "ladder.init") ladder_init = to_string(init_mode_from_string(v));
    else if (key == "ladder.lambda_threshold") lambda_threshold = parse_double(v, key);
    else if (key == "ladder.ratio_tolerance") ratio_tolerance = parse_double(v, key);
    else if (key == "ladder.ref_regularization") ref_regularization = parse_double(v, key);
    else if (key == "ladder.stop_early") stop_early = parse_bool(v, key);
    else if (key == "study.method") {
      if (v != "both") method_from_string(v);
      study_method = v;
    }
    else if (key == "study.replicates") replicates = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "study.k") study_k = static_cast<int>(parse_int(v, key));
    else if (key == "study.dc_iterations") study_dc_iterations = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "study.trap_margin") trap_margin = parse_double(v, key);
    else if (key == "benchmark.ks") benchmark_ks = parse_int_list(v, key);
    else if (key == "benchmark.dc_iterations") benchmark_dc_iterations = static_cast<std::size_t>(parse_int(v, key));
    else if (key == "benchmark.min_accept_rate") min_accept_rate = parse_double(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    using detail::join;
    if (key == "run.seed") return std::to_string(seed);
    if (key == "run.threads") return std::to_string(threads);
    if (key == "run.output") return output;
    if (key == "model.name") return model;
    if (key == "data.path") return data_path;
    if (key == "data.seed") return data_seed ? std::to_string(*data_seed) : "";
    if (key == "truth.theta") return join(truth_theta);
    if (key == "truth.x0") return join(truth_x0);
    if (key == "truth.sigma") return join(truth_sigma);
    if (key == "truth.t_start") return format_double(t_start);
    if (key == "truth.t_end") return format_double(t_end);
    if (key == "truth.n_times") return std::to_string(n_times);
    if (key == "prior.theta") return detail::format_normals(ode_mean, ode_var);
    if (key == "prior.x0") return detail::format_normals(ic_mean, ic_var);
    if (key == "prior.sigma2") return "IG(" + format_double(ig_shape) + "," + format_double(ig_scale) + ")";
    if (key == "solver.method") return solver_method;
    if (key == "solver.rel_tol") return format_double(rel_tol);
    if (key == "solver.abs_tol") return format_double(abs_tol);
    if (key == "solver.max_steps") return std::to_string(max_steps);
    if (key == "pdc.particles") return std::to_string(particles);
    if (key == "pdc.k") return std::to_string(pdc_k);
    if (key == "pdc.kernel") return pdc_kernel;
    if (key == "pdc.rcess") return format_double(rcess);
    if (key == "pdc.resample_threshold") return format_double(resample);
    if (key == "pdc.seed") return pdc_seed ? std::to_string(*pdc_seed) : "";
    if (key == "pdc.moves_per_step") return std::to_string(moves_per_step);
    if (key == "dc.iterations") return std::to_string(dc_iterations);
    if (key == "dc.thin") return std::to_string(dc_thin);
    if (key == "dc.k") return std::to_string(dc_k);
    if (key == "dc.kernel") return dc_kernel;
    if (key == "dc.adapt_start") return std::to_string(adapt_start);
    if (key == "ladder.ks") return join(ladder_ks);
    if (key == "ladder.init") return ladder_init;
    if (key == "ladder.lambda_threshold") return format_double(lambda_threshold);
    if (key == "ladder.ratio_tolerance") return format_double(ratio_tolerance);
    if (key == "ladder.ref_regularization") return format_double(ref_regularization);
    if (key == "ladder.stop_early") return stop_early ? "true" : "false";
    if (key == "study.method") return study_method;
    if (key == "study.replicates") return std::to_string(replicates);
    if (key == "study.k") return std::to_string(study_k);
    if (key == "study.dc_iterations") return std::to_string(study_dc_iterations);
    if (key == "study.trap_margin") return format_double(trap_margin);
    if (key == "benchmark.ks") return join(benchmark_ks);
    if (key == "benchmark.dc_iterations") return std::to_string(benchmark_dc_iterations);
    if (key == "benchmark.min_accept_rate") return format_double(min_accept_rate);
    throw ConfigError("unknown config key '" + key + "'");
  }

  /// Every key, grouped by section, in a fixed order.
  std::string to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto& key : keys()) {
      const auto dot = key.find('.');
      const auto sec = key.substr(0, dot);
      if (sec != section) {
        os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
        section = sec;
      }
      os << key.substr(dot + 1) << " = " << get(key) << '\n';
    }
    return os.str();
  }

  /// Hash of every key except run.output, so relocated re-runs keep the same hash.
  std::uint64_t dataset_seed() const { return data_seed.value_or(seed); }

  std::string hash() const {
    RunConfig c = *this;
    c.output.clear();
    return fnv1a_hex(c.to_ini());
  }

  void merge_ini(std::istream& is, const std::string& source = "config") {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError(source + ": key '" + section + "' outside a section");
      for (const auto& [key, value] : body) set(section + "." + key, value.get_value<std::string>());
    }
  }

  void merge_ini_file(const std::string& path) {
    std::ifstream in(path);
    detail::require(static_cast<bool>(in), "cannot open config '" + path + "'");
    merge_ini(in, path);
  }

  static RunConfig from_ini(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    c.merge_ini(is);
    return c;
  }

  /// The scenario for `model`, with [truth], [prior] and [solver] overrides applied.
  Scenario scenario() const {
    Scenario s = scenarios::by_name(model);
    if (!truth_theta.empty()) {
      detail::require(truth_theta.size() == s.model.num_params(), "truth.theta: wrong length for " + model);
      s.theta = truth_theta;
    }
    if (!truth_x0.empty()) {
      detail::require(truth_x0.size() == s.model.dim, "truth.x0: wrong length for " + model);
      s.x0 = truth_x0;
      for (std::size_t j = 0; j < s.model.dim; ++j)
        if (s.model.initial[j]) s.model.initial[j] = truth_x0[j];
    }
    if (!truth_sigma.empty()) {
      detail::require(truth_sigma.size() == s.model.observed.size(), "truth.sigma: wrong length for " + model);
      s.sigma = truth_sigma;
    }
    if (n_times > 0) {
      detail::require(t_end > t_start && t_start >= 0, "truth: need 0 <= t_start < t_end");
      s.times = equispaced(t_start, t_end, n_times);
    }
    if (!ode_mean.empty()) {
      s.prior.ode_mean = detail::broadcast(ode_mean, s.prior.ode_mean.size(), "prior.theta");
      s.prior.ode_var = detail::broadcast(ode_var, s.prior.ode_var.size(), "prior.theta");
    }
    if (!ic_mean.empty()) {
      s.prior.ic_mean = detail::broadcast(ic_mean, s.prior.ic_mean.size(), "prior.x0");
      s.prior.ic_var = detail::broadcast(ic_var, s.prior.ic_var.size(), "prior.x0");
    }
    s.prior.ig_shape = ig_shape;
    s.prior.ig_scale = ig_scale;
    if (s.prior.known_sigma2 && !truth_sigma.empty())
      s.prior.known_sigma2 = detail::to_eigen(truth_sigma).array().square().matrix();
    if (solver_method != "default") s.solver.method = solver_method_from_string(solver_method);
    s.solver.rel_tol = rel_tol;
    s.solver.abs_tol = abs_tol;
    s.solver.max_steps = max_steps;
    s.solver.validate();
    return s;
  }

  ScheduleConfig schedule() const {
    ScheduleConfig s;
    s.rcess_threshold = rcess;
    s.resample_threshold = resample;
    s.validate();
    return s;
  }

  PdcConfig pdc(const Scenario& s) const {
    PdcConfig c;
    c.particles = particles;
    c.k = pdc_k;
    c.kernel = s.kernel(kernel_kind_from_string(pdc_kernel));
    c.kernel.moves_per_step = moves_per_step;
    c.schedule = schedule();
    c.seed = pdc_seed.value_or(seed);
    c.threads = threads;
    return c;
  }

  DcConfig dc(const Scenario& s) const {
    DcConfig c;
    c.iterations = dc_iterations;
    c.thin = dc_thin;
    c.k = dc_k;
    c.kernel = s.kernel(kernel_kind_from_string(dc_kernel));
    c.adapt_start = adapt_start;
    c.seed = seed;
    return c;
  }

  LadderConfig ladder() const {
    LadderConfig c;
    c.k_sequence = ladder_ks;
    c.init = init_mode_from_string(ladder_init);
    c.lambda_threshold = lambda_threshold;
    c.ratio_tolerance = ratio_tolerance;
    c.ref_regularization = ref_regularization;
    c.stop_early = stop_early;
    c.validate();
    return c;
  }

  std::vector<Method> study_methods() const {
    if (study_method == "both") return {Method::pdc, Method::dc};
    return {method_from_string(study_method)};
  }

  StudyConfig study() const {
    StudyConfig c;
    c.replicates = replicates;
    c.k = study_k;
    c.particles = particles;
    c.pdc_kernel = kernel_kind_from_string(pdc_kernel);
    c.dc_kernel = kernel_kind_from_string(dc_kernel);
    c.schedule = schedule();
    c.moves_per_step = moves_per_step;
    c.dc_iterations = study_dc_iterations;
    c.dc_thin = dc_thin;
    c.trap_margin = trap_margin;
    c.seed = seed;
    c.threads = threads;
    c.validate();
    return c;
  }

  BenchmarkConfig benchmark() const {
    BenchmarkConfig c;
    c.k_sequence = benchmark_ks;
    c.particles = particles;
    c.schedule = schedule();
    c.dc_iterations = benchmark_dc_iterations;
    c.min_accept_rate = min_accept_rate;
    c.seed = seed;
    c.threads = threads;
    c.validate();
    return c;
  }
};

}  // namespace pdc
