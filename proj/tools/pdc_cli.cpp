// pdc_cli: simulate data, fit by PDC or DC, and run studies, ladders and benchmarks.
//
// Precedence: built-in defaults < --config file < --set key=value < dedicated flags.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdc/pdc.hpp"

namespace fs = std::filesystem;
using namespace pdc;

namespace {

struct Context {
  RunConfig cfg;
  std::string command;

  std::vector<std::string> header() const {
    return {"command=" + command + ", config_hash=" + cfg.hash() + ", seed=" + std::to_string(cfg.seed),
            "model=" + cfg.model};
  }

  fs::path out_dir() const {
    fs::path p(cfg.output);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw ConfigError("cannot create output directory '" + cfg.output + "'");
    return p;
  }

  std::ofstream open(const std::string& name) const {
    const auto path = out_dir() / name;
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write '" + path.string() + "'");
    return f;
  }

  void write_sidecar(const std::string& name) const {
    auto f = open(name);
    f << "; " << command << " run, config_hash=" << cfg.hash() << '\n' << cfg.to_ini();
  }
};

Dataset load_or_simulate(const Context& ctx, const Scenario& sc) {
  if (!ctx.cfg.data_path.empty()) return read_dataset_csv(ctx.cfg.data_path, sc.model);
  return simulate(sc, ctx.cfg.dataset_seed());
}

void write_matrix_header(std::ostream& os, const std::vector<std::string>& names) {
  for (const auto& n : names) os << ',' << n;
}

void write_summary(std::ostream& os, const std::string& label, const std::string& method,
                   const std::string& kernel, const FitSummary& s, const FitMetrics& m,
                   const std::vector<std::string>& comments) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "label,method,kernel,k,parameter,estimate,se,wald_lower,wald_upper,credible_lower,credible_upper,"
        "loglik,rmse,iterations,degenerate\n";
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    os << label << ',' << method << ',' << kernel << ',' << s.k << ',' << s.names[i] << ','
       << format_double(s.estimate[ii]) << ',' << format_double(s.se[ii]) << ','
       << format_double(s.wald_lower[ii]) << ',' << format_double(s.wald_upper[ii]) << ','
       << (s.credible_lower ? format_double((*s.credible_lower)[ii]) : "nan") << ','
       << (s.credible_upper ? format_double((*s.credible_upper)[ii]) : "nan") << ','
       << format_double(m.loglik) << ',' << format_double(m.rmse) << ',' << s.iterations << ','
       << (s.degenerate ? 1 : 0) << '\n';
  }
}

void write_trace(std::ostream& os, const std::vector<TraceRow>& trace, const std::vector<std::string>& comments) {
  for (const auto& c : comments) os << "# " << c << '\n';
  os << "r,phi,ress,accept_rate,sigma_accept_rate,logZ_increment,resampled\n";
  for (const auto& t : trace)
    os << t.r << ',' << format_double(t.phi) << ',' << format_double(t.ress) << ','
       << format_double(t.accept_rate) << ',' << format_double(t.sigma_accept_rate) << ','
       << format_double(t.log_z_increment) << ',' << (t.resampled ? 1 : 0) << '\n';
}

int cmd_simulate(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const Dataset d = simulate(sc, ctx.cfg.dataset_seed());
  auto comments = ctx.header();
  comments.push_back("provenance=" + d.provenance + (sc.surrogate ? ", surrogate" : ""));
  auto f = ctx.open("dataset.csv");
  write_dataset_csv(f, d, sc.model, comments);
  ctx.write_sidecar("dataset.provenance.ini");
  std::cout << "wrote " << (ctx.out_dir() / "dataset.csv").string() << " (" << d.size() << " rows)\n";
  return 0;
}

int cmd_fit_pdc(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const Problem pb = make_problem(sc, load_or_simulate(ctx, sc));
  const PdcConfig pc = ctx.cfg.pdc(sc);
  const std::string kernel = to_string(pc.kernel.kind);
  const std::string label = "pdc_" + kernel + "_k" + std::to_string(pc.k);
  auto comments = ctx.header();
  comments.push_back("data=" + pb.data.provenance);
  ctx.write_sidecar(label + ".ini");
  PdcResult res;
  try {
    res = pdc_run(pb, Reference::prior(), pc);
  } catch (const ScheduleError& e) {
    auto f = ctx.open("trace_" + label + ".csv");
    write_trace(f, e.trace(), comments);
    throw;
  }
  const auto m = fit_metrics(pb, res.summary.layout_estimate);
  {
    auto f = ctx.open("summary_" + label + ".csv");
    write_summary(f, label, "pdc", kernel, res.summary, m, comments);
  }
  {
    auto f = ctx.open("trace_" + label + ".csv");
    write_trace(f, res.trace, comments);
  }
  {
    auto f = ctx.open("particles_" + label + ".csv");
    for (const auto& c : comments) f << "# " << c << '\n';
    f << "index,weight";
    write_matrix_header(f, pb.layout.names(pb.model));
    f << ",loglik\n";
    for (std::size_t i = 0; i < res.particles.size(); ++i) {
      const auto& p = res.particles.particles[i];
      f << i << ',' << format_double(res.particles.weights[i]);
      for (Eigen::Index j = 0; j < p.theta.size(); ++j) f << ',' << format_double(p.theta[j]);
      f << ',' << format_double(p.lik.loglik) << '\n';
    }
  }
  std::cout << label << ": R=" << res.summary.iterations << " loglik=" << format_double(m.loglik)
            << " rmse=" << format_double(m.rmse) << '\n';
  for (std::size_t i = 0; i < res.summary.names.size(); ++i)
    std::cout << "  " << res.summary.names[i] << " = " << res.summary.estimate[static_cast<Eigen::Index>(i)]
              << " (" << res.summary.se[static_cast<Eigen::Index>(i)] << ")\n";
  return 0;
}

int cmd_fit_dc(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const DcConfig dc = ctx.cfg.dc(sc);
  dc.validate(ParamLayout::for_model(sc.model, !sc.prior.known_sigma2.has_value()).block_dim());
  const Problem pb = make_problem(sc, load_or_simulate(ctx, sc));
  const std::string kernel = to_string(dc.kernel.kind);
  const std::string label = "dc_" + kernel + "_k" + std::to_string(dc.k);
  auto comments = ctx.header();
  comments.push_back("data=" + pb.data.provenance);
  ctx.write_sidecar(label + ".ini");
  const auto res = dc_run(pb, dc);
  const auto m = fit_metrics(pb, res.summary.layout_estimate);
  comments.push_back("accept_rate=" + format_double(res.accept_rate) +
                     ", accept_rate_retained=" + format_double(res.accept_rate_retained) +
                     ", mixing_warning=" + (res.mixing_warning ? "true" : "false"));
  {
    auto f = ctx.open("summary_" + label + ".csv");
    write_summary(f, label, "dc", kernel, res.summary, m, comments);
  }
  {
    auto f = ctx.open("chain_" + label + ".csv");
    for (const auto& c : comments) f << "# " << c << '\n';
    f << "iteration";
    write_matrix_header(f, pb.layout.names(pb.model));
    f << ",loglik\n";
    for (const auto& row : res.chain) {
      f << row.iteration;
      for (Eigen::Index j = 0; j < row.theta.size(); ++j) f << ',' << format_double(row.theta[j]);
      f << ',' << format_double(row.loglik) << '\n';
    }
  }
  if (res.mixing_warning)
    std::cerr << "warning: " << res.longest_rejection_run << " consecutive rejected proposals; the chain is not mixing\n";
  std::cout << label << ": accept=" << format_double(res.accept_rate) << " loglik=" << format_double(m.loglik)
            << " rmse=" << format_double(m.rmse) << '\n';
  return 0;
}

int cmd_study(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const auto rep = coverage_study(sc, ctx.cfg.study_methods(), ctx.cfg.study());
  auto comments = ctx.header();
  if (sc.surrogate) comments.push_back("surrogate data");
  ctx.write_sidecar("study.ini");
  {
    auto f = ctx.open("study.csv");
    write_study_csv(f, rep, comments);
  }
  {
    auto f = ctx.open("study_replicates.csv");
    write_replicates_csv(f, rep, comments);
  }
  for (const auto* m : {&rep.pdc, &rep.dc})
    if (*m)
      std::cout << (m == &rep.pdc ? "pdc" : "dc") << ": ok=" << (*m)->ok << " failed=" << (*m)->failed
                << " trapped=" << (*m)->trapped << " mean coverage=" << format_double((*m)->average_coverage()) << '\n';
  return 0;
}

int cmd_ladder(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const Problem pb = make_problem(sc, load_or_simulate(ctx, sc));
  const LadderConfig lc = ctx.cfg.ladder();
  const auto rep = ladder_run(pb, lc, ctx.cfg.pdc(sc));
  auto comments = ctx.header();
  comments.push_back("data=" + pb.data.provenance);
  for (const auto& w : rep.warnings) comments.push_back("warning: " + w);
  const std::string name = std::string("ladder_") + to_string(lc.init);
  ctx.write_sidecar(name + ".ini");
  auto f = ctx.open(name + ".csv");
  write_ladder_csv(f, rep, comments);
  for (const auto& r : rep.rows)
    std::cout << "k=" << r.k << " R=" << r.iterations << " lambda_S=" << format_double(r.lambda_s)
              << (r.failed ? " failed: " + r.message : "") << '\n';
  if (rep.chosen_k) std::cout << "chosen k = " << *rep.chosen_k << '\n';
  return 0;
}

int cmd_benchmark(const Context& ctx) {
  const Scenario sc = ctx.cfg.scenario();
  const Problem pb = make_problem(sc, load_or_simulate(ctx, sc));
  const auto table = kernel_benchmark(pb, sc, ctx.cfg.benchmark());
  auto comments = ctx.header();
  comments.push_back("data=" + pb.data.provenance);
  ctx.write_sidecar("benchmark.ini");
  {
    auto f = ctx.open("benchmark.csv");
    write_benchmark_csv(f, table, comments);
  }
  {
    auto f = ctx.open("benchmark_points.csv");
    write_benchmark_points_csv(f, table, comments);
  }
  for (const auto& c : table.cells)
    std::cout << to_string(c.method) << '-' << to_string(c.kernel) << ": k_max=" << c.k_max
              << " llik_max=" << format_double(c.llik_max) << " rmse_min=" << format_double(c.rmse_min) << '\n';
  return 0;
}

/// Reads the reporting-scale estimate column of a summary CSV.
Eigen::VectorXd read_summary_estimate(const std::string& path, const std::vector<std::string>& names) {
  std::ifstream in(path);
  detail::require(static_cast<bool>(in), "cannot open summary '" + path + "'");
  std::string line;
  std::vector<std::string> header;
  std::map<std::string, double> est;
  while (std::getline(in, line)) {
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cells = detail::split(t, ',');
    if (header.empty()) {
      header = cells;
      continue;
    }
    detail::require(cells.size() == header.size(), path + ": ragged row");
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < cells.size(); ++i) row[header[i]] = cells[i];
    detail::require(row.count("parameter") && row.count("estimate"), path + ": not a summary file");
    est[row["parameter"]] = detail::parse_double(row["estimate"], path);
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    detail::require(est.count(names[i]) > 0, path + ": missing parameter " + names[i]);
    v[static_cast<Eigen::Index>(i)] = est[names[i]];
  }
  return v;
}

int cmd_metrics(const Context& ctx, const std::string& summary_path, const std::vector<double>& theta) {
  const Scenario sc = ctx.cfg.scenario();
  const Problem pb = make_problem(sc, load_or_simulate(ctx, sc));
  const auto names = pb.layout.report_names(pb.model);
  Eigen::VectorXd report;
  if (!summary_path.empty()) {
    report = read_summary_estimate(summary_path, names);
  } else if (!theta.empty()) {
    detail::require(theta.size() == names.size(), "--theta needs " + std::to_string(names.size()) + " values");
    report = detail::to_eigen(theta);
  } else {
    report = sc.truth();
  }
  const auto m = fit_metrics(pb, from_report_scale(pb, report));
  if (!m.ok) throw NumericalError("metrics: solver failed at the given parameters");
  auto f = ctx.open("metrics.csv");
  for (const auto& c : ctx.header()) f << "# " << c << '\n';
  f << "# data=" << pb.data.provenance << '\n';
  f << "rmse,loglik";
  write_matrix_header(f, names);
  f << '\n' << format_double(m.rmse) << ',' << format_double(m.loglik);
  for (Eigen::Index i = 0; i < report.size(); ++i) f << ',' << format_double(report[i]);
  f << '\n';
  std::cout << "rmse=" << format_double(m.rmse) << " loglik=" << format_double(m.loglik) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle data cloning for ODE models"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI config file");
    sub->add_option("--set", sets, "Override any key: section.key=value")->take_all();
    auto flag = [sub, &flags](const std::string& name, const std::string& key, const std::string& help) {
      sub->add_option_function<std::string>(name, [&flags, key](const std::string& v) { flags[key] = v; }, help);
    };
    flag("--model", "model.name", "scenario1, scenario2, prey_predator, linear_decay, constant_mean");
    flag("--seed", "run.seed", "Top-level seed");
    flag("--data-seed", "data.seed", "Seed for simulated data");
    flag("--data", "data.path", "Dataset CSV (otherwise simulated)");
    flag("--output", "run.output", "Output directory");
    flag("--threads", "run.threads", "Worker threads (0 = all cores)");
    flag("--solver", "solver.method", "dopri5, rosenbrock4 or rk4");
    return flag;
  };

  auto* sim = app.add_subcommand("simulate", "Simulate a dataset");
  common(sim);

  auto* fpdc = app.add_subcommand("fit-pdc", "Fit by particle data cloning");
  {
    auto flag = common(fpdc);
    flag("--k", "pdc.k", "Clone count");
    flag("--particles", "pdc.particles", "Number of particles M");
    flag("--kernel", "pdc.kernel", "rwmh or adaptive");
  }
  auto* fdc = app.add_subcommand("fit-dc", "Fit by MCMC data cloning");
  {
    auto flag = common(fdc);
    flag("--k", "dc.k", "Clone count");
    flag("--iters", "dc.iterations", "Chain length 2L (burn-in L)");
    flag("--kernel", "dc.kernel", "rwmh or adaptive");
  }
  auto* study = app.add_subcommand("study", "Replicate coverage study");
  {
    auto flag = common(study);
    flag("--method", "study.method", "pdc, dc or both");
    flag("--k", "study.k", "Clone count");
    flag("--replicates", "study.replicates", "Number of simulated datasets");
    flag("--particles", "pdc.particles", "Number of particles M");
  }
  auto* ladder = app.add_subcommand("ladder", "PDC over increasing k with the eigenvalue diagnostic");
  {
    auto flag = common(ladder);
    flag("--ks", "ladder.ks", "Comma-separated clone counts starting at 1");
    flag("--init", "ladder.init", "adaptive or prior");
    flag("--particles", "pdc.particles", "Number of particles M");
    flag("--kernel", "pdc.kernel", "rwmh or adaptive");
  }
  auto* bench = app.add_subcommand("benchmark", "DC / PDC x kernel grid");
  {
    auto flag = common(bench);
    flag("--ks", "benchmark.ks", "Comma-separated clone counts");
    flag("--particles", "pdc.particles", "Number of particles M");
  }
  auto* metrics = app.add_subcommand("metrics", "rMSE and log-likelihood at given parameters");
  std::string summary_path;
  std::vector<double> theta;
  {
    common(metrics);
    metrics->add_option("--summary", summary_path, "Summary CSV from fit-pdc or fit-dc");
    metrics->add_option("--theta", theta, "Parameters on the reporting scale")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Context ctx;
  try {
    if (const char* env = std::getenv("PDC_OUTPUT_DIR")) ctx.cfg.output = env;
    if (!config_path.empty()) ctx.cfg.merge_ini_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      ctx.cfg.set(detail::trim(s.substr(0, eq)), s.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) ctx.cfg.set(k, v);
    ctx.command = app.get_subcommands().front()->get_name();
    if (ctx.command == "simulate") return cmd_simulate(ctx);
    if (ctx.command == "fit-pdc") return cmd_fit_pdc(ctx);
    if (ctx.command == "fit-dc") return cmd_fit_dc(ctx);
    if (ctx.command == "study") return cmd_study(ctx);
    if (ctx.command == "ladder") return cmd_ladder(ctx);
    if (ctx.command == "benchmark") return cmd_benchmark(ctx);
    if (ctx.command == "metrics") return cmd_metrics(ctx, summary_path, theta);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
