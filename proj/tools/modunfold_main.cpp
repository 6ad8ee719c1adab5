// modunfold -- Monte Carlo driver for the blind modulo-ADC pipeline.
//
//   modunfold run   --config cfg [overrides...]
//   modunfold sweep --config cfg --kappa-grid 1.5,2,3,4 [overrides...]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime/numerical error.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modunfold/harness.hpp"

namespace {

using namespace modunfold;

struct CliOverrides {
  std::string config_path;
  std::vector<std::string> engines;
  double kappa = -1.0;
  int bits = -1;
  int p = -1;
  int max_m = -1;
  long long samples = -1;
  long long trials = -1;
  long long seed = -1;
  int jobs = -1;
  std::string out;
  bool per_sample = false;
  double alpha0 = -1.0;
  long long warmup = -1;
  bool genie = false;
};

void add_common_flags(CLI::App* cmd, CliOverrides& o) {
  cmd->add_option("--config", o.config_path, "Config file (key = value lines)");
  cmd->add_option("--engine", o.engines,
                  "Engine to run (repeatable): baseline|robust|oracle");
  cmd->add_option("--kappa", o.kappa, "Confidence parameter");
  cmd->add_option("--bits", o.bits, "Quantizer bits R");
  cmd->add_option("--p", o.p, "Predictor length");
  cmd->add_option("--max-m", o.max_m, "Hypothesis set bound M");
  cmd->add_option("--samples", o.samples, "Samples per trial");
  cmd->add_option("--trials", o.trials, "Number of trials");
  cmd->add_option("--seed", o.seed, "Base seed");
  cmd->add_option("--jobs", o.jobs, "Worker threads for trials");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--per-sample", o.per_sample, "Write per-sample CSV traces");
  cmd->add_option("--alpha0", o.alpha0, "Initial resolution parameter");
  cmd->add_option("--warmup", o.warmup,
                  "Steady-state cutoff sample (default n_samples/2)");
  cmd->add_flag("--genie", o.genie,
                "Instrumentation: feed ground truth back into the adaptive state");
}

ExperimentSpec build_spec(const CliOverrides& o) {
  ExperimentSpec spec;
  if (!o.config_path.empty()) spec = parse_config_file(o.config_path, spec);
  if (!o.engines.empty()) {
    spec.engines.clear();
    for (const auto& e : o.engines) spec.engines.push_back(detail::parse_engine(e));
  }
  if (o.kappa > 0) spec.sys.kappa = o.kappa;
  if (o.bits > 0) spec.sys.bits = o.bits;
  if (o.p > 0) spec.sys.p = o.p;
  if (o.max_m >= 0) spec.sys.max_abs_m = o.max_m;
  if (o.samples > 0) spec.n_samples = static_cast<std::uint64_t>(o.samples);
  if (o.trials > 0) spec.n_trials = static_cast<std::uint32_t>(o.trials);
  if (o.seed >= 0) spec.base_seed = static_cast<std::uint64_t>(o.seed);
  if (o.jobs > 0) spec.jobs = static_cast<unsigned>(o.jobs);
  if (!o.out.empty()) spec.out_dir = o.out;
  if (o.per_sample) spec.per_sample = true;
  if (o.alpha0 > 0) spec.sys.alpha0 = o.alpha0;
  if (o.warmup >= 0) spec.warmup = static_cast<std::uint64_t>(o.warmup);
  if (o.genie) spec.sys.genie_feedback = true;
  return spec;
}

int do_run(const CliOverrides& o) {
  ExperimentSpec spec = build_spec(o);
  spec.validate();
  ExperimentResult res = run_experiment(spec);
  const std::string summary = render_summary(spec, res);
  std::cout << summary;
  emit(spec, res);
  bool all_failed = !res.metrics.empty();
  for (const auto& row : res.metrics)
    for (const auto& m : row)
      if (!m.failed) all_failed = false;
  if (all_failed) {
    std::cerr << "error: every trial failed\n";
    return 3;
  }
  return 0;
}

int do_sweep(const CliOverrides& o, const std::string& grid) {
  if (grid.empty()) throw ConfigError("sweep: --kappa-grid is required");
  std::vector<double> kappas;
  for (const auto& tok : detail::split_csv(grid))
    kappas.push_back(detail::parse_double("kappa-grid", tok));
  if (kappas.empty()) throw ConfigError("sweep: empty kappa grid");

  const ExperimentSpec base = build_spec(o);
  std::ostringstream table;
  table << "kappa,engine";
  for (const auto* name : TrialMetrics::field_names()) table << ',' << name;
  table << '\n';

  for (double k : kappas) {
    ExperimentSpec spec = base;
    spec.sys.kappa = k;
    if (!base.out_dir.empty()) {
      std::ostringstream sub;
      sub << base.out_dir << "/kappa_" << k;
      spec.out_dir = sub.str();
    }
    spec.validate();
    std::cout << "== kappa = " << k << " ==\n";
    ExperimentResult res = run_experiment(spec);
    std::cout << render_summary(spec, res);
    emit(spec, res);
    for (size_t ei = 0; ei < spec.engines.size(); ++ei) {
      const auto stats = aggregate(res.engine_column(ei));
      table << detail::fmt17(k) << ',' << engine_name(spec.engines[ei]);
      for (const auto& s : stats) table << ',' << detail::fmt17(s.mean);
      table << '\n';
    }
  }
  std::cout << "== sweep table (field means per engine) ==\n" << table.str();
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    const std::string path = base.out_dir + "/sweep.csv";
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("sweep: cannot open '" + path + "'");
    f << table.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blind modulo-ADC Monte Carlo harness"};
  app.require_subcommand(1);

  CliOverrides run_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "Run one experiment");
  add_common_flags(run_cmd, run_opts);

  CliOverrides sweep_opts;
  std::string kappa_grid;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "Run an experiment per kappa grid point");
  add_common_flags(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--kappa-grid", kappa_grid,
                        "Comma-separated kappa values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run_cmd->parsed()) return do_run(run_opts);
    if (sweep_cmd->parsed()) return do_sweep(sweep_opts, kappa_grid);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const modunfold::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
}
