// harness.hpp -- Monte Carlo experiment runner: seeded paired trials over
// engines, metric aggregation, and plot-ready text output.
#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "controller.hpp"
#include "errors.hpp"
#include "sigen.hpp"

namespace modunfold {

struct ExperimentSpec {
  SystemConfig sys;
  std::vector<double> ar_coeffs = {0.95};
  double innovation_var = 0.0975;  // unit process variance for a = 0.95
  Innovation innovation = Innovation::gaussian;
  std::uint64_t n_samples = 100000;
  std::uint32_t n_trials = 10;
  std::uint64_t base_seed = 12345;
  std::vector<Engine> engines = {Engine::baseline};
  std::string out_dir;   // empty: no files written
  bool per_sample = false;
  unsigned jobs = 1;
  std::uint64_t warmup = 0;  // steady-state cutoff; 0 -> n_samples/2

  std::uint64_t warmup_effective() const {
    return warmup > 0 ? warmup : n_samples / 2;
  }

  void validate() const {
    sys.validate();
    if (n_trials < 1) throw ConfigError("spec: n_trials must be >= 1");
    if (engines.empty()) throw ConfigError("spec: engines must be non-empty");
    if (jobs < 1) throw ConfigError("spec: jobs must be >= 1");
    const std::uint64_t need = static_cast<std::uint64_t>(sys.p) +
                               static_cast<std::uint64_t>(sys.bootstrap_samples);
    if (n_samples < need + 1)
      throw ConfigError("spec: n_samples must exceed the bootstrap length (" +
                        std::to_string(need) + ")");
    if (warmup_effective() >= n_samples)
      throw ConfigError("spec: warmup must be smaller than n_samples");
    // Construct the model once so bad coefficients fail fast.
    ArModel(ar_coeffs, innovation_var, innovation);
  }

  ArModel model() const { return ArModel(ar_coeffs, innovation_var, innovation); }
};

struct TrialMetrics {
  static constexpr int kNumFields = 8;
  static const std::array<const char*, kNumFields>& field_names() {
    static const std::array<const char*, kNumFields> names = {
        "mse",          "mse_conditional",   "unfold_error_rate",
        "overload_rate", "detect_error_rate", "final_alpha",
        "mitigation_events", "mse_full"};
    return names;
  }

  std::array<double, kNumFields> v{};
  bool failed = false;
  std::string error;

  double& mse() { return v[0]; }
  double& mse_conditional() { return v[1]; }
  double& unfold_error_rate() { return v[2]; }
  double& overload_rate() { return v[3]; }
  double& detect_error_rate() { return v[4]; }
  double& final_alpha() { return v[5]; }
  double& mitigation_events() { return v[6]; }
  double& mse_full() { return v[7]; }
};

struct TrialOutput {
  std::vector<TrialMetrics> per_engine;
  std::vector<std::vector<StepRecord>> records;  // only filled when per_sample
};

namespace detail {

inline constexpr std::uint64_t kSignalSalt = 1;
inline constexpr std::uint64_t kDitherSalt = 2;

inline TrialMetrics metrics_from_records(const std::vector<StepRecord>& recs,
                                         std::uint64_t warmup,
                                         const LoopState& st) {
  TrialMetrics m;
  double acc_full = 0.0, acc = 0.0, acc_cond = 0.0;
  std::uint64_t n_steady = 0, n_cond = 0, n_unfold_err = 0, n_overload = 0;
  std::uint64_t n_detect_bad = 0;
  for (const auto& r : recs) {
    acc_full += r.sq_err;
    if (r.n < warmup) continue;
    ++n_steady;
    acc += r.sq_err;
    const bool unfolded_ok = std::fabs(r.v_hat - r.v_true) <= 1e-6;
    if (unfolded_ok) {
      ++n_cond;
      acc_cond += r.sq_err;
    } else {
      ++n_unfold_err;
    }
    // Overload events are flagged by the clean-state observer; the detection
    // error rate asks how often the delivered sample is still folded wrong
    // on exactly those events.
    if (!r.bootstrap && r.overload) {
      ++n_overload;
      if (!unfolded_ok) ++n_detect_bad;
    }
  }
  const double ns = n_steady > 0 ? static_cast<double>(n_steady) : 1.0;
  m.mse() = acc / ns;
  m.mse_conditional() = n_cond > 0 ? acc_cond / static_cast<double>(n_cond) : 0.0;
  m.unfold_error_rate() = static_cast<double>(n_unfold_err) / ns;
  m.overload_rate() = static_cast<double>(n_overload) / ns;
  m.detect_error_rate() =
      n_overload > 0
          ? static_cast<double>(n_detect_bad) / static_cast<double>(n_overload)
          : 0.0;
  m.final_alpha() = st.channel.alpha;
  m.mitigation_events() = static_cast<double>(st.mitigation_events);
  m.mse_full() = recs.empty() ? 0.0 : acc_full / static_cast<double>(recs.size());
  return m;
}

}  // namespace detail

// Run one trial: same input stream and same dither stream for every engine
// (paired comparison).  Component failures are captured per engine.
inline TrialOutput run_trial(const ExperimentSpec& spec, std::uint32_t trial_index) {
  const std::uint64_t trial_seed = derive_key(spec.base_seed, trial_index);
  const std::uint64_t signal_seed = derive_key(trial_seed, detail::kSignalSalt);
  const std::uint64_t dither_key = derive_key(trial_seed, detail::kDitherSalt);

  const ArModel model = spec.model();
  const std::vector<double> xs = generate(model, spec.n_samples, signal_seed);
  const size_t boot_need = static_cast<size_t>(spec.sys.p) +
                           static_cast<size_t>(spec.sys.bootstrap_samples);
  const std::vector<double> preview(xs.begin(),
                                    xs.begin() + static_cast<long>(boot_need));
  const std::uint64_t warmup = spec.warmup_effective();

  TrialOutput out;
  out.per_engine.resize(spec.engines.size());
  if (spec.per_sample) out.records.resize(spec.engines.size());

  for (size_t ei = 0; ei < spec.engines.size(); ++ei) {
    SystemConfig cfg = spec.sys;
    cfg.engine = spec.engines[ei];
    TrialMetrics& m = out.per_engine[ei];
    try {
      std::optional<OracleCtx> ctx;
      ctx.emplace(model, cfg.p);  // all engines get oracle-side bookkeeping
      LoopState st = init(cfg, preview, dither_key, std::move(ctx));
      std::vector<StepRecord> recs;
      recs.reserve(xs.size());
      for (double x : xs) {
        StepRecord r = step(st, cfg, x);
        apply_record_repair(recs, r);
        recs.push_back(r);
      }
      m = detail::metrics_from_records(recs, warmup, st);
      if (spec.per_sample) out.records[ei] = std::move(recs);
    } catch (const std::exception& e) {
      m.failed = true;
      m.error = std::string(engine_name(cfg.engine)) + ": " + e.what();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation.

struct FieldStats {
  double mean = 0.0, stddev = 0.0, q05 = 0.0, q50 = 0.0, q95 = 0.0;
};

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Field-wise statistics over the non-failed trials.
inline std::array<FieldStats, TrialMetrics::kNumFields> aggregate(
    const std::vector<TrialMetrics>& metrics) {
  if (metrics.empty()) throw ConfigError("aggregate: empty metrics list");
  std::array<FieldStats, TrialMetrics::kNumFields> out{};
  for (int f = 0; f < TrialMetrics::kNumFields; ++f) {
    std::vector<double> vals;
    vals.reserve(metrics.size());
    for (const auto& m : metrics)
      if (!m.failed) vals.push_back(m.v[static_cast<size_t>(f)]);
    FieldStats s;
    if (!vals.empty()) {
      double acc = 0.0;
      for (double v : vals) acc += v;
      s.mean = acc / static_cast<double>(vals.size());
      double sq = 0.0;
      for (double v : vals) sq += (v - s.mean) * (v - s.mean);
      s.stddev = vals.size() > 1
                     ? std::sqrt(sq / static_cast<double>(vals.size() - 1))
                     : 0.0;
      std::sort(vals.begin(), vals.end());
      s.q05 = quantile_sorted(vals, 0.05);
      s.q50 = quantile_sorted(vals, 0.50);
      s.q95 = quantile_sorted(vals, 0.95);
    }
    out[static_cast<size_t>(f)] = s;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment driver.

struct ExperimentResult {
  // metrics[trial][engine]
  std::vector<std::vector<TrialMetrics>> metrics;
  std::vector<std::string> failures;  // human-readable failure notes
  std::vector<std::vector<std::vector<StepRecord>>> records;  // [trial][engine]

  std::vector<TrialMetrics> engine_column(size_t ei) const {
    std::vector<TrialMetrics> col;
    col.reserve(metrics.size());
    for (const auto& row : metrics) col.push_back(row[ei]);
    return col;
  }
};

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult res;
  res.metrics.resize(spec.n_trials);
  if (spec.per_sample) res.records.resize(spec.n_trials);

  const unsigned workers =
      std::min<unsigned>(spec.jobs, std::max<std::uint32_t>(spec.n_trials, 1));
  std::atomic<std::uint32_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::uint32_t t = next.fetch_add(1);
      if (t >= spec.n_trials) return;
      TrialOutput out = run_trial(spec, t);
      res.metrics[t] = std::move(out.per_engine);
      if (spec.per_sample) res.records[t] = std::move(out.records);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (std::uint32_t t = 0; t < spec.n_trials; ++t)
    for (size_t ei = 0; ei < spec.engines.size(); ++ei)
      if (res.metrics[t][ei].failed)
        res.failures.push_back("trial " + std::to_string(t) + " " +
                               res.metrics[t][ei].error);
  return res;
}

// ---------------------------------------------------------------------------
// Output.

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void config_echo(std::ostream& os, const ExperimentSpec& spec) {
  const SystemConfig& c = spec.sys;
  os << "[config]\n";
  os << "bits = " << c.bits << "\n";
  os << "kappa = " << fmt17(c.kappa) << "\n";
  os << "p = " << c.p << "\n";
  os << "alpha0 = " << fmt17(c.alpha0) << "\n";
  os << "max_abs_m = " << c.max_abs_m << "\n";
  os << "lms_step = " << fmt17(c.mu()) << "\n";
  os << "ewma_lambda = " << fmt17(c.ewma_lambda) << "\n";
  os << "conv_window = " << c.conv_window << "\n";
  os << "conv_rel_tol = " << fmt17(c.conv_rel_tol) << "\n";
  os << "gamma_up = " << fmt17(c.gamma_up) << "\n";
  os << "kappa_boot = " << fmt17(c.kappa_boot) << "\n";
  os << "bootstrap_samples = " << c.bootstrap_samples << "\n";
  os << "anomaly_window = " << c.anomaly_window << "\n";
  os << "anomaly_threshold = " << c.anomaly_threshold << "\n";
  os << "anomaly_z = " << fmt17(c.anomaly_z) << "\n";
  os << "tie_margin = " << fmt17(c.tie_margin) << "\n";
  os << "replace_threshold = " << fmt17(c.replace_threshold) << "\n";
  os << "sigma_reinit_samples = " << c.sigma_reinit_samples << "\n";
  os << "repair_threshold = " << fmt17(c.repair_threshold) << "\n";
  os << "repair_scan_depth = " << c.repair_scan_depth << "\n";
  os << "cov_refresh_every = " << c.cov_refresh_every << "\n";
  os << "cov_forget = " << fmt17(c.cov_forget) << "\n";
  os << "genie_feedback = " << (c.genie_feedback ? 1 : 0) << "\n";
  os << "ar_coeffs =";
  if (spec.ar_coeffs.empty()) os << " none";
  for (size_t i = 0; i < spec.ar_coeffs.size(); ++i)
    os << (i ? "," : " ") << fmt17(spec.ar_coeffs[i]);
  os << "\n";
  os << "innovation_var = " << fmt17(spec.innovation_var) << "\n";
  os << "innovation = "
     << (spec.innovation == Innovation::gaussian ? "gaussian" : "uniform")
     << "\n";
  os << "n_samples = " << spec.n_samples << "\n";
  os << "n_trials = " << spec.n_trials << "\n";
  os << "base_seed = " << spec.base_seed << "\n";
  os << "warmup = " << spec.warmup_effective() << "\n";
}

}  // namespace detail

inline std::string render_summary(const ExperimentSpec& spec,
                                  const ExperimentResult& res) {
  std::ostringstream os;
  os << "# modunfold experiment summary\n";
  detail::config_echo(os, spec);
  for (size_t ei = 0; ei < spec.engines.size(); ++ei) {
    os << "[engine " << engine_name(spec.engines[ei]) << "]\n";
    const std::vector<TrialMetrics> col = res.engine_column(ei);
    std::uint32_t failed = 0;
    for (const auto& m : col)
      if (m.failed) ++failed;
    os << "failed_trials = " << failed << "\n";
    const auto stats = aggregate(col);
    const auto& names = TrialMetrics::field_names();
    for (int f = 0; f < TrialMetrics::kNumFields; ++f) {
      const FieldStats& s = stats[static_cast<size_t>(f)];
      os << names[static_cast<size_t>(f)] << ".mean = " << detail::fmt17(s.mean) << "\n";
      os << names[static_cast<size_t>(f)] << ".stddev = " << detail::fmt17(s.stddev) << "\n";
      os << names[static_cast<size_t>(f)] << ".q05 = " << detail::fmt17(s.q05) << "\n";
      os << names[static_cast<size_t>(f)] << ".q50 = " << detail::fmt17(s.q50) << "\n";
      os << names[static_cast<size_t>(f)] << ".q95 = " << detail::fmt17(s.q95) << "\n";
    }
  }
  for (const auto& note : res.failures) os << "# FAILED: " << note << "\n";
  return os.str();
}

inline std::string render_per_sample(const ExperimentSpec& spec,
                                     const ExperimentResult& res,
                                     std::uint32_t trial) {
  std::ostringstream os;
  os << "n,engine,x,y,alpha,v_hat,x_hat,e_hat,m_hat,sq_err,overload,detect_ok\n";
  if (trial < res.records.size()) {
    for (size_t ei = 0; ei < spec.engines.size(); ++ei) {
      if (ei >= res.records[trial].size()) continue;
      const char* en = engine_name(spec.engines[ei]);
      for (const auto& r : res.records[trial][ei]) {
        os << r.n << ',' << en << ',' << detail::fmt17(r.x) << ','
           << detail::fmt17(r.y) << ',' << detail::fmt17(r.alpha) << ','
           << detail::fmt17(r.v_hat) << ',' << detail::fmt17(r.x_hat) << ','
           << detail::fmt17(r.e_hat) << ',' << r.m_hat << ','
           << detail::fmt17(r.sq_err) << ',' << (r.overload ? 1 : 0) << ','
           << (r.detect_ok ? 1 : 0) << '\n';
      }
    }
  }
  return os.str();
}

// Write summary (and per-sample tables when requested) under spec.out_dir.
inline std::vector<std::string> emit(const ExperimentSpec& spec,
                                     const ExperimentResult& res) {
  std::vector<std::string> written;
  if (spec.out_dir.empty()) return written;
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec)
    throw ConfigError("emit: cannot create output directory '" + spec.out_dir +
                      "': " + ec.message());
  const fs::path root(spec.out_dir);

  auto write_file = [&](const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw NumericError("emit: cannot open '" + path.string() + "' for writing");
    f << content;
    if (!f) throw NumericError("emit: write failed for '" + path.string() + "'");
    written.push_back(path.string());
  };

  write_file(root / "summary.txt", render_summary(spec, res));
  if (spec.per_sample)
    for (std::uint32_t t = 0; t < spec.n_trials; ++t) {
      char name[48];
      std::snprintf(name, sizeof(name), "persample_trial%03u.csv", t);
      write_file(root / name, render_per_sample(spec, res, t));
    }
  return written;
}

// ---------------------------------------------------------------------------
// Config files: flat "key = value" lines, '#' comments, keys mirroring the
// spec fields.  Unknown keys are rejected.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + key + "': " + v);
  }
}

inline long long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer value for '" + key + "': " + v);
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config: bad boolean value for '" + key + "': " + v);
}

inline Engine parse_engine(const std::string& v) {
  if (v == "baseline") return Engine::baseline;
  if (v == "robust") return Engine::robust;
  if (v == "oracle") return Engine::oracle;
  throw ConfigError("config: unknown engine '" + v + "'");
}

inline std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

inline void apply_config_key(ExperimentSpec& spec, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  SystemConfig& c = spec.sys;
  if (key == "bits") c.bits = static_cast<int>(parse_int(key, value));
  else if (key == "kappa") c.kappa = parse_double(key, value);
  else if (key == "p") c.p = static_cast<int>(parse_int(key, value));
  else if (key == "alpha0") c.alpha0 = parse_double(key, value);
  else if (key == "max_abs_m") c.max_abs_m = static_cast<int>(parse_int(key, value));
  else if (key == "lms_step") c.lms_step = parse_double(key, value);
  else if (key == "ewma_lambda") c.ewma_lambda = parse_double(key, value);
  else if (key == "conv_window") c.conv_window = static_cast<int>(parse_int(key, value));
  else if (key == "conv_rel_tol") c.conv_rel_tol = parse_double(key, value);
  else if (key == "gamma_up") c.gamma_up = parse_double(key, value);
  else if (key == "kappa_boot") c.kappa_boot = parse_double(key, value);
  else if (key == "bootstrap_samples")
    c.bootstrap_samples = static_cast<int>(parse_int(key, value));
  else if (key == "anomaly_window")
    c.anomaly_window = static_cast<int>(parse_int(key, value));
  else if (key == "anomaly_threshold")
    c.anomaly_threshold = static_cast<int>(parse_int(key, value));
  else if (key == "anomaly_z") c.anomaly_z = parse_double(key, value);
  else if (key == "tie_margin") c.tie_margin = parse_double(key, value);
  else if (key == "replace_threshold") c.replace_threshold = parse_double(key, value);
  else if (key == "sigma_reinit_samples")
    c.sigma_reinit_samples = static_cast<int>(parse_int(key, value));
  else if (key == "repair_threshold") c.repair_threshold = parse_double(key, value);
  else if (key == "repair_scan_depth")
    c.repair_scan_depth = static_cast<int>(parse_int(key, value));
  else if (key == "cov_refresh_every")
    c.cov_refresh_every = static_cast<int>(parse_int(key, value));
  else if (key == "cov_forget") c.cov_forget = parse_double(key, value);
  else if (key == "genie_feedback") c.genie_feedback = parse_bool(key, value);
  else if (key == "ar_coeffs") {
    spec.ar_coeffs.clear();
    if (value != "none")
      for (const auto& tok : detail::split_csv(value))
        spec.ar_coeffs.push_back(parse_double(key, tok));
  } else if (key == "innovation_var") {
    spec.innovation_var = parse_double(key, value);
  } else if (key == "innovation") {
    if (value == "gaussian") spec.innovation = Innovation::gaussian;
    else if (value == "uniform") spec.innovation = Innovation::uniform;
    else throw ConfigError("config: unknown innovation '" + value + "'");
  } else if (key == "n_samples") {
    spec.n_samples = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "n_trials") {
    spec.n_trials = static_cast<std::uint32_t>(parse_int(key, value));
  } else if (key == "base_seed") {
    spec.base_seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "warmup") {
    spec.warmup = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "engines") {
    spec.engines.clear();
    for (const auto& tok : detail::split_csv(value))
      spec.engines.push_back(detail::parse_engine(tok));
  } else if (key == "out") {
    spec.out_dir = value;
  } else if (key == "per_sample") {
    spec.per_sample = parse_bool(key, value);
  } else if (key == "jobs") {
    spec.jobs = static_cast<unsigned>(parse_int(key, value));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

inline ExperimentSpec parse_config_file(const std::string& path,
                                        ExperimentSpec base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    apply_config_key(base, key, value);
  }
  return base;
}

}  // namespace modunfold
