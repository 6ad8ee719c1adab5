// controller.hpp -- the adaptive blind modulo-ADC loop: fold -> unfold ->
// filter/moment updates -> resolution control, with error-propagation
// mitigation and a selectable unfolding engine.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "modcore.hpp"
#include "predictor.hpp"
#include "sigen.hpp"
#include "unfold.hpp"

namespace modunfold {

enum class Engine { baseline, robust, oracle };

inline const char* engine_name(Engine e) {
  switch (e) {
    case Engine::baseline: return "baseline";
    case Engine::robust: return "robust";
    case Engine::oracle: return "oracle";
  }
  return "?";
}

// Geometric ramp toward the target gain, never overshooting it.
inline double alpha_update_value(double alpha, double gamma_up, double target) {
  return std::min(alpha * gamma_up, target);
}

struct SystemConfig {
  int bits = 4;
  double kappa = 3.0;
  int p = 8;
  double alpha0 = 0.25;
  int max_abs_m = 4;
  Engine engine = Engine::baseline;
  double lms_step = 0.0;      // 0 -> default 0.02 (normalized-LMS step)
  double ewma_lambda = 0.005;
  int conv_window = 500;
  double conv_rel_tol = 0.10;
  double gamma_up = 1.25;
  double kappa_boot = 6.0;
  int bootstrap_samples = 50;  // sigma-seed span; total bootstrap = p + this

  // Mitigation knobs.
  //
  // anomaly_*: burst trigger (freeze + alpha step-back + sigma reinit).
  //   The trigger signal is engine-specific: the baseline engine flags
  //   residuals whose deviation from the running mean exceeds
  //   anomaly_z * kappa tracked sigmas and fires when more than
  //   anomaly_threshold of the last anomaly_window samples are flagged;
  //   the detector engines instead count consecutive samples whose chosen
  //   hypothesis was nonzero or within tie_margin of the runner-up, firing
  //   when the streak exceeds anomaly_threshold.
  // tie_margin: near-tie anomaly margin for the detector engines.
  // replace_threshold: per-sample fallback to the prediction (0 = off);
  //   for the baseline engine it is the |e_hat| z-multiplier, for the robust
  //   engine any positive value enables replacement on near-tie detections.
  // repair_threshold / repair_scan_depth: deferred window-fold repair for the
  //   robust engine.  A sample whose fold was missed cannot be told apart
  //   from a clean one at emission time, but one step later it sits in the
  //   feedback window where a counterfactual +-delta/alpha shift of a single
  //   entry either does or does not lower the joint detection objective by a
  //   margin far above noise.  When the best single-entry shift improves the
  //   objective by more than repair_threshold, the window entry is corrected
  //   in place and the already-emitted record of that sample is amended
  //   (repair_back/repair_dv in the step record).  0 disables the scan.
  // translate_threshold: fold-slip recovery for the robust engine.  Once a
  //   missed fold has propagated into the feedback window, the affected
  //   entries and every new decision are off by the same whole fold: the
  //   per-sample residuals look clean and no single-entry probe can see the
  //   slip.  What still sees it is the absolute level of the stacked window
  //   under the detector's covariance (the process is zero-mean, so a
  //   translated window is persistently less likely).  Each step the
  //   controller scores a counterfactual +-one-fold translation of the
  //   newest window entries -- as many as the evidence accumulator has been
  //   positive for, so the counterfactual tracks the slip as it fills the
  //   window -- and accumulates the objective improvement in a two-sided
  //   cumulative-sum detector.  When one side's evidence exceeds
  //   translate_threshold the translation is committed to the window and
  //   the records emitted during the accumulation span are amended
  //   (translate_depth/translate_dv).  0 disables the detector.
  int anomaly_window = 20;
  int anomaly_threshold = 5;   // trigger when count in window exceeds this
  double anomaly_z = 1.3;      // anomaly when the residual sits more than
                               // anomaly_z * kappa predicted sigmas from its
                               // running mean; folded residuals are capped at
                               // about kappa*sigma in steady state, so the
                               // flag stays quiet at a converged gain and
                               // fires on mistracking
  double tie_margin = 2.0;
  double replace_threshold = 0.0;
  int sigma_reinit_samples = 50;
  double repair_threshold = 40.0;
  int repair_scan_depth = 4;
  double translate_threshold = 8.0;
  int cov_refresh_every = 1;   // detector factorization refresh period
  double cov_forget = 0.9999;

  // Instrumentation: feed ground truth back into the adaptive state (window,
  // LMS, sigma) while leaving the engine's outputs untouched.  Isolates the
  // clean-window overload rate from propagation effects in calibration runs.
  bool genie_feedback = false;

  double mu() const { return lms_step > 0.0 ? lms_step : 0.02; }

  void validate() const {
    if (bits < 1 || bits > 52) throw ConfigError("config: bits must be in [1, 52]");
    if (!(kappa > 0.0)) throw ConfigError("config: kappa must be positive");
    if (p < 1) throw ConfigError("config: p must be >= 1");
    if (!(alpha0 > 0.0)) throw ConfigError("config: alpha0 must be positive");
    if (max_abs_m < 0) throw ConfigError("config: max_abs_m must be >= 0");
    if (!(ewma_lambda > 0.0) || !(ewma_lambda <= 1.0))
      throw ConfigError("config: ewma_lambda must be in (0, 1]");
    if (conv_window < 2) throw ConfigError("config: conv_window must be >= 2");
    if (!(conv_rel_tol > 0.0)) throw ConfigError("config: conv_rel_tol must be positive");
    if (!(gamma_up > 1.0)) throw ConfigError("config: gamma_up must exceed 1");
    if (!(kappa_boot > 0.0)) throw ConfigError("config: kappa_boot must be positive");
    if (bootstrap_samples < 2) throw ConfigError("config: bootstrap_samples must be >= 2");
    if (anomaly_window < 1 || anomaly_threshold < 1)
      throw ConfigError("config: anomaly window/threshold must be >= 1");
    if (!(anomaly_z > 0.0)) throw ConfigError("config: anomaly_z must be positive");
    if (tie_margin < 0.0) throw ConfigError("config: tie_margin must be >= 0");
    if (replace_threshold < 0.0)
      throw ConfigError("config: replace_threshold must be >= 0");
    if (sigma_reinit_samples < 1)
      throw ConfigError("config: sigma_reinit_samples must be >= 1");
    if (repair_threshold < 0.0)
      throw ConfigError("config: repair_threshold must be >= 0");
    if (repair_scan_depth < 1)
      throw ConfigError("config: repair_scan_depth must be >= 1");
    if (translate_threshold < 0.0)
      throw ConfigError("config: translate_threshold must be >= 0");
    if (cov_refresh_every < 1)
      throw ConfigError("config: cov_refresh_every must be >= 1");
    if (!(cov_forget > 0.0) || !(cov_forget <= 1.0))
      throw ConfigError("config: cov_forget must be in (0, 1]");
    if (lms_step < 0.0) throw ConfigError("config: lms_step must be >= 0");
  }
};

// Per-sample trace.  Fields marked oracle-side are derived from ground truth
// and exist for metrics/tests only; the estimation path never reads them.
struct StepRecord {
  std::uint64_t n = 0;
  double x = 0.0;
  double y = 0.0;
  double alpha = 0.0;
  double v_pred = 0.0;
  double e_hat = 0.0;
  double v_hat = 0.0;
  double x_hat = 0.0;
  int m_hat = 0;
  bool bootstrap = false;
  bool suspect = false;
  bool frozen = false;
  bool alpha_changed = false;
  bool mitigation_fired = false;
  // Deferred repair: this step corrected the sample emitted repair_back steps
  // earlier; its recorded v_hat must be shifted by repair_dv (a whole fold).
  // amended marks a record that received such a shift after emission.
  int repair_back = 0;
  double repair_dv = 0.0;
  // Whole-window fold-slip recovery: this step translated the feedback
  // window by translate_dv (a whole fold), so the previous translate_depth
  // records must be shifted by the same amount.
  int translate_depth = 0;
  double translate_dv = 0.0;
  bool amended = false;
  // oracle-side:
  double v_true = 0.0;
  double z = 0.0;
  double sq_err = 0.0;
  bool overload = false;
  int m_true = 0;
  bool detect_ok = true;
};

// Ground-truth context: process model plus cached oracle moments.  Required
// by the oracle engine; for the other engines it powers the oracle-side
// bookkeeping (clean-state overload flags) when provided.
struct OracleCtx {
  ArModel model;
  std::vector<double> rx;  // R_x[0..p]

  OracleCtx(const ArModel& m, int p) : model(m), rx(autocorr_oracle(m, p)) {}
};

struct LoopState {
  ChannelState channel;
  PredictorState pred;
  std::vector<double> alpha_hist;   // per window entry, newest first
  std::vector<double> true_window;  // true normalized samples, newest first
  std::uint64_t n = 0;
  std::uint64_t bootstrap_total = 0;
  double x_clamp = 0.0;  // feedback-window push envelope (0 = disabled)

  // bootstrap sigma seed
  std::vector<double> boot_sq;

  // convergence blocks
  double block_acc = 0.0;
  int block_fill = 0;
  double prev_block = -1.0;

  // mitigation
  std::deque<std::uint8_t> anomalies;  // baseline z-flag history
  int consec_anomaly = 0;              // detector-engine anomaly streak
  int sigma_reinit_left = 0;
  double sigma_reinit_acc = 0.0;       // sum of squared residuals
  double sigma_reinit_mean_acc = 0.0;  // sum of residuals
  std::uint64_t mitigation_events = 0;
  std::uint64_t repair_events = 0;
  std::uint64_t translate_events = 0;
  std::uint64_t alpha_updates = 0;

  // fold-slip cumulative-sum accumulators (+delta / -delta translation) and
  // the number of consecutive steps each side has been positive (which is
  // also how many of the newest window entries the counterfactual unshifts)
  double cus_pos = 0.0;
  double cus_neg = 0.0;
  int cus_age_pos = 0;
  int cus_age_neg = 0;
  int translate_cooldown = 0;  // commits are spaced at least p steps apart
  std::uint64_t first_convergence = 0;  // sample index of first firing (0 = none yet)

  // detector caches
  AmapFactor factor;
  bool factor_valid = false;
  int factor_age = 0;

  // newest accumulated stacked vector, for exact retro-removal on repair
  Eigen::VectorXd last_cov_vec;
  bool last_cov_fresh = false;

  std::optional<OracleCtx> oracle;
  double oracle_mom_alpha = -1.0;
  PredictorOracle oracle_mom;
};

// Build and validate the loop state.  first_samples are used only for the
// bootstrap no-fold validation (alpha0 * stddev(x) must leave kappa_boot
// sigmas of headroom inside [0, delta)).  dither_key selects the channel's
// dither stream; pass the same key to paired engine variants.
inline LoopState init(const SystemConfig& cfg,
                      const std::vector<double>& first_samples,
                      std::uint64_t dither_key,
                      std::optional<OracleCtx> oracle = std::nullopt) {
  cfg.validate();
  const size_t need = static_cast<size_t>(cfg.p) +
                      static_cast<size_t>(cfg.bootstrap_samples);
  if (first_samples.size() < need)
    throw ConfigError("init: need at least p + bootstrap_samples (= " +
                      std::to_string(need) + ") preview samples");
  double s1 = 0.0, s2 = 0.0;
  for (double v : first_samples) {
    s1 += v;
    s2 += v * v;
  }
  const double ncnt = static_cast<double>(first_samples.size());
  const double mean = s1 / ncnt;
  const double var = std::max(s2 / ncnt - mean * mean, 0.0);
  const double sx = std::sqrt(var);
  ModRange range(cfg.bits);
  if (cfg.alpha0 * sx > range.delta / (2.0 * cfg.kappa_boot))
    throw ConfigError(
        "init: alpha0 too large for an un-overloaded bootstrap (alpha0 * "
        "stddev(x) must be <= delta/(2*kappa_boot)); choose a smaller alpha0");
  if (cfg.engine == Engine::oracle && !oracle)
    throw ConfigError("init: oracle engine requires an OracleCtx");

  LoopState st;
  st.channel = ChannelState(range, cfg.alpha0, dither_key);
  st.pred = PredictorState(cfg.p, cfg.mu(), cfg.ewma_lambda);
  st.pred.cov_forget = cfg.cov_forget;
  st.bootstrap_total = need;
  st.boot_sq.reserve(need);
  st.oracle = std::move(oracle);
  // Feedback stays bounded even if the adaptive filter drifts
  // non-contractive during heavy folding: estimates pushed into the window
  // are clamped to a generous multiple of the input scale seen at bootstrap.
  // The envelope never binds in healthy operation (it sits far outside any
  // plausible excursion of a unit-scale input) and turns a potential
  // geometric runaway of the prediction loop into a bounded excursion the
  // estimators can recover from.
  st.x_clamp = 12.0 * std::max(sx, 1e-6);
  return st;
}

namespace detail {

// Rescale the adaptive state for a new gain.  Window entries are already
// gain-normalized and stay put; the v-unit taps, error moments, and reinit
// accumulators scale with the gain ratio.
inline void set_alpha(LoopState& st, double alpha_new) {
  const double ratio = alpha_new / st.channel.alpha;
  if (ratio == 1.0) return;
  for (auto& t : st.pred.taps) t *= ratio;
  st.pred.sigma_p_sq_hat *= ratio * ratio;
  st.pred.err_mean_hat *= ratio;
  st.sigma_reinit_acc *= ratio * ratio;
  st.sigma_reinit_mean_acc *= ratio;
  st.channel.alpha = alpha_new;
  st.block_acc = 0.0;
  st.block_fill = 0;
  st.prev_block = -1.0;
  st.cus_pos = 0.0;  // translation evidence is gain-scale specific
  st.cus_neg = 0.0;
  st.cus_age_pos = 0;
  st.cus_age_neg = 0;
  ++st.alpha_updates;
}

// Variance of a centered Gaussian after modulo folding into [-delta/2,
// delta/2).  The series over fold bins converges fast for sigma < delta.
inline double folded_var(double sigma, double delta) {
  if (!(sigma > 0.0)) return 0.0;
  const double sat = delta * delta / 12.0;
  if (sigma > 4.0 * delta) return sat;
  double ex_round_sq = 0.0;  // E[round(e/delta)^2]
  double ex_e_round = 0.0;   // E[e * round(e/delta)]
  for (int k = 1; k <= 24; ++k) {
    const double tk = (k - 0.5) * delta / sigma;
    const double tk1 = (k + 0.5) * delta / sigma;
    if (tk > 40.0) break;
    const double qk = q_function(tk) - q_function(tk1);
    const double pk = std::exp(-0.5 * tk * tk) - std::exp(-0.5 * tk1 * tk1);
    ex_round_sq += 2.0 * k * k * qk;
    ex_e_round += 2.0 * k * sigma * pk * 0.3989422804014327;
  }
  const double v = sigma * sigma - 2.0 * delta * ex_e_round +
                   delta * delta * ex_round_sq;
  return std::min(v, sat);
}

// Invert folded_var: the spread tracked from delivered residuals is a
// folded-tail-clipped second moment; the gain schedule needs the spread of
// the underlying unfolded error, so recover it by bisection.  Near the
// uniform saturation the inverse blows up; cap at delta (one full range of
// standard deviation), which drives the gain target down hard -- the right
// response to an unresolvable spread.
inline double defolded_sigma(double var_hat, double delta) {
  const double s0 = std::sqrt(std::max(var_hat, 0.0));
  if (!(s0 > 0.0)) return 0.0;
  if (folded_var(s0, delta) >= var_hat) return s0;  // no visible clipping
  double lo = s0, hi = delta;
  if (folded_var(hi, delta) < var_hat) return hi;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (folded_var(mid, delta) < var_hat ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// True stacked covariance for the oracle detector: process autocovariance
// plus the per-index quantization-noise diagonal at each entry's own gain.
inline Eigen::MatrixXd oracle_stacked_cov(const OracleCtx& ctx,
                                          const std::vector<double>& alpha_hist,
                                          double alpha_now) {
  const int p = static_cast<int>(alpha_hist.size());
  Eigen::MatrixXd C(p + 1, p + 1);
  auto lag = [&](int i) { return i < p ? i + 1 : 0; };  // time offset vs sample n
  for (int i = 0; i <= p; ++i) {
    for (int j = 0; j <= p; ++j)
      C(i, j) = ctx.rx[static_cast<size_t>(std::abs(lag(i) - lag(j)))];
    const double a = (i < p) ? alpha_hist[static_cast<size_t>(i)] : alpha_now;
    C(i, i) += 1.0 / (12.0 * a * a);
  }
  return C;
}

// Cached ground-truth predictor moments (taps + spread) at the current gain.
inline const PredictorOracle& oracle_moments(LoopState& st, int p, double alpha) {
  if (st.oracle_mom_alpha != alpha) {
    st.oracle_mom = optimal_predictor_oracle(st.oracle->model, p, alpha);
    st.oracle_mom_alpha = alpha;
  }
  return st.oracle_mom;
}

}  // namespace detail

namespace detail {

// Shift one already-emitted record by a whole fold and refresh its derived
// fields.
inline void amend_record(StepRecord& old, double delta_v) {
  old.v_hat += delta_v;
  old.m_hat -= delta_v > 0.0 ? 1 : -1;
  old.x_hat = (old.v_hat + 0.5) / old.alpha;
  old.sq_err = (old.x_hat - old.x) * (old.x_hat - old.x);
  old.detect_ok = std::fabs(old.v_hat - old.v_true) <= 1e-6;
  old.amended = true;
}

}  // namespace detail

// Fold deferred corrections back into the already-collected trace: rec may
// carry repair_back/repair_dv (single-entry repair of the record emitted
// repair_back steps before it) and/or translate_depth/translate_dv (a
// whole-window fold-slip recovery amending the previous translate_depth
// records).  Call with the trace collected so far, before appending rec.
inline void apply_record_repair(std::vector<StepRecord>& records,
                                const StepRecord& rec) {
  if (rec.repair_back > 0 &&
      records.size() >= static_cast<size_t>(rec.repair_back)) {
    StepRecord& old =
        records[records.size() - static_cast<size_t>(rec.repair_back)];
    if (!old.bootstrap) detail::amend_record(old, rec.repair_dv);
  }
  if (rec.translate_depth > 0) {
    const size_t depth = std::min(records.size(),
                                  static_cast<size_t>(rec.translate_depth));
    for (size_t j = 1; j <= depth; ++j) {
      StepRecord& old = records[records.size() - j];
      if (!old.bootstrap) detail::amend_record(old, rec.translate_dv);
    }
  }
}

// One full loop iteration on input sample x.
inline StepRecord step(LoopState& st, const SystemConfig& cfg, double x) {
  const double alpha = st.channel.alpha;
  const double delta = st.channel.range.delta;
  const int p = cfg.p;

  StepRecord rec;
  rec.n = st.n;
  rec.x = x;
  rec.alpha = alpha;
  rec.frozen = st.sigma_reinit_left > 0;

  const FoldOut fold = fold_sample(st.channel, x);
  rec.y = fold.y;
  rec.z = fold.z;
  rec.v_true = alpha * x + fold.z;
  const double vbar_true = (rec.v_true + 0.5) / alpha;

  const bool boot = st.n < st.bootstrap_total;
  rec.bootstrap = boot;

  double push_vbar;
  bool skip_lms = false;
  double err_used = 0.0;

  // Refresh the cached covariance factorization on demand.
  auto ensure_factor = [&]() {
    if (!st.factor_valid || st.factor_age >= cfg.cov_refresh_every) {
      st.factor.compute(cov_estimate(st.pred));
      st.factor_valid = true;
      st.factor_age = 0;
    }
  };

  if (boot) {
    // Bootstrap: the configuration guarantees |v| < delta/2, so the raw
    // centered observation is already unfolded.
    rec.v_pred = 0.0;
    rec.e_hat = 0.0;
    rec.m_hat = 0;
    rec.v_hat = center_mod(rec.y, delta);
    rec.x_hat = reconstruct(rec.v_hat, alpha);
    rec.sq_err = (rec.x_hat - x) * (rec.x_hat - x);
    push_vbar = cfg.genie_feedback ? vbar_true : rec.x_hat;
    st.boot_sq.push_back((rec.v_hat + 0.5) * (rec.v_hat + 0.5));
    skip_lms = true;
    rec.detect_ok = true;
  } else {
    // The tracked spread is measured on delivered residuals, whose tails are
    // clipped by the fold; recover the unfolded spread before using it.
    const double sigma_hat =
        detail::defolded_sigma(st.pred.sigma_p_sq_hat, delta);
    const HypothesisSet hyp(cfg.max_abs_m);
    DetectionResult det;
    det.ready = false;

    // Prediction, fold inversion, and wrap-count detection from the current
    // feedback window; rerun after a window repair.
    auto run_detect = [&]() {
      rec.v_pred = predict(st.pred);
      const double w = mod_delta(rec.y - rec.v_pred, delta);
      rec.e_hat = (w < 0.5 * delta) ? w : w - delta;
      det = DetectionResult{};
      det.ready = false;
      if (cfg.engine != Engine::baseline && cov_ready(st.pred)) {
        const double base = (rec.v_pred + rec.e_hat + 0.5) / alpha;
        if (cfg.engine == Engine::robust) {
          ensure_factor();
          det = amap_detect_with(st.factor, st.pred.window, base, alpha, delta,
                                 sigma_hat / alpha, hyp, DetectMethod::amap);
        } else {
          const Eigen::MatrixXd ct =
              detail::oracle_stacked_cov(*st.oracle, st.alpha_hist, alpha);
          det = oracle_map_detect(st.true_window, base, alpha, delta, ct,
                                  detail::oracle_moments(st, p, alpha).sigma_bar,
                                  hyp);
        }
      }
      rec.m_hat = det.ready ? det.m_hat : 0;
      rec.v_hat = rec.v_pred + rec.e_hat - rec.m_hat * delta;
    };
    run_detect();

    // Deferred window-fold repair (robust engine).  A missed fold one or more
    // steps ago left a feedback-window entry a whole delta/alpha off; probe
    // each recent entry with a +-one-fold counterfactual shift (prediction,
    // fold inversion, and detection recomputed) and commit the shift when it
    // lowers the joint objective decisively.
    if (cfg.engine == Engine::robust && cfg.repair_threshold > 0.0 &&
        det.ready && !st.factor.degenerate && !cfg.genie_feedback &&
        st.pred.cov_count >= static_cast<std::uint64_t>(10 * (p + 1)) &&
        st.alpha_hist.size() == static_cast<size_t>(p)) {
      const int depth = std::min(p, cfg.repair_scan_depth);
      double best_gain = cfg.repair_threshold;
      int best_i = -1;
      double best_shift = 0.0;
      std::vector<double> cf = st.pred.window;
      for (int i = 0; i < depth; ++i) {
        const double gi = delta / st.alpha_hist[static_cast<size_t>(i)];
        for (int sgn : {1, -1}) {
          const double shift = sgn * gi;
          cf[static_cast<size_t>(i)] =
              st.pred.window[static_cast<size_t>(i)] + shift;
          const double vp =
              rec.v_pred + st.pred.taps[static_cast<size_t>(i)] * shift;
          const double wq = mod_delta(rec.y - vp, delta);
          const double eh = (wq < 0.5 * delta) ? wq : wq - delta;
          const double cbase = (vp + eh + 0.5) / alpha;
          const DetectionResult cd =
              amap_detect_with(st.factor, cf, cbase, alpha, delta,
                               sigma_hat / alpha, hyp, DetectMethod::amap);
          const double gain = det.best_objective - cd.best_objective;
          if (gain > best_gain) {
            best_gain = gain;
            best_i = i;
            best_shift = shift;
          }
        }
        cf[static_cast<size_t>(i)] = st.pred.window[static_cast<size_t>(i)];
      }
      if (best_i >= 0) {
        st.pred.window[static_cast<size_t>(best_i)] += best_shift;
        rec.repair_back = best_i + 1;
        rec.repair_dv = best_shift > 0.0 ? delta : -delta;
        ++st.repair_events;
        ++st.mitigation_events;
        if (best_i == 0 && st.last_cov_fresh) {
          // The newest accumulated stacked vector carried the corrupted
          // candidate; remove it exactly (it was added with unit weight).
          st.pred.cov_sum.noalias() -=
              st.last_cov_vec * st.last_cov_vec.transpose();
          if (st.pred.cov_forget < 1.0) st.pred.cov_sum /= st.pred.cov_forget;
          st.pred.cov_count -= 1;
          st.last_cov_fresh = false;
          st.factor_valid = false;
        }
        run_detect();
      }
    }

    // Fold-slip recovery (robust engine).  Score the two counterfactual
    // one-fold translations of the entire window each step and accumulate
    // the objective improvements in a two-sided CUSUM; a slip yields a
    // persistent positive drift on one side (the zero-mean level prior of
    // the stacked covariance), while a clean window drifts both sides to
    // zero.  Each side also tracks how long its accumulator has been
    // positive: evidence starts building as the slip enters the window, so
    // the age spans the corrupted records and sets the amendment depth.
    // Fire -> translate the window and amend the records emitted while the
    // evidence accumulated.  The error moments are left alone: the tracked
    // spread is translation-invariant and the mean re-centers within a few
    // tens of samples.
    if (cfg.engine == Engine::robust && cfg.translate_threshold > 0.0 &&
        det.ready && !st.factor.degenerate && !cfg.genie_feedback &&
        st.pred.cov_count >= static_cast<std::uint64_t>(10 * (p + 1)) &&
        st.alpha_hist.size() == static_cast<size_t>(p)) {
      std::vector<double> cf(st.pred.window.size());
      double fire_shift = 0.0;
      int fire_age = 0;
      for (int sgn : {1, -1}) {
        double dpred = 0.0;
        for (int i = 0; i < p; ++i) {
          const double shift =
              sgn * delta / st.alpha_hist[static_cast<size_t>(i)];
          cf[static_cast<size_t>(i)] =
              st.pred.window[static_cast<size_t>(i)] + shift;
          dpred += st.pred.taps[static_cast<size_t>(i)] * shift;
        }
        const double vp = rec.v_pred + dpred;
        const double wq = mod_delta(rec.y - vp, delta);
        const double eh = (wq < 0.5 * delta) ? wq : wq - delta;
        const double cbase = (vp + eh + 0.5) / alpha;
        const DetectionResult cd =
            amap_detect_with(st.factor, cf, cbase, alpha, delta,
                             sigma_hat / alpha, hyp, DetectMethod::amap);
        const double gain = det.best_objective - cd.best_objective;
        double& cus = (sgn > 0) ? st.cus_pos : st.cus_neg;
        int& age = (sgn > 0) ? st.cus_age_pos : st.cus_age_neg;
        cus = std::max(0.0, cus + gain);
        age = cus > 0.0 ? age + 1 : 0;
        if (cus > cfg.translate_threshold && fire_shift == 0.0 &&
            st.translate_cooldown == 0) {
          fire_shift = static_cast<double>(sgn);
          fire_age = age;
        }
      }
      if (st.translate_cooldown > 0) --st.translate_cooldown;
      if (fire_shift != 0.0) {
        for (int i = 0; i < p; ++i)
          st.pred.window[static_cast<size_t>(i)] +=
              fire_shift * delta / st.alpha_hist[static_cast<size_t>(i)];
        rec.translate_depth = std::min(fire_age, 4 * p);
        rec.translate_dv = fire_shift * delta;
        ++st.translate_events;
        ++st.mitigation_events;
        st.cus_pos = 0.0;
        st.cus_neg = 0.0;
        st.cus_age_pos = 0;
        st.cus_age_neg = 0;
        st.translate_cooldown = p;
        run_detect();
      }
    }

    // Per-sample suspicion; replacement by the prediction is opt-in.
    bool suspect = false;
    if (cfg.engine == Engine::baseline) {
      if (cfg.replace_threshold > 0.0 &&
          std::fabs(rec.e_hat) > cfg.replace_threshold * sigma_hat)
        suspect = true;
    } else if (det.ready && det.margin() < cfg.tie_margin) {
      suspect = true;
    }
    rec.suspect = suspect;
    if (suspect && cfg.replace_threshold > 0.0 && cfg.engine != Engine::oracle)
      rec.v_hat = rec.v_pred;
    rec.x_hat = reconstruct(rec.v_hat, alpha);

    // Oracle-side bookkeeping.  The wrap count and detection verdict are
    // relative to the engine's own prediction; the overload flag is measured
    // against a clean-state observer (true window, ground-truth taps) so that
    // it reflects the input-driven fold rate rather than propagation effects.
    const double e_true = rec.v_true - rec.v_pred;
    rec.m_true = static_cast<int>(std::lround((rec.e_hat - e_true) / delta));
    rec.detect_ok = (rec.m_hat == rec.m_true);
    if (st.oracle && st.true_window.size() == static_cast<size_t>(p)) {
      const PredictorOracle& om = detail::oracle_moments(st, p, alpha);
      double xp = 0.0;
      for (int i = 0; i < p; ++i)
        xp += om.taps[static_cast<size_t>(i)] *
              st.true_window[static_cast<size_t>(i)];
      const double vp_clean = alpha * xp - 0.5;
      rec.overload = std::fabs(rec.v_true - vp_clean) >= 0.5 * delta;
    } else {
      rec.overload = std::fabs(e_true) >= 0.5 * delta;
    }

    // Blind updates.  The corrected error feeds the moment estimators; the
    // LMS step is skipped for samples the engine itself distrusts -- suspect
    // ones, and for the detector engines any nonzero chosen wrap (the
    // corrected error then carries whole-fold magnitudes whose sign is only
    // as good as the decision, a poor diet for a gradient step) -- and is
    // fed the true error under genie instrumentation.
    err_used = rec.e_hat - rec.m_hat * delta;
    if (cfg.genie_feedback) err_used = e_true;
    push_vbar = cfg.genie_feedback ? vbar_true : rec.x_hat;
    // Feedback envelope: bound what the adaptive state may consume so a
    // drifting filter cannot amplify its own past estimates without limit;
    // the emitted record keeps the unclamped estimate.
    if (st.x_clamp > 0.0)
      push_vbar = std::clamp(push_vbar, -st.x_clamp, st.x_clamp);
    skip_lms = (suspect || (cfg.engine != Engine::baseline && rec.m_hat != 0)) &&
               !cfg.genie_feedback;

    // Anomaly bookkeeping for the burst trigger, engine-specific.  The
    // baseline engine flags residuals beyond anomaly_z * kappa tracked
    // sigmas from their running mean: in a converged steady state folded
    // residuals are capped at about kappa*sigma, so the flag stays quiet
    // there and fires when the tracked spread underestimates the real one
    // (gain climbing into instability, input-level shifts).  The detector
    // engines count consecutive samples whose decision is suspicious on its
    // own terms: a nonzero chosen wrap or a near-tie margin.
    if (cfg.engine == Engine::baseline) {
      const bool anomaly = std::fabs(err_used - st.pred.err_mean_hat) >=
                           cfg.anomaly_z * cfg.kappa * sigma_hat;
      st.anomalies.push_back(anomaly ? 1 : 0);
      while (st.anomalies.size() > static_cast<size_t>(cfg.anomaly_window))
        st.anomalies.pop_front();
    } else {
      const bool anomaly = det.ready && (det.m_hat != 0 ||
                                         det.margin() < cfg.tie_margin);
      st.consec_anomaly = anomaly ? st.consec_anomaly + 1 : 0;
    }
  }

  // Covariance accumulation (pre-push window + committed value); suspect
  // samples and nonzero-wrap decisions are withheld so detector statistics
  // stay clean, as are samples under elevated fold-slip suspicion (a slipped
  // window would otherwise inflate the estimated covariance with whole-fold
  // offsets).
  const bool slip_suspect =
      cfg.engine == Engine::robust && cfg.translate_threshold > 0.0 &&
      std::max(st.cus_pos, st.cus_neg) > 0.25 * cfg.translate_threshold;
  const bool wrap_suspect = cfg.engine != Engine::baseline && rec.m_hat != 0;
  if (st.pred.window_ready() &&
      ((!rec.suspect && !slip_suspect && !wrap_suspect) ||
       cfg.genie_feedback)) {
    Eigen::VectorXd s(p + 1);
    for (int i = 0; i < p; ++i) s(i) = st.pred.window[static_cast<size_t>(i)];
    s(p) = push_vbar;
    update_cov(st.pred, s);
    st.last_cov_vec = s;
    st.last_cov_fresh = true;
  } else {
    st.last_cov_fresh = false;
  }

  if (st.factor_valid) ++st.factor_age;

  // Moment updates.
  if (!boot) {
    if (!skip_lms) lms_update(st.pred, err_used);
    if (st.sigma_reinit_left > 0) {
      st.sigma_reinit_acc += err_used * err_used;
      st.sigma_reinit_mean_acc += err_used;
      if (--st.sigma_reinit_left == 0) {
        const double inv_n = 1.0 / cfg.sigma_reinit_samples;
        const double m = st.sigma_reinit_mean_acc * inv_n;
        st.pred.err_mean_hat = m;
        st.pred.sigma_p_sq_hat =
            std::max(st.sigma_reinit_acc * inv_n - m * m, 1e-300);
        st.sigma_reinit_acc = 0.0;
        st.sigma_reinit_mean_acc = 0.0;
      }
    } else {
      update_sigma_p(st.pred, err_used);
    }
  }

  // Window push.
  st.pred.push_window(push_vbar);
  st.true_window.insert(st.true_window.begin(), vbar_true);
  if (st.true_window.size() > static_cast<size_t>(p)) st.true_window.pop_back();
  st.alpha_hist.insert(st.alpha_hist.begin(), alpha);
  if (st.alpha_hist.size() > static_cast<size_t>(p)) st.alpha_hist.pop_back();

  if (boot) {
    if (st.n + 1 == st.bootstrap_total) {
      double acc = 0.0;
      for (double v : st.boot_sq) acc += v;
      st.pred.sigma_p_sq_hat = std::max(acc / st.boot_sq.size(), 1e-300);
    }
    ++st.n;
    return rec;
  }

  // Burst trigger: too many anomalies (in the sliding window for the
  // baseline engine, consecutively for the detector engines) -> freeze alpha
  // updates, step the gain back once, reinitialize sigma from scratch.
  int count = 0;
  if (cfg.engine == Engine::baseline)
    for (auto a : st.anomalies) count += a;
  else
    count = st.consec_anomaly;
  if (count > cfg.anomaly_threshold && st.sigma_reinit_left == 0) {
    // Back off one step but never below the bootstrap gain: alpha0 was
    // validated fold-free at init, so anomalies there cannot mean overload
    // and stepping further down would only walk the gain toward zero.
    detail::set_alpha(st, std::max(alpha / cfg.gamma_up, cfg.alpha0));
    st.sigma_reinit_left = cfg.sigma_reinit_samples;
    st.sigma_reinit_acc = 0.0;
    st.sigma_reinit_mean_acc = 0.0;
    st.anomalies.clear();
    st.consec_anomaly = 0;
    ++st.mitigation_events;
    rec.mitigation_fired = true;
    rec.alpha_changed = true;
    st.factor_valid = false;
  }

  // Convergence check over non-overlapping blocks, then the gain update.
  st.block_acc += err_used * err_used;
  ++st.block_fill;
  if (st.block_fill >= cfg.conv_window) {
    const double blk = st.block_acc / st.block_fill;
    bool converged = false;
    if (st.prev_block >= 0.0 &&
        std::fabs(blk - st.prev_block) <= cfg.conv_rel_tol * st.prev_block)
      converged = true;
    st.prev_block = blk;
    st.block_acc = 0.0;
    st.block_fill = 0;
    if (converged && st.sigma_reinit_left == 0) {
      if (st.first_convergence == 0) st.first_convergence = st.n;
      const double sigma_bar =
          detail::defolded_sigma(st.pred.sigma_p_sq_hat, delta) /
          st.channel.alpha;
      const double target =
          std::max(alpha_target(cfg.bits, cfg.kappa, sigma_bar), cfg.alpha0);
      const double next = alpha_update_value(st.channel.alpha, cfg.gamma_up, target);
      if (std::fabs(next - st.channel.alpha) > 1e-12 * st.channel.alpha) {
        detail::set_alpha(st, next);
        rec.alpha_changed = true;
        st.factor_valid = false;
      }
    }
  }

  rec.sq_err = (rec.x_hat - x) * (rec.x_hat - x);
  ++st.n;
  return rec;
}

}  // namespace modunfold
