// unfold.hpp -- modulo unfolding engines: baseline prediction-and-recenter,
// robust approximate-MAP integer-wrap detection, and the oracle MAP variant.
// Also houses the Gaussian tail helpers and the wrap-count prior.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "modcore.hpp"
#include "predictor.hpp"

namespace modunfold {

// ---------------------------------------------------------------------------
// Gaussian tails.

// Upper-tail probability Q(x) = P(N(0,1) > x).
inline double q_function(double x) {
  if (!std::isfinite(x)) throw NumericError("q_function: non-finite input");
  return 0.5 * std::erfc(x / std::numbers::sqrt2);
}

namespace detail {
// Laplace continued fraction for the Mills ratio denominator:
// Q(x) = phi(x) / (x + 1/(x + 2/(x + 3/(...)))), x > 0.
inline double mills_cf(double x) {
  double t = x;
  for (int k = 50; k >= 1; --k) t = x + static_cast<double>(k) / t;
  return t;
}
}  // namespace detail

// log Q(x), valid far beyond where Q itself underflows.  Direct erfc below
// the switchover; continued-fraction tail above it (the two branches agree
// to ~1e-12 relative at the joint; see tests).
inline double log_q(double x) {
  if (!std::isfinite(x)) throw NumericError("log_q: non-finite input");
  constexpr double kSwitch = 8.0;
  if (x <= kSwitch) return std::log(q_function(x));
  return -0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) -
         std::log(detail::mills_cf(x));
}

// ---------------------------------------------------------------------------
// Wrap-count prior.

// F(m) = -2 log( Q((m-1/2)delta/sigma_p) - Q((m+1/2)delta/sigma_p) ), the
// negative log prior (up to the factor 2 kept explicit by convention) of the
// integer wrap count.  Log-domain throughout so large |m| stays finite.
inline double prior_neg_log(int m, double delta, double sigma_p) {
  if (!(sigma_p > 0.0)) throw ConfigError("prior_neg_log: sigma_p must be positive");
  if (!(delta > 0.0)) throw ConfigError("prior_neg_log: delta must be positive");
  const double ratio = delta / sigma_p;
  const int mm = m < 0 ? -m : m;
  double F;
  if (mm == 0) {
    const double q = q_function(0.5 * ratio);
    F = -2.0 * std::log1p(-2.0 * q);
  } else {
    const double a = (mm - 0.5) * ratio;
    const double b = (mm + 0.5) * ratio;
    const double la = log_q(a);
    const double lb = log_q(b);
    F = -2.0 * (la + std::log1p(-std::exp(lb - la)));
  }
  if (!std::isfinite(F)) F = 1e12 + static_cast<double>(mm);  // sentinel
  return F;
}

// ---------------------------------------------------------------------------
// Detection types.

struct HypothesisSet {
  int max_abs_m = 4;
  explicit HypothesisSet(int M) : max_abs_m(M) {
    if (M < 0) throw ConfigError("HypothesisSet: max_abs_m must be >= 0");
  }
  HypothesisSet() = default;
};

enum class DetectMethod { baseline_zero, amap, oracle_map };

struct DetectionResult {
  int m_hat = 0;
  std::vector<double> objectives;  // index i holds the objective of m = i - M
  DetectMethod method = DetectMethod::baseline_zero;
  bool degenerate_cov = false;  // diagonal loading was applied
  bool ready = true;            // false: detector bypassed, m_hat forced to 0
  double best_objective = 0.0;
  double second_objective = std::numeric_limits<double>::infinity();

  double margin() const { return second_objective - best_objective; }
};

struct UnfoldOutput {
  double v_hat = 0.0;
  double v_hat_pred = 0.0;
  double e_hat = 0.0;  // recovered (possibly folded) prediction error
  std::optional<DetectionResult> detection;
};

// Cached symmetric factorization of the stacked covariance, reusable across
// samples and across the controller's counterfactual window-repair scan.
struct AmapFactor {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  Eigen::VectorXd ci_last;  // C^-1 e_last, cached once per factorization
  bool degenerate = false;
  int dim = 0;

  void compute(const Eigen::MatrixXd& cov) {
    dim = static_cast<int>(cov.rows());
    degenerate = false;
    ldlt.compute(cov);
    if (!acceptable()) {
      // Diagonal loading keeps the arg-min arithmetic defined when the
      // accumulated covariance is rank-deficient.
      const double eps = 1e-8 * cov.trace() / static_cast<double>(dim);
      Eigen::MatrixXd loaded = cov;
      loaded.diagonal().array() += eps;
      ldlt.compute(loaded);
      degenerate = true;
      if (!acceptable())
        throw NumericError("AmapFactor: covariance singular beyond repair");
    }
    Eigen::VectorXd e_last = Eigen::VectorXd::Zero(dim);
    e_last(dim - 1) = 1.0;
    ci_last = ldlt.solve(e_last);
  }

 private:
  bool acceptable() const {
    if (ldlt.info() != Eigen::Success) return false;
    const auto& d = ldlt.vectorD();
    const double dmin = d.minCoeff();
    const double dmax = d.maxCoeff();
    return dmin > 0.0 && std::isfinite(dmax) && dmax / dmin <= 1e12;
  }
};

// Approximate-MAP wrap-count detection.  The stacked vector is
// [window (newest first); candidate] in normalized units; hypothesis m
// shifts the last coordinate by m * delta / alpha.  sigma_p_hat is the
// prediction-error spread in those same normalized units.
inline DetectionResult amap_detect_with(const AmapFactor& factor,
                                        const std::vector<double>& vbar_window,
                                        double vbar_candidate_base,
                                        double alpha, double delta,
                                        double sigma_p_hat,
                                        const HypothesisSet& hyp,
                                        DetectMethod method = DetectMethod::amap) {
  if (!(sigma_p_hat > 0.0))
    throw ConfigError("amap_detect: sigma_p_hat must be positive");
  if (!(alpha > 0.0)) throw ConfigError("amap_detect: alpha must be positive");
  const int p = static_cast<int>(vbar_window.size());
  if (factor.dim != p + 1)
    throw StateError("amap_detect: covariance dimension does not match window");

  Eigen::VectorXd s(p + 1);
  for (int i = 0; i < p; ++i) s(i) = vbar_window[static_cast<size_t>(i)];
  s(p) = vbar_candidate_base;

  const Eigen::VectorXd ci_s = factor.ldlt.solve(s);

  const double q0 = s.dot(ci_s);
  const double u = ci_s(p);               // (C^-1 s)_last
  const double w = factor.ci_last(p);     // (C^-1)_{last,last}
  const double g = delta / alpha;  // fold distance in normalized units
  const double prior_delta = delta / alpha;  // same units as sigma_p_hat

  const int M = hyp.max_abs_m;
  DetectionResult out;
  out.method = method;
  out.degenerate_cov = factor.degenerate;
  out.objectives.assign(static_cast<size_t>(2 * M + 1), 0.0);

  double best = std::numeric_limits<double>::infinity();
  double second = std::numeric_limits<double>::infinity();
  int best_m = 0;
  // Visit 0, -1, +1, -2, +2, ... so strict comparison implements the
  // tie-break: smaller |m| first, then negative m.
  for (int k = 0; k <= 2 * M; ++k) {
    const int m = (k == 0) ? 0 : ((k % 2 == 1) ? -((k + 1) / 2) : k / 2);
    const double quad = q0 - 2.0 * m * g * u + static_cast<double>(m) * m * g * g * w;
    const double obj = quad + prior_neg_log(m, prior_delta, sigma_p_hat);
    out.objectives[static_cast<size_t>(m + M)] = obj;
    if (obj < best) {
      second = best;
      best = obj;
      best_m = m;
    } else if (obj < second) {
      second = obj;
    }
  }
  out.m_hat = best_m;
  out.best_objective = best;
  out.second_objective = second;
  return out;
}

inline DetectionResult amap_detect(const std::vector<double>& vbar_window,
                                   double vbar_candidate_base, double alpha,
                                   double delta, const Eigen::MatrixXd& cov_hat,
                                   double sigma_p_hat, const HypothesisSet& hyp) {
  AmapFactor f;
  f.compute(cov_hat);
  return amap_detect_with(f, vbar_window, vbar_candidate_base, alpha, delta,
                          sigma_p_hat, hyp, DetectMethod::amap);
}

// Oracle MAP: identical scoring, fed true window / true covariance / true
// sigma from the signal oracles instead of estimates.
inline DetectionResult oracle_map_detect(const std::vector<double>& true_vbar_window,
                                         double vbar_candidate_base, double alpha,
                                         double delta,
                                         const Eigen::MatrixXd& cov_true,
                                         double sigma_p_true,
                                         const HypothesisSet& hyp) {
  AmapFactor f;
  f.compute(cov_true);
  return amap_detect_with(f, true_vbar_window, vbar_candidate_base, alpha,
                          delta, sigma_p_true, hyp, DetectMethod::oracle_map);
}

// ---------------------------------------------------------------------------
// Unfolding engines.

// Predict, take the folded gap, recenter.  Correct whenever the true
// prediction error lies in [-delta/2, delta/2).
inline UnfoldOutput baseline_unfold(double y, const PredictorState& st,
                                    const ModRange& range) {
  UnfoldOutput out;
  out.v_hat_pred = predict(st);
  const double w = mod_delta(y - out.v_hat_pred, range.delta);
  out.e_hat = (w < 0.5 * range.delta) ? w : w - range.delta;
  out.v_hat = out.v_hat_pred + out.e_hat;
  return out;
}

// Baseline plus wrap-count detection: v_hat = v_pred + e_hat - m_hat * delta.
// Before the covariance estimate is readable the detector is bypassed
// (m_hat = 0) and the result flagged not-ready.
inline UnfoldOutput robust_unfold(double y, const PredictorState& st,
                                  const ModRange& range, double alpha,
                                  const HypothesisSet& hyp) {
  UnfoldOutput out = baseline_unfold(y, st, range);
  DetectionResult det;
  if (!cov_ready(st)) {
    det.method = DetectMethod::amap;
    det.ready = false;
    det.m_hat = 0;
  } else {
    const double base = (out.v_hat_pred + out.e_hat + 0.5) / alpha;
    det = amap_detect(st.window, base, alpha, range.delta, cov_estimate(st),
                      std::sqrt(st.sigma_p_sq_hat) / alpha, hyp);
  }
  out.v_hat -= det.m_hat * range.delta;
  out.detection = det;
  return out;
}

}  // namespace modunfold
