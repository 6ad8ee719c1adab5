// predictor.hpp -- adaptive linear predictor and the online moment estimators
// the blind pipeline needs: LMS taps, EWMA prediction-error variance, and a
// running covariance of the stacked normalized sample vector.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace modunfold {

struct PredictorState {
  std::vector<double> taps;    // length p
  std::vector<double> window;  // length p, newest first: v_bar_hat_{n-1} ...
  double sigma_p_sq_hat = 1.0;
  double err_mean_hat = 0.0;   // slow bias tracker; spread is measured around it
  double lms_step = 0.0;       // mu (normalized step, see lms_update)
  double ewma_lambda = 0.005;
  double energy_hat = 0.0;     // EWMA of ||window||^2, drives step normalization
  bool energy_seeded = false;
  std::uint64_t window_fill = 0;   // samples pushed so far (saturates at p)
  std::uint64_t skipped_updates = 0;  // non-finite errors dropped by LMS

  // Running covariance of stacked vectors [window; candidate], length p+1.
  Eigen::MatrixXd cov_sum;     // (p+1) x (p+1)
  std::uint64_t cov_count = 0;
  double cov_forget = 1.0;     // 1 = plain growing average

  PredictorState() = default;
  PredictorState(int p, double mu, double lambda)
      : taps(static_cast<size_t>(p), 0.0),
        window(static_cast<size_t>(p), 0.0),
        lms_step(mu),
        ewma_lambda(lambda),
        cov_sum(Eigen::MatrixXd::Zero(p + 1, p + 1)) {
    if (p < 1) throw ConfigError("PredictorState: p must be >= 1");
    if (!(mu > 0.0)) throw ConfigError("PredictorState: lms_step must be positive");
    if (!(lambda > 0.0) || !(lambda <= 1.0))
      throw ConfigError("PredictorState: ewma_lambda must be in (0, 1]");
  }

  int p() const { return static_cast<int>(taps.size()); }
  bool window_ready() const { return window_fill >= taps.size(); }

  void push_window(double vbar) {
    for (size_t j = window.size() - 1; j > 0; --j) window[j] = window[j - 1];
    window[0] = vbar;
    ++window_fill;
  }
};

// v_hat_pred = taps . window - 1/2 (the -1/2 restores the dither mean the
// normalized window entries had removed).
inline double predict(const PredictorState& st) {
  if (!st.window_ready())
    throw StateError("predict: window not yet populated");
  double acc = 0.0;
  for (size_t j = 0; j < st.taps.size(); ++j) acc += st.taps[j] * st.window[j];
  return acc - 0.5;
}

// Power-normalized LMS: taps += mu * err * window / (P + eps) where P is a
// running EWMA of the window energy ||window||^2.  The normalization keeps
// the effective loop gain bounded even when a run of unfolding mistakes
// inflates the stored window values -- a raw-step update is unstable there,
// its gain growing with the square of the corruption.  A smoothed P (rather
// than the instantaneous energy) keeps individual steps linear in the
// window, so a near-zero regressor cannot produce an outsized kick, and the
// tap fixed point stays at the Wiener solution.  Non-finite err means an
// upstream unfolding failure; the sample is dropped and counted.
inline void lms_update(PredictorState& st, double err) {
  if (!std::isfinite(err)) {
    ++st.skipped_updates;
    return;
  }
  double energy = 0.0;
  for (double w : st.window) energy += w * w;
  constexpr double kEnergyLambda = 0.05;
  st.energy_hat = st.energy_seeded
                      ? (1.0 - kEnergyLambda) * st.energy_hat +
                            kEnergyLambda * energy
                      : energy;
  st.energy_seeded = true;
  const double gain = st.lms_step * err / (st.energy_hat + 1e-12);
  for (size_t j = 0; j < st.taps.size(); ++j)
    st.taps[j] += gain * st.window[j];
}

// Track the prediction-error scale as spread about a slowly varying mean.
// A sustained unfolding offset shifts the residual mean without widening its
// distribution; folding that bias into a raw second moment would inflate the
// scale estimate and drag the gain controller off target.  The mean tracker
// runs 4x faster than the variance tracker so it absorbs bias excursions
// before they register as spread.
inline void update_sigma_p(PredictorState& st, double err) {
  if (!std::isfinite(err)) {
    ++st.skipped_updates;
    return;
  }
  const double mean_lambda = std::min(1.0, 4.0 * st.ewma_lambda);
  double dev = err - st.err_mean_hat;
  // Robust scale tracking: clamp single-sample excursions so rare outliers
  // (fold transitions upstream) cannot bias the spread estimate the gain
  // schedule depends on.  At four tracked sigmas the clamp is inert for
  // clean Gaussian residuals.
  const double guard = 4.0 * std::sqrt(st.sigma_p_sq_hat);
  if (guard > 0.0) dev = std::clamp(dev, -guard, guard);
  st.err_mean_hat += mean_lambda * dev;
  st.sigma_p_sq_hat = (1.0 - st.ewma_lambda) *
                      (st.sigma_p_sq_hat + st.ewma_lambda * dev * dev);
}

// Accumulate one stacked vector (length p+1) into the covariance sums.
inline void update_cov(PredictorState& st, const Eigen::VectorXd& vbar_vec) {
  if (vbar_vec.size() != st.cov_sum.rows())
    throw StateError("update_cov: stacked vector has wrong length");
  if (st.cov_forget < 1.0) st.cov_sum *= st.cov_forget;
  st.cov_sum.noalias() += vbar_vec * vbar_vec.transpose();
  ++st.cov_count;
}

inline bool cov_ready(const PredictorState& st) { return st.cov_count >= 1; }

// Queried estimate: plain average of the accumulated outer products (with
// exponential forgetting this is the forgetting-weighted analogue).
inline Eigen::MatrixXd cov_estimate(const PredictorState& st) {
  if (!cov_ready(st))
    throw StateError("cov_estimate: no stacked vectors accumulated yet");
  double denom;
  if (st.cov_forget < 1.0) {
    const double f = st.cov_forget;
    denom = (1.0 - std::pow(f, static_cast<double>(st.cov_count))) / (1.0 - f);
  } else {
    denom = static_cast<double>(st.cov_count);
  }
  return st.cov_sum / denom;
}

}  // namespace modunfold
