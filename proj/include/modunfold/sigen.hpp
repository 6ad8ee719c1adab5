// sigen.hpp -- synthetic stationary Gaussian AR sources with exact
// autocovariance oracles (Yule-Walker), used as test inputs and ground truth.
// The estimation pipeline itself never sees these oracles.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace modunfold {

enum class Innovation { gaussian, uniform };

// AR(q) process x_n = sum_j a_j x_{n-j} + w_n.  q = 0 is plain white noise.
struct ArModel {
  std::vector<double> coeffs;  // a_1 .. a_q
  double innovation_var = 1.0;
  Innovation innovation = Innovation::gaussian;

  ArModel() = default;
  ArModel(std::vector<double> a, double var,
          Innovation innov = Innovation::gaussian)
      : coeffs(std::move(a)), innovation_var(var), innovation(innov) {
    if (!(innovation_var > 0.0) || !std::isfinite(innovation_var))
      throw ConfigError("ArModel: innovation_var must be positive");
    // The tolerance absorbs eigensolver rounding on exact unit roots; models
    // that close to the boundary would need a hopeless burn-in anyway.
    if (max_root_magnitude() >= 1.0 - 1e-9)
      throw ConfigError(
          "ArModel: non-stationary coefficients (characteristic root on or "
          "outside the unit circle)");
  }

  int order() const { return static_cast<int>(coeffs.size()); }

  // Largest magnitude among the roots of z^q - a_1 z^{q-1} - ... - a_q,
  // via the companion matrix.  Stationary iff < 1.
  double max_root_magnitude() const {
    const int q = order();
    if (q == 0) return 0.0;
    Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(q, q);
    for (int j = 0; j < q; ++j) comp(0, j) = coeffs[static_cast<size_t>(j)];
    for (int i = 1; i < q; ++i) comp(i, i - 1) = 1.0;
    double rmax = 0.0;
    for (const auto& ev : comp.eigenvalues()) rmax = std::max(rmax, std::abs(ev));
    return rmax;
  }

  // Samples to discard before the output is treated as stationary.
  std::uint64_t burn_in() const {
    const int q = order();
    if (q == 0) return 0;
    const double r = max_root_magnitude();
    if (r <= 0.0) return static_cast<std::uint64_t>(q);
    const double len = 10.0 * q / (-std::log(r));
    return static_cast<std::uint64_t>(std::ceil(len)) + static_cast<std::uint64_t>(q);
  }
};

// Streaming generator; draw i of the innovation stream is rand_gauss(seed, i),
// so the whole path is a pure function of (model, seed).
class ArStream {
 public:
  ArStream(const ArModel& model, std::uint64_t seed)
      : model_(model), seed_(seed), hist_(model.coeffs.size(), 0.0) {
    const std::uint64_t burn = model_.burn_in();
    for (std::uint64_t i = 0; i < burn; ++i) next();
  }

  double next() {
    double w;
    if (model_.innovation == Innovation::gaussian) {
      w = std::sqrt(model_.innovation_var) * rand_gauss(seed_, idx_);
    } else {
      // Unif(-c, c) with c = sqrt(3) sigma has the requested variance.
      const double c = std::sqrt(3.0 * model_.innovation_var);
      w = c * (2.0 * rand_u01(seed_, idx_) - 1.0);
    }
    ++idx_;
    double x = w;
    for (size_t j = 0; j < hist_.size(); ++j) x += model_.coeffs[j] * hist_[j];
    if (!hist_.empty()) {
      for (size_t j = hist_.size() - 1; j > 0; --j) hist_[j] = hist_[j - 1];
      hist_[0] = x;
    }
    return x;
  }

 private:
  ArModel model_;
  std::uint64_t seed_ = 0;
  std::uint64_t idx_ = 0;
  std::vector<double> hist_;  // newest first
};

inline std::vector<double> generate(const ArModel& model, std::uint64_t n,
                                    std::uint64_t seed) {
  if (n < 1) throw ConfigError("generate: n must be >= 1");
  ArStream s(model, seed);
  std::vector<double> out(n);
  for (auto& v : out) v = s.next();
  return out;
}

// Exact autocovariances R_x[0..max_lag] from the Yule-Walker system
//   R[l] - sum_j a_j R[|l-j|] = innovation_var * 1{l=0},  l = 0..q,
// then the AR recursion for l > q.
inline std::vector<double> autocorr_oracle(const ArModel& model, int max_lag) {
  if (max_lag < 0) throw ConfigError("autocorr_oracle: max_lag must be >= 0");
  const int q = model.order();
  const int dim = q + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  for (int l = 0; l <= q; ++l) {
    A(l, l) += 1.0;
    for (int j = 1; j <= q; ++j)
      A(l, std::abs(l - j)) -= model.coeffs[static_cast<size_t>(j - 1)];
  }
  b(0) = model.innovation_var;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible())
    throw NumericError("autocorr_oracle: singular Yule-Walker system");
  const Eigen::VectorXd r = lu.solve(b);
  std::vector<double> R(static_cast<size_t>(max_lag) + 1, 0.0);
  for (int l = 0; l <= std::min(max_lag, q); ++l) R[static_cast<size_t>(l)] = r(l);
  for (int l = q + 1; l <= max_lag; ++l) {
    double acc = 0.0;
    for (int j = 1; j <= q; ++j)
      acc += model.coeffs[static_cast<size_t>(j - 1)] * R[static_cast<size_t>(l - j)];
    R[static_cast<size_t>(l)] = acc;
  }
  return R;
}

struct PredictorOracle {
  std::vector<double> taps;  // optimal length-p filter on the normalized stream
  double sigma_bar = 0.0;    // resulting prediction-error standard deviation
};

// Optimal linear one-step predictor for the normalized observable whose
// covariance is R_vbar[l] = R_x[l] + 1{l=0}/(12 alpha^2).  alpha = +inf gives
// the noiseless-process predictor.
inline PredictorOracle optimal_predictor_oracle(const ArModel& model, int p,
                                                double alpha) {
  if (p < 1) throw ConfigError("optimal_predictor_oracle: p must be >= 1");
  if (!(alpha > 0.0))
    throw ConfigError("optimal_predictor_oracle: alpha must be positive");
  const std::vector<double> rx = autocorr_oracle(model, p);
  const double qvar = std::isinf(alpha) ? 0.0 : 1.0 / (12.0 * alpha * alpha);
  Eigen::MatrixXd T(p, p);
  Eigen::VectorXd rhs(p);
  for (int i = 0; i < p; ++i) {
    rhs(i) = rx[static_cast<size_t>(i) + 1];
    for (int j = 0; j < p; ++j) {
      T(i, j) = rx[static_cast<size_t>(std::abs(i - j))];
      if (i == j) T(i, j) += qvar;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
  const double emin = es.eigenvalues().minCoeff();
  const double emax = es.eigenvalues().maxCoeff();
  if (!(emin > 0.0) || emax / emin > 1e12)
    throw NumericError("optimal_predictor_oracle: covariance too ill-conditioned");
  const Eigen::VectorXd h = es.eigenvectors() *
                            (es.eigenvectors().transpose() * rhs).cwiseQuotient(
                                es.eigenvalues());
  const double r0 = rx[0] + qvar;
  double sig2 = r0 - h.dot(rhs);
  if (sig2 < 0.0) sig2 = 0.0;
  PredictorOracle out;
  out.taps.assign(h.data(), h.data() + p);
  out.sigma_bar = std::sqrt(sig2);
  return out;
}

}  // namespace modunfold
