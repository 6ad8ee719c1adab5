// modcore.hpp -- dithered modulo quantizer channel.
//
// The front end folds v = alpha*x + z into [0, Delta) where Delta = 2^R and
// z ~ Unif(-1, 0] is subtractive dither.  Conditional on the integer wrap
// being resolved, x_hat = (v_hat + 1/2)/alpha is unbiased with quantization
// noise variance 1/(12 alpha^2).
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "errors.hpp"
#include "rng.hpp"

namespace modunfold {

// Folding range [0, 2^R).
struct ModRange {
  int bits = 0;
  double delta = 0.0;

  ModRange() = default;
  explicit ModRange(int R) : bits(R), delta(std::ldexp(1.0, R)) {
    if (R < 1 || R > 52)
      throw ConfigError("ModRange: bits must be in [1, 52], got " +
                        std::to_string(R));
  }
};

// x reduced to [0, delta).  The naive x - delta*floor(x/delta) can land
// exactly on delta when x is a tiny negative value (rounding in the
// multiply), so the result is clamped back into the half-open interval.
inline double mod_delta(double x, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ConfigError("mod_delta: delta must be positive and finite");
  if (!std::isfinite(x)) throw NumericError("mod_delta: non-finite input");
  double r = x - delta * std::floor(x / delta);
  if (r < 0.0) r += delta;
  if (r >= delta) r = std::nexttoward(delta, 0.0L);
  return r;
}

// x reduced to [-delta/2, delta/2).
inline double center_mod(double x, double delta) {
  return mod_delta(x + 0.5 * delta, delta) - 0.5 * delta;
}

// Channel state: folding range, current gain, dither stream.  The dither is
// a counter stream keyed independently of the signal so that engine variants
// fed the same key see identical noise at identical sample indices.
struct ChannelState {
  ModRange range;
  double alpha = 1.0;
  std::uint64_t dither_key = 0;
  std::uint64_t n = 0;  // sample counter (dither stream index)

  ChannelState() = default;
  ChannelState(ModRange r, double a, std::uint64_t key)
      : range(r), alpha(a), dither_key(key) {
    if (!(a > 0.0) || !std::isfinite(a))
      throw ConfigError("ChannelState: alpha must be positive and finite");
  }
};

struct FoldOut {
  double y = 0.0;  // folded sample in [0, delta)
  double z = 0.0;  // dither realization in (-1, 0]
};

// One channel observation: y = [alpha*x + z] mod delta.
inline FoldOut fold_sample(ChannelState& ch, double x) {
  FoldOut out;
  out.z = -rand_u01(ch.dither_key, ch.n);
  out.y = mod_delta(ch.alpha * x + out.z, ch.range.delta);
  ++ch.n;
  return out;
}

// Ground-truth pre-fold value; oracle/testing only.
inline double unfolded_value(double alpha, double x, double z) {
  return alpha * x + z;
}

// Invert the gain and remove the dither mean (E[z] = -1/2).
inline double reconstruct(double v_hat, double alpha) {
  return (v_hat + 0.5) / alpha;
}

// Gain that places the overload boundary at kappa conditional standard
// deviations: delta/2 = kappa * sigma_bar * alpha, with sigma_bar the
// prediction error spread of the normalized process.
inline double alpha_target(int bits, double kappa, double sigma_bar) {
  if (!(kappa > 0.0) || !(sigma_bar > 0.0))
    throw ConfigError("alpha_target: kappa and sigma_bar must be positive");
  return std::ldexp(1.0, bits - 1) / (kappa * sigma_bar);
}

}  // namespace modunfold
