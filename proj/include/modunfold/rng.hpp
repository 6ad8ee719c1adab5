// rng.hpp -- counter-based deterministic random streams.
//
// Every draw is a pure function of (key, index), so independent streams can
// be replayed or shared across engine variants without storing state.  The
// mixer is the splitmix64 finalizer (Steele, Lea, Flood; also used as the
// murmur3 fmix64 core), which passes the usual avalanche tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace modunfold {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

// Derive an independent subkey from (key, salt); used for seed -> trial ->
// stream fanout.
inline std::uint64_t derive_key(std::uint64_t key, std::uint64_t salt) {
  return mix64(key + kGolden * (salt + 1));
}

// Raw 64-bit word at a stream index.
inline std::uint64_t rand_word(std::uint64_t key, std::uint64_t idx) {
  return mix64(key + kGolden * (idx + 1));
}

// Uniform in [0, 1): top 53 bits of the word.
inline double rand_u01(std::uint64_t key, std::uint64_t idx) {
  return static_cast<double>(rand_word(key, idx) >> 11) * 0x1.0p-53;
}

// Uniform in (0, 1]: complement, never zero (safe for log()).
inline double rand_u01_open(std::uint64_t key, std::uint64_t idx) {
  return (static_cast<double>(rand_word(key, idx) >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal via Box-Muller; draw i consumes words 2i and 2i+1 of the
// stream so indices stay stable under replay.
inline double rand_gauss(std::uint64_t key, std::uint64_t idx) {
  const double u1 = rand_u01_open(key, 2 * idx);
  const double u2 = rand_u01(key, 2 * idx + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

// Counter stream with a fixed key; light wrapper used where a stateful
// "next()" reads better than explicit indices.
struct CounterRng {
  std::uint64_t key = 0;
  std::uint64_t next_idx = 0;

  double u01() { return rand_u01(key, next_idx++); }
  double u01_open() { return rand_u01_open(key, next_idx++); }
  double gauss() { return rand_gauss(key, next_idx++); }
};

}  // namespace modunfold
