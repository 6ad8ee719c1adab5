#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "modunfold/errors.hpp"
#include "modunfold/modcore.hpp"
#include "modunfold/rng.hpp"

using namespace modunfold;

TEST_CASE("mod_delta worked values") {
  CHECK(mod_delta(5.3, 4.0) == Catch::Approx(1.3).margin(1e-12));
  CHECK(mod_delta(-0.5, 4.0) == 3.5);
  CHECK(mod_delta(8.0, 4.0) == 0.0);
  CHECK(mod_delta(0.0, 4.0) == 0.0);
  CHECK(mod_delta(-0.0, 4.0) == 0.0);
  CHECK(mod_delta(3.9999999, 4.0) == Catch::Approx(3.9999999).margin(1e-12));
}

TEST_CASE("mod_delta always lands in [0, delta)") {
  CounterRng rng{derive_key(0xABCDEFULL, 1)};
  for (int i = 0; i < 200000; ++i) {
    const double delta = std::ldexp(1.0, 1 + static_cast<int>(rng.u01() * 12));
    const double x = (rng.u01() - 0.5) * 2e6;
    const double r = mod_delta(x, delta);
    REQUIRE(r >= 0.0);
    REQUIRE(r < delta);
  }
  // Values that round up to the modulus must be pulled back inside.
  const double r = mod_delta(-1e-300, 4.0);
  CHECK(r >= 0.0);
  CHECK(r < 4.0);
  CHECK(mod_delta(std::nextafter(4.0, 0.0), 4.0) < 4.0);
  CHECK(mod_delta(1e300, 4.0) >= 0.0);
  CHECK(mod_delta(1e300, 4.0) < 4.0);
}

TEST_CASE("mod_delta residue identity") {
  // x - (x mod delta) is an integer multiple of delta.
  CounterRng rng{derive_key(0x515EEDULL, 7)};
  for (int i = 0; i < 100000; ++i) {
    const double delta = std::ldexp(1.0, 1 + static_cast<int>(rng.u01() * 10));
    const double x = (rng.u01() - 0.5) * 2e4;
    const double y = mod_delta(x, delta);
    const double k = std::round((x - y) / delta);
    REQUIRE(std::fabs((x - y) - k * delta) <=
            1e-9 * std::max(1.0, std::fabs(x)));
  }
}

TEST_CASE("mod_delta argument validation") {
  CHECK_THROWS_AS(mod_delta(1.0, 0.0), ConfigError);
  CHECK_THROWS_AS(mod_delta(1.0, -2.0), ConfigError);
  CHECK_THROWS_AS(mod_delta(std::nan(""), 4.0), NumericError);
  CHECK_THROWS_AS(mod_delta(INFINITY, 4.0), NumericError);
}

TEST_CASE("center_mod worked values") {
  CHECK(center_mod(0.3, 4.0) == Catch::Approx(0.3).margin(1e-12));
  CHECK(center_mod(3.7, 4.0) == Catch::Approx(-0.3).margin(1e-12));
  CHECK(center_mod(2.0, 4.0) == -2.0);  // boundary maps to the negative end
  CHECK(center_mod(5.3, 4.0) == Catch::Approx(1.3).margin(1e-12));
  for (int i = 0; i < 10000; ++i) {
    const double x = (i - 5000) * 0.37;
    const double c = center_mod(x, 8.0);
    REQUIRE(c >= -4.0);
    REQUIRE(c < 4.0);
  }
}

TEST_CASE("ModRange validation and width") {
  CHECK(ModRange(2).delta == 4.0);
  CHECK(ModRange(4).delta == 16.0);
  CHECK(ModRange(1).delta == 2.0);
  CHECK_THROWS_AS(ModRange(0), ConfigError);
  CHECK_THROWS_AS(ModRange(-3), ConfigError);
  CHECK_THROWS_AS(ModRange(53), ConfigError);
}

TEST_CASE("unfolded_value and fold worked example") {
  CHECK(unfolded_value(1.0, 5.3, -0.3) == Catch::Approx(5.0).margin(1e-12));
  CHECK(mod_delta(unfolded_value(1.0, 5.3, -0.3), 4.0) ==
        Catch::Approx(1.0).margin(1e-12));
  CHECK(mod_delta(unfolded_value(2.0, 0.0, -0.5), 4.0) == 3.5);
  // Dither just below zero keeps a grid-point input inside the range.
  const double y = mod_delta(unfolded_value(1.0, 4.0, -1e-9), 4.0);
  CHECK(y == Catch::Approx(4.0 - 1e-9).margin(1e-15));
  CHECK(y < 4.0);
}

TEST_CASE("reconstruct worked values") {
  CHECK(reconstruct(10.3, 2.0) == Catch::Approx(5.4).margin(1e-12));
  CHECK(reconstruct(-0.5, 1.0) == 0.0);
  CHECK(reconstruct(0.0, 4.0) == 0.125);
}

TEST_CASE("alpha_target worked values and scaling") {
  CHECK(alpha_target(4, 4.0, 0.5) == Catch::Approx(4.0).margin(1e-12));
  CHECK(alpha_target(3, 2.0, 1.0) == Catch::Approx(2.0).margin(1e-12));
  // Doubling the predicted spread halves the admissible gain.
  const double a1 = alpha_target(6, 3.0, 0.7);
  const double a2 = alpha_target(6, 3.0, 1.4);
  CHECK(a1 == Catch::Approx(2.0 * a2).epsilon(1e-12));
  // One extra bit doubles it.
  CHECK(alpha_target(7, 3.0, 0.7) == Catch::Approx(2.0 * a1).epsilon(1e-12));
  CHECK_THROWS_AS(alpha_target(4, 0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(alpha_target(4, 3.0, 0.0), ConfigError);
}

TEST_CASE("fold_sample contract and determinism") {
  ChannelState ch(ModRange(2), 1.5, derive_key(42, 2));
  ChannelState ch2 = ch;
  std::vector<double> xs = {0.0, 1.7, -3.2, 100.5, -0.001};
  for (double x : xs) {
    const auto out = fold_sample(ch, x);
    REQUIRE(out.z > -1.0);
    REQUIRE(out.z <= 0.0);
    REQUIRE(out.y >= 0.0);
    REQUIRE(out.y < ch.range.delta);
    CHECK(out.y == mod_delta(unfolded_value(ch.alpha, x, out.z),
                             ch.range.delta));
    const auto out2 = fold_sample(ch2, x);
    CHECK(out2.y == out.y);
    CHECK(out2.z == out.z);
  }
  CHECK(ch.n == xs.size());
}

TEST_CASE("dither stream is uniform on (-1, 0]") {
  ChannelState ch(ModRange(4), 1.0, derive_key(7, 2));
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0, zmin = 1.0, zmax = -1.0;
  for (int i = 0; i < n; ++i) {
    const double z = fold_sample(ch, 0.0).z;
    sum += z;
    sumsq += z * z;
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  // 4-sigma band for the mean of n uniform draws (sd = 1/sqrt(12)).
  CHECK(std::fabs(mean + 0.5) < 4.0 / std::sqrt(12.0 * n));
  CHECK(var == Catch::Approx(1.0 / 12.0).epsilon(0.03));
  CHECK(zmin > -1.0);
  CHECK(zmax <= 0.0);
}

TEST_CASE("real fold agrees with integer wrap under grid dither") {
  // With z chosen as floor(alpha*x) - alpha*x, the folded output equals the
  // integer residue of floor(alpha*x) modulo 2^R.
  CounterRng rng{derive_key(0x1234ULL, 3)};
  for (int i = 0; i < 20000; ++i) {
    const int bits = 1 + static_cast<int>(rng.u01() * 10);
    const ModRange range(bits);
    const double alpha = 0.25 + rng.u01() * 8.0;
    const double x = (rng.u01() - 0.5) * 2000.0;
    const double v = alpha * x;
    const double z = std::floor(v) - v;
    const auto k = static_cast<long long>(std::floor(v));
    const long long width = 1LL << bits;
    const long long resid = ((k % width) + width) % width;
    const double y = mod_delta(unfolded_value(alpha, x, z), range.delta);
    REQUIRE(std::fabs(y - static_cast<double>(resid)) <= 1e-9);
  }
}

TEST_CASE("counter rng statistics and key separation") {
  CHECK(rand_word(1, 0) != rand_word(1, 1));
  CHECK(rand_word(1, 0) != rand_word(2, 0));
  CHECK(derive_key(9, 1) != derive_key(9, 2));
  const std::uint64_t key = derive_key(99, 5);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rand_u01(key, static_cast<std::uint64_t>(i));
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sumsq += u * u;
  }
  const double mean = sum / n;
  CHECK(std::fabs(mean - 0.5) < 4.0 / std::sqrt(12.0 * n));
  CHECK(sumsq / n - mean * mean == Catch::Approx(1.0 / 12.0).epsilon(0.03));

  double gsum = 0.0, gsumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rand_gauss(key, static_cast<std::uint64_t>(i));
    gsum += g;
    gsumsq += g * g;
  }
  const double gmean = gsum / n;
  CHECK(std::fabs(gmean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(gsumsq / n - gmean * gmean == Catch::Approx(1.0).epsilon(0.03));
}
