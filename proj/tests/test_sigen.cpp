#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "modunfold/errors.hpp"
#include "modunfold/sigen.hpp"

using namespace modunfold;

namespace {

// Raw sample second moments of a zero-mean path.
std::vector<double> sample_autocov(const std::vector<double>& x, int max_lag) {
  std::vector<double> r(static_cast<size_t>(max_lag) + 1, 0.0);
  for (int l = 0; l <= max_lag; ++l) {
    double acc = 0.0;
    const size_t n = x.size() - static_cast<size_t>(l);
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i + static_cast<size_t>(l)];
    r[static_cast<size_t>(l)] = acc / static_cast<double>(n);
  }
  return r;
}

}  // namespace

TEST_CASE("model validation rejects unstable coefficients") {
  CHECK_THROWS_AS(ArModel({1.0}, 1.0), ConfigError);
  CHECK_THROWS_AS(ArModel({0.5, 0.5}, 1.0), ConfigError);
  CHECK_THROWS_AS(ArModel({1.9, -0.9}, 1.0), ConfigError);
  CHECK_THROWS_AS(ArModel({0.9}, 0.0), ConfigError);
  CHECK_THROWS_AS(ArModel({0.9}, -1.0), ConfigError);
  CHECK_NOTHROW(ArModel({0.9}, 1.0));
  CHECK_NOTHROW(ArModel({0.5, 0.2}, 1.0));
  CHECK_NOTHROW(ArModel({}, 2.0));
}

TEST_CASE("burn-in length tracks the slowest mode") {
  CHECK(ArModel({}, 1.0).burn_in() == 0);
  // -log(0.9) = 0.10536..., 10*1/0.10536 = 94.9 -> 95, plus the order.
  CHECK(ArModel({0.9}, 1.0).burn_in() == 96);
  CHECK(ArModel({0.99}, 1.0).burn_in() > ArModel({0.9}, 1.0).burn_in());
}

TEST_CASE("generation is deterministic in the seed") {
  const ArModel m({0.9}, 1.0);
  const auto a = generate(m, 64, 123);
  const auto b = generate(m, 64, 123);
  const auto c = generate(m, 64, 124);
  CHECK(a == b);
  CHECK(a != c);
  CHECK_THROWS_AS(generate(m, 0, 1), ConfigError);
}

TEST_CASE("order-zero model reproduces the innovation stream") {
  const ArModel m({}, 1.0);
  const auto x = generate(m, 16, 55);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(x[i] == rand_gauss(55, static_cast<std::uint64_t>(i)));
}

TEST_CASE("autocovariance oracle closed forms") {
  SECTION("white noise") {
    const auto r = autocorr_oracle(ArModel({}, 2.5), 4);
    CHECK(r[0] == 2.5);
    for (size_t l = 1; l < r.size(); ++l) CHECK(r[l] == 0.0);
  }
  SECTION("first order") {
    const double a = 0.9, var = 1.0;
    const double r0 = var / (1.0 - a * a);
    CHECK(r0 == Catch::Approx(5.2631578947368425).epsilon(1e-15));
    const auto r = autocorr_oracle(ArModel({a}, var), 8);
    for (int l = 0; l <= 8; ++l)
      CHECK(r[static_cast<size_t>(l)] ==
            Catch::Approx(std::pow(a, l) * r0).epsilon(1e-12));
  }
  SECTION("second order by hand") {
    // a = (0.5, 0.2): r1 = 0.625 r0, r2 = 0.5125 r0, r0 = 1/0.585.
    const auto r = autocorr_oracle(ArModel({0.5, 0.2}, 1.0), 3);
    const double r0 = 1.0 / 0.585;
    CHECK(r[0] == Catch::Approx(r0).epsilon(1e-12));
    CHECK(r[1] == Catch::Approx(0.625 * r0).epsilon(1e-12));
    CHECK(r[2] == Catch::Approx(0.5125 * r0).epsilon(1e-12));
    CHECK(r[3] == Catch::Approx(0.5 * r[2] + 0.2 * r[1]).epsilon(1e-12));
  }
}

TEST_CASE("long paths match the autocovariance oracle") {
  const ArModel m({0.9}, 1.0);
  const auto x = generate(m, 1000000, 2024);
  const auto rs = sample_autocov(x, 3);
  const auto ro = autocorr_oracle(m, 3);
  CHECK(rs[0] == Catch::Approx(ro[0]).epsilon(0.02));
  for (int l = 0; l <= 3; ++l)
    CHECK(rs[static_cast<size_t>(l)] ==
          Catch::Approx(ro[static_cast<size_t>(l)]).epsilon(0.03));
}

TEST_CASE("second-order path matches its oracle") {
  const ArModel m({0.5, 0.2}, 1.0);
  const auto x = generate(m, 1000000, 77);
  const auto rs = sample_autocov(x, 3);
  const auto ro = autocorr_oracle(m, 3);
  for (int l = 0; l <= 3; ++l)
    CHECK(rs[static_cast<size_t>(l)] ==
          Catch::Approx(ro[static_cast<size_t>(l)]).epsilon(0.03));
}

TEST_CASE("first emitted sample is already stationary") {
  const ArModel m({0.95}, 1.0);
  const double r0 = autocorr_oracle(m, 0)[0];
  double acc = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    ArStream s(m, 9000 + static_cast<std::uint64_t>(t));
    const double x0 = s.next();
    acc += x0 * x0;
  }
  CHECK(acc / trials == Catch::Approx(r0).epsilon(0.10));
}

TEST_CASE("uniform innovations have the requested variance and support") {
  const ArModel m({}, 4.0, Innovation::uniform);
  const auto x = generate(m, 100000, 31);
  double acc = 0.0;
  const double bound = std::sqrt(3.0 * 4.0);
  for (double v : x) {
    acc += v * v;
    REQUIRE(std::fabs(v) <= bound);
  }
  CHECK(acc / static_cast<double>(x.size()) == Catch::Approx(4.0).epsilon(0.02));
}

TEST_CASE("predictor oracle closed forms") {
  const ArModel m({0.9}, 1.0);
  const double r0 = 5.2631578947368425;
  const double r1 = 0.9 * r0;

  SECTION("noiseless first order recovers the coefficient") {
    const auto po = optimal_predictor_oracle(m, 1, INFINITY);
    CHECK(po.taps[0] == Catch::Approx(0.9).epsilon(1e-12));
    CHECK(po.sigma_bar == Catch::Approx(1.0).epsilon(1e-12));
  }
  SECTION("finite gain shrinks the tap") {
    const double q = 1.0 / (12.0 * 4.0);
    const auto po = optimal_predictor_oracle(m, 1, 2.0);
    const double h = r1 / (r0 + q);
    CHECK(po.taps[0] == Catch::Approx(h).epsilon(1e-12));
    CHECK(po.sigma_bar ==
          Catch::Approx(std::sqrt(r0 + q - h * r1)).epsilon(1e-12));
  }
  SECTION("white noise is unpredictable") {
    const auto po = optimal_predictor_oracle(ArModel({}, 1.0), 3, 2.0);
    for (double h : po.taps) CHECK(std::fabs(h) < 1e-14);
    CHECK(po.sigma_bar == Catch::Approx(std::sqrt(1.0 + 1.0 / 48.0)).epsilon(1e-12));
  }
  SECTION("two taps against an independent solve") {
    const double q = 1.0 / 12.0;
    const double a11 = r0 + q, a12 = r1, b1 = r1, b2 = 0.9 * r1;
    const double det = a11 * a11 - a12 * a12;
    const double h1 = (b1 * a11 - a12 * b2) / det;
    const double h2 = (a11 * b2 - b1 * a12) / det;
    const auto po = optimal_predictor_oracle(m, 2, 1.0);
    CHECK(po.taps[0] == Catch::Approx(h1).epsilon(1e-10));
    CHECK(po.taps[1] == Catch::Approx(h2).epsilon(1e-10));
  }
}

TEST_CASE("predictor oracle minimizes the quadratic risk") {
  const ArModel m({0.9}, 1.0);
  const int p = 2;
  const double alpha = 1.0;
  const auto po = optimal_predictor_oracle(m, p, alpha);
  const auto rx = autocorr_oracle(m, p);
  const double q = 1.0 / (12.0 * alpha * alpha);
  auto mse = [&](double h1, double h2) {
    const double rb0 = rx[0] + q;
    // E[(v0 - h1 v1 - h2 v2)^2] expanded in second moments.
    return rb0 - 2.0 * (h1 * rx[1] + h2 * rx[2]) + h1 * h1 * rb0 +
           h2 * h2 * rb0 + 2.0 * h1 * h2 * rx[1];
  };
  const double best = mse(po.taps[0], po.taps[1]);
  CHECK(best == Catch::Approx(po.sigma_bar * po.sigma_bar).epsilon(1e-10));
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) {
      const double v = mse(po.taps[0] + 0.01 * i, po.taps[1] + 0.01 * j);
      REQUIRE(v >= best - 1e-12);
    }
}

TEST_CASE("prediction error never improves with fewer taps") {
  const ArModel m({0.5, 0.2}, 1.0);
  double prev = INFINITY;
  for (int p = 1; p <= 6; ++p) {
    const auto po = optimal_predictor_oracle(m, p, 4.0);
    REQUIRE(po.sigma_bar <= prev + 1e-12);
    prev = po.sigma_bar;
  }
}

TEST_CASE("predictor oracle argument validation") {
  const ArModel m({0.9}, 1.0);
  CHECK_THROWS_AS(optimal_predictor_oracle(m, 0, 1.0), ConfigError);
  CHECK_THROWS_AS(optimal_predictor_oracle(m, 1, 0.0), ConfigError);
  CHECK_THROWS_AS(optimal_predictor_oracle(m, 1, -2.0), ConfigError);
}
