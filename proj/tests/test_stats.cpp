#include <cmath>
#include <limits>
#include <vector>

#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include "rareis/random.hpp"
#include "rareis/stats.hpp"

using namespace rareis;

TEST_CASE("splitmix64 matches the reference generator's first outputs") {
  // Reference SplitMix64 seeded with state 0: outputs of next() for state = k * gamma.
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
  CHECK(splitmix64(0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("derived seeds differ across streams and are reproducible") {
  CHECK(derive_seed(7, 0) == derive_seed(7, 0));
  CHECK(derive_seed(7, 0) != derive_seed(7, 1));
  CHECK(derive_seed(7, 0) != derive_seed(8, 0));
}

TEST_CASE("chunked normal draws reproduce one large draw") {
  Rng a(11), b(11);
  const Points whole = standard_normal(3, 7, a);
  const Points first = standard_normal(3, 4, b);
  const Points rest = standard_normal(3, 3, b);
  CHECK(whole.leftCols(4) == first);
  CHECK(whole.rightCols(3) == rest);
}

TEST_CASE("normal cdf and quantile agree with boost") {
  const boost::math::normal_distribution<double> n01;
  for (double z = -8.0; z <= 8.0; z += 0.25) {
    CHECK(normal_cdf(z) == doctest::Approx(boost::math::cdf(n01, z)).epsilon(1e-13));
  }
  for (double p : {1e-10, 0.001, 0.3, 0.5, 0.975}) CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  CHECK_THROWS(normal_quantile(0.0));
  CHECK_THROWS(normal_quantile(1.0));
}

TEST_CASE("log normal cdf stays accurate in the far tail") {
  for (double z = -150.0; z <= 8.0; z += 0.5) {
    const long double ref = std::log(0.5L * std::erfc(-static_cast<long double>(z) / std::sqrt(2.0L)));
    CHECK(log_normal_cdf(z) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
  }
}

TEST_CASE("log_sum_exp and coefficient of variation") {
  const std::vector<double> v{1000.0, 1000.0};
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + std::log(2.0)));
  CHECK(log_sum_exp(std::vector<double>{}) == -std::numeric_limits<double>::infinity());
  const std::vector<double> c{1.0, 3.0};
  CHECK(coefficient_of_variation(c) == doctest::Approx(0.5));
  CHECK(std::isinf(coefficient_of_variation(std::vector<double>{-1.0, 1.0})));
}
