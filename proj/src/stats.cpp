#include "rareis/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

namespace rareis {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double log_normal_cdf(double z) {
  if (z > 5.0) return std::log1p(-0.5 * std::erfc(z / std::sqrt(2.0)));
  if (z > -37.0) return std::log(0.5 * std::erfc(-z / std::sqrt(2.0)));
  // Asymptotic Mills-ratio expansion; truncation error < 2e-15 for z <= -37.
  const double z2 = z * z;
  const double inv = 1.0 / z2;
  const double series =
      1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv * (1.0 - 9.0 * inv))));
  return -0.5 * z2 - std::log(-z) - 0.5 * kLog2Pi + std::log(series);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double log_sum_exp(std::span<const double> values) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : values) top = std::max(top, v);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - top);
  return top + std::log(acc);
}

double coefficient_of_variation(std::span<const double> values) {
  if (values.empty()) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  if (mean == 0.0) return std::numeric_limits<double>::infinity();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  return std::sqrt(var) / std::abs(mean);
}

}  // namespace rareis
