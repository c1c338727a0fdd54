#pragma once

#include <span>

namespace rareis {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Standard normal CDF.
double normal_cdf(double z);

/// log of the standard normal CDF, accurate far into the lower tail where
/// the CDF itself underflows.
double log_normal_cdf(double z);

/// Inverse of the standard normal CDF, p in (0, 1).
double normal_quantile(double p);

/// Stable log(sum(exp(v))). Returns -inf for an empty span or all -inf.
double log_sum_exp(std::span<const double> values);

/// Population coefficient of variation std/mean. Returns +inf when the mean
/// is zero.
double coefficient_of_variation(std::span<const double> values);

}  // namespace rareis
