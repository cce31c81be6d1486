#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "srb/error.hpp"

namespace srb {

using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

namespace stats {

inline double std_normal(Rng& rng) { return std::normal_distribution<double>{}(rng); }

/// Uniform on the open interval (0, 1).
inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>{0, n - 1}(rng);
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double normal_logpdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * z * z;
}

inline double normal_logpdf_var(double x, double mean, double var) {
  const double d = x - mean;
  return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// log P(Z > z) for standard normal Z.
inline double normal_log_sf(double z) {
  if (z < 30.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  // asymptotic expansion keeps precision far in the upper tail
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z) - kLogSqrt2Pi +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

/// Normal(mean, sd) truncated to [lower, inf).
inline double truncnorm_lower_logpdf(double x, double mean, double sd, double lower) {
  if (x < lower || !(sd > 0)) return kNegInf;
  return normal_logpdf(x, mean, sd) - normal_log_sf((lower - mean) / sd);
}

inline double student_t_logpdf(double x, double nu) {
  return std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
         0.5 * (nu + 1) * std::log1p(x * x / nu);
}

inline double student_t_sf(double x, double nu) {
  return boost::math::cdf(boost::math::complement(boost::math::students_t_distribution<double>(nu), x));
}

/// Location-scale Student-t truncated to [lower, inf).
inline double trunct_lower_logpdf(double x, double location, double scale, double lower, double nu) {
  if (x < lower || !(scale > 0)) return kNegInf;
  const double tail = student_t_sf((lower - location) / scale, nu);
  if (!(tail > 0)) return kNegInf;
  return student_t_logpdf((x - location) / scale, nu) - std::log(scale) - std::log(tail);
}

inline double uniform_logpdf(double x, double lo, double hi) {
  if (!(x > lo && x < hi)) return kNegInf;
  return -std::log(hi - lo);
}

/// Draw from Normal(mean, sd) truncated to [lower, inf).
inline double sample_truncnorm_lower(Rng& rng, double mean, double sd, double lower) {
  const double alpha = (lower - mean) / sd;
  if (alpha < 3.0) {
    if (alpha < -3.0) {
      for (;;) {
        const double x = mean + sd * std_normal(rng);
        if (x >= lower) return x;
      }
    }
    // inverse cdf on the upper tail mass
    const boost::math::normal_distribution<double> n01;
    const double tail = boost::math::cdf(boost::math::complement(n01, alpha));
    const double u = uniform01(rng) * tail;
    const double z = boost::math::quantile(boost::math::complement(n01, u));
    return mean + sd * std::max(z, alpha);
  }
  // exponential rejection sampler for the far tail (Robert 1995)
  const double rate = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
  for (;;) {
    const double z = alpha - std::log(uniform01(rng)) / rate;
    const double d = z - rate;
    if (uniform01(rng) <= std::exp(-0.5 * d * d)) return mean + sd * z;
  }
}

/// Draw from location-scale Student-t truncated to [lower, inf).
inline double sample_trunct_lower(Rng& rng, double location, double scale, double lower, double nu) {
  const boost::math::students_t_distribution<double> t(nu);
  const double alpha = (lower - location) / scale;
  const double tail = boost::math::cdf(boost::math::complement(t, alpha));
  const double u = uniform01(rng) * tail;
  const double z = boost::math::quantile(boost::math::complement(t, u));
  return location + scale * std::max(z, alpha);
}

/// Linear interpolation between order statistics (R type 7). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Summary {
  double q025 = 0, q10 = 0, q50 = 0, q90 = 0, q975 = 0;
  double mean = 0;
};

inline Summary summarize(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "summary of empty sample");
  std::sort(values.begin(), values.end());
  Summary s;
  s.q025 = quantile_sorted(values, 0.025);
  s.q10 = quantile_sorted(values, 0.10);
  s.q50 = quantile_sorted(values, 0.50);
  s.q90 = quantile_sorted(values, 0.90);
  s.q975 = quantile_sorted(values, 0.975);
  double acc = 0.0;
  for (double v : values) acc += v;
  s.mean = acc / static_cast<double>(values.size());
  return s;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, 0.5);
}

}  // namespace stats
}  // namespace srb
