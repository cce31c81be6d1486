#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>

#include "srb/data.hpp"
#include "srb/stats.hpp"

namespace srb {

inline constexpr double kOmegaUpper = 0.5;
inline constexpr double kDefaultVarianceFloor = 1e-8;

/// Non-sampling error standard deviations by source type (log scale).
/// CRVS/SRS carries none.
struct ErrorModel {
  std::array<double, kSourceTypeCount> omega{};
  double variance_floor = kDefaultVarianceFloor;

  double operator[](SourceType s) const { return omega[static_cast<std::size_t>(s)]; }

  void set(SourceType s, double value) {
    if (s == SourceType::CrvsSrs && value != 0.0)
      throw Error(ErrorCode::InvalidArgument, "CRVS/SRS non-sampling error is fixed at zero");
    if (!(value >= 0.0 && value <= kOmegaUpper))
      throw Error(ErrorCode::SupportViolation, "omega outside [0, 0.5]");
    omega[static_cast<std::size_t>(s)] = value;
  }

  double total_variance(SourceType s, double sampling_sd) const {
    const double w = (*this)[s];
    const double var = w * w + sampling_sd * sampling_sd;
    if (var == 0.0 && variance_floor <= 0.0)
      throw Error(ErrorCode::ZeroTotalVariance, "zero sampling and non-sampling variance");
    return std::max(var, variance_floor);
  }
};

/// log N(log y | log theta, omega_s^2 + v^2), density of log y.
inline double obs_log_density(const Observation& y, double theta, const ErrorModel& em) {
  if (!(theta > 0)) throw Error(ErrorCode::NonPositiveTheta, "theta must be positive");
  const double var = em.total_variance(y.source, y.sampling_sd);
  return stats::normal_logpdf_var(std::log(y.srb), std::log(theta), var);
}

using ThetaLookup = std::function<std::optional<double>(const std::string& country, int year)>;

inline double total_log_likelihood(const ObservationSet& obs, const ThetaLookup& theta, const ErrorModel& em) {
  double total = 0.0;
  for (const auto& y : obs) {
    auto th = theta(y.country, y.grid_year());
    if (!th) throw Error(ErrorCode::MissingTheta, y.country + " " + std::to_string(y.grid_year()));
    const double ld = obs_log_density(y, *th, em);
    if (!std::isfinite(ld)) throw Error(ErrorCode::NonFiniteDensity, "observation of " + y.country);
    total += ld;
  }
  return total;
}

using ThetaField = std::map<std::pair<std::string, int>, double>;

inline double total_log_likelihood(const ObservationSet& obs, const ThetaField& field, const ErrorModel& em) {
  return total_log_likelihood(
      obs,
      [&](const std::string& c, int t) -> std::optional<double> {
        auto it = field.find({c, t});
        if (it == field.end()) return std::nullopt;
        return it->second;
      },
      em);
}

}  // namespace srb
