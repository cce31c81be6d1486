#pragma once

#include <string>
#include <vector>

#include "srb/data.hpp"
#include "srb/projection.hpp"
#include "srb/stats.hpp"

namespace srb {

inline constexpr int kDefaultCmfbStart = 1970;

/// Female births implied by total births and the SRB.
inline double female_births(double births, double theta) {
  if (!(theta > 0)) throw Error(ErrorCode::NonPositiveTheta, "SRB must be positive");
  if (!(births >= 0)) throw Error(ErrorCode::InvalidArgument, "births must be nonnegative");
  return births / (1.0 + theta);
}

/// Female births had the male births been born at the inflation-free SRB.
inline double inflation_free_female(double births, double female, double theta_free) {
  if (!(theta_free > 0)) throw Error(ErrorCode::NonPositiveTheta, "inflation-free SRB must be positive");
  return (births - female) / theta_free;
}

inline double missing_female_births(double births, double theta, double theta_free) {
  const double female = female_births(births, theta);
  return inflation_free_female(births, female, theta_free) - female;
}

/// Annual and cumulative missing female births per draw over [t1, t2].
struct BirthsAccounting {
  std::string country;
  Scenario scenario = Scenario::S1;
  std::string unit;
  int t1 = kDefaultCmfbStart;
  int t2 = kGridEnd;
  std::size_t n_draws = 0;
  std::vector<double> amfb;  // [g * n_years + t]
  std::vector<double> cmfb;

  std::size_t n_years() const { return static_cast<std::size_t>(t2 - t1 + 1); }
  std::vector<double> column(const std::vector<double>& v, int year) const {
    std::vector<double> out(n_draws);
    for (std::size_t g = 0; g < n_draws; ++g) out[g] = v[g * n_years() + static_cast<std::size_t>(year - t1)];
    return out;
  }
};

inline BirthsAccounting amfb_cmfb(const CountryTrajectories& tr, const BirthsTable& births, int t1, int t2) {
  if (t1 > t2) throw Error(ErrorCode::InvalidArgument, "accounting window is empty");
  if (t1 < tr.first_year || t2 > tr.last_year) throw Error(ErrorCode::MissingYear, "window outside the trajectories");
  BirthsAccounting acc;
  acc.country = tr.country;
  acc.scenario = tr.scenario;
  acc.unit = births.unit;
  acc.t1 = t1;
  acc.t2 = t2;
  acc.n_draws = tr.n_draws;
  const std::size_t T = acc.n_years();
  std::vector<double> b(T);
  for (std::size_t t = 0; t < T; ++t) b[t] = births.at(tr.country, t1 + static_cast<int>(t));
  acc.amfb.resize(tr.n_draws * T);
  acc.cmfb.resize(tr.n_draws * T);
  for (std::size_t g = 0; g < tr.n_draws; ++g) {
    double running = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const int year = t1 + static_cast<int>(t);
      const double theta = tr.theta_at(g, year);
      const double theta_free = theta - tr.inflation_at(g, year);
      const double a = missing_female_births(b[t], theta, theta_free);
      running += a;
      acc.amfb[g * T + t] = a;
      acc.cmfb[g * T + t] = running;
    }
  }
  return acc;
}

inline std::string births_header() {
  return "country_code,year,scenario,amfb_q50,amfb_q025,amfb_q975,cmfb_q50,cmfb_q025,cmfb_q975\n";
}

inline std::string births_rows(const BirthsAccounting& acc) {
  std::string s;
  for (int year = acc.t1; year <= acc.t2; ++year) {
    const auto a = stats::summarize(acc.column(acc.amfb, year));
    const auto c = stats::summarize(acc.column(acc.cmfb, year));
    s += csv::quote(acc.country) + ',' + std::to_string(year) + ',' + std::string(to_string(acc.scenario));
    for (double v : {a.q50, a.q025, a.q975, c.q50, c.q025, c.q975}) s += ',' + csv::format_double(v);
    s += '\n';
  }
  return s;
}

}  // namespace srb
