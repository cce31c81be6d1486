#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "srb/io.hpp"
#include "srb/projection.hpp"
#include "srb/stats.hpp"

namespace srb {

// ---------------------------------------------------------------------------
// splits

enum class SplitMode { RecentAfterYear, RandomFraction };

struct SplitSpec {
  SplitMode mode = SplitMode::RecentAfterYear;
  double cutoff_year = 2005;  // test rows: year >= cutoff
  double fraction = 0.2;
  int repetition = 0;
  std::uint64_t seed = 1;
};

struct Split {
  ObservationSet train;
  ObservationSet test;
};

inline Split split(const ObservationSet& obs, const SplitSpec& spec) {
  std::vector<Observation> train, test;
  if (spec.mode == SplitMode::RecentAfterYear) {
    for (const auto& o : obs) (o.year >= spec.cutoff_year ? test : train).push_back(o);
  } else {
    if (!(spec.fraction > 0 && spec.fraction < 1)) throw Error(ErrorCode::InvalidArgument, "fraction must lie in (0, 1)");
    const std::size_t n = obs.size();
    const auto n_test = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = stream_rng(spec.seed, "split", std::to_string(spec.repetition));
    // partial Fisher-Yates: the first n_test positions form the test set
    for (std::size_t i = 0; i < n_test; ++i) std::swap(order[i], order[i + stats::uniform_index(rng, n - i)]);
    std::vector<bool> is_test(n, false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
    for (std::size_t i = 0; i < n; ++i) (is_test[i] ? test : train).push_back(obs[i]);
  }
  if (test.empty()) throw Error(ErrorCode::EmptyTest, "split leaves no test rows");
  return {ObservationSet(std::move(train)), ObservationSet(std::move(test))};
}

/// Integer cutoff year whose test share (rows with year >= cutoff) is closest to `target`.
inline int cutoff_for_fraction(const ObservationSet& obs, double target) {
  if (obs.empty()) throw Error(ErrorCode::NoData, "no observations");
  std::vector<double> years;
  for (const auto& o : obs) years.push_back(o.year);
  std::sort(years.begin(), years.end());
  const int lo = static_cast<int>(std::floor(years.front()));
  const int hi = static_cast<int>(std::ceil(years.back()));
  int best = hi;
  double best_gap = 2.0;
  for (int y = lo; y <= hi; ++y) {
    const auto first = std::lower_bound(years.begin(), years.end(), static_cast<double>(y));
    const double share = static_cast<double>(years.end() - first) / static_cast<double>(years.size());
    if (std::abs(share - target) < best_gap) {
      best_gap = std::abs(share - target);
      best = y;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// left-out observations

/// Posterior predictive summary of one left-out observation.
struct Prediction {
  std::string country;
  double y = 0;
  double median = 0;
  double q025 = 0, q975 = 0, q10 = 0, q90 = 0;

  static Prediction from_draws(std::string country, double y, std::vector<double> draws) {
    const auto s = stats::summarize(std::move(draws));
    return {std::move(country), y, s.q50, s.q025, s.q975, s.q10, s.q90};
  }
};

struct IntervalOutcome {
  double below = 0, inside = 0, above = 0;  // percentages
  std::size_t n_below = 0, n_inside = 0, n_above = 0, n = 0;
};

/// Share of rows strictly inside (l, u), at or below l, and at or above u.
inline IntervalOutcome interval_outcome(const std::vector<const Prediction*>& rows, bool ninety_five) {
  IntervalOutcome o;
  for (const auto* p : rows) {
    const double l = ninety_five ? p->q025 : p->q10;
    const double u = ninety_five ? p->q975 : p->q90;
    if (!(p->y > l)) ++o.n_below;
    else if (!(p->y < u)) ++o.n_above;
    else ++o.n_inside;
  }
  o.n = rows.size();
  const double n = static_cast<double>(rows.size());
  o.below = 100.0 * static_cast<double>(o.n_below) / n;
  o.above = 100.0 * static_cast<double>(o.n_above) / n;
  o.inside = 100.0 * static_cast<double>(o.n_inside) / n;
  return o;
}

struct LeftoutMetrics {
  std::size_t n_test_rows = 0;
  std::size_t n_test_countries = 0;
  std::size_t n_permutations = 0;
  double median_error = 0;
  double median_abs_error = 0;
  IntervalOutcome cover95, cover80;  // means over permutation sets
  bool sets_partition = true;        // below + inside + above == 100 in every set
};

inline constexpr std::size_t kDefaultPermutations = 1000;

/// Metrics over `n_perm` sets, each holding one randomly chosen left-out observation per
/// country; reported values are means over the sets.
inline LeftoutMetrics leftout_metrics(const std::vector<Prediction>& preds, std::size_t n_perm, Rng& rng) {
  if (preds.empty()) throw Error(ErrorCode::NoTestRows, "no left-out observations");
  if (n_perm == 0) throw Error(ErrorCode::InvalidArgument, "at least one permutation set required");
  std::map<std::string, std::vector<const Prediction*>> by_country;
  for (const auto& p : preds) by_country[p.country].push_back(&p);
  LeftoutMetrics m;
  m.n_test_rows = preds.size();
  m.n_test_countries = by_country.size();
  m.n_permutations = n_perm;
  std::vector<const Prediction*> set;
  std::vector<double> err, abs_err;
  for (std::size_t k = 0; k < n_perm; ++k) {
    set.clear();
    for (const auto& [code, rows] : by_country) set.push_back(rows[stats::uniform_index(rng, rows.size())]);
    err.clear();
    abs_err.clear();
    for (const auto* p : set) {
      err.push_back(p->y - p->median);
      abs_err.push_back(std::abs(p->y - p->median));
    }
    m.median_error += stats::median(err);
    m.median_abs_error += stats::median(abs_err);
    const auto c95 = interval_outcome(set, true);
    const auto c80 = interval_outcome(set, false);
    for (const auto& c : {c95, c80})
      if (c.n_below + c.n_inside + c.n_above != c.n) m.sets_partition = false;
    m.cover95.below += c95.below;
    m.cover95.inside += c95.inside;
    m.cover95.above += c95.above;
    m.cover80.below += c80.below;
    m.cover80.inside += c80.inside;
    m.cover80.above += c80.above;
  }
  const double n = static_cast<double>(n_perm);
  m.median_error /= n;
  m.median_abs_error /= n;
  for (auto* c : {&m.cover95, &m.cover80}) {
    c->below /= n;
    c->inside /= n;
    c->above /= n;
  }
  return m;
}

/// Posterior predictive draws for observations from a fit (trained without them).
/// Years after a country's fitted window are reached by forward AR(1) simulation.
inline std::vector<Prediction> predict_observations(const FittedModel& fit, const ObservationSet& test,
                                                    std::uint64_t seed) {
  const double floor = fit.variance_floor();
  std::map<std::string, std::vector<std::size_t>> rows_by_country;
  for (std::size_t i = 0; i < test.size(); ++i) rows_by_country[test[i].country].push_back(i);
  std::vector<Prediction> by_row(test.size());
  for (const auto& [code, rows] : rows_by_country) {
    auto c = fit.country_index(code);
    if (!c) throw Error(ErrorCode::MissingTheta, "fit does not include " + code);
    const auto& meta = fit.structure.countries[*c];
    int last = meta.eta_end;
    for (auto i : rows) last = std::max(last, test[i].grid_year());
    Rng rng = stream_rng(seed, code, "ppd");
    std::vector<std::vector<double>> draws(rows.size(), std::vector<double>(fit.draws.size()));
    for (std::size_t g = 0; g < fit.draws.size(); ++g) {
      const auto log_eta = log_eta_path(fit, g, *c, meta.eta_start, last, rng);
      const DrawView v = fit.view(g);
      const double beta = v.beta(*c);
      const bool trans = v.has_transition(*c);
      const TransitionParams tp = trans ? v.transition(*c) : TransitionParams{};
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& o = test[rows[k]];
        const int year = o.grid_year();
        double theta = beta * std::exp(log_eta[static_cast<std::size_t>(year - meta.eta_start)]);
        if (trans && tp.delta) theta += omega_at(tp, year);
        const double w = v.omega_sd(o.source);
        const double sd = std::sqrt(std::max(w * w + o.sampling_sd * o.sampling_sd, floor));
        draws[k][g] = theta * std::exp(sd * stats::std_normal(rng));
      }
    }
    for (std::size_t k = 0; k < rows.size(); ++k)
      by_row[rows[k]] = Prediction::from_draws(code, test[rows[k]].srb, std::move(draws[k]));
  }
  return by_row;
}

// ---------------------------------------------------------------------------
// estimate shifts between full-data and training fits

struct ShiftCell {
  int year = 0;
  std::size_t n_countries = 0;
  double median_error = 0;
  double median_abs_error = 0;
  std::size_t below95 = 0, above95 = 0, below80 = 0, above80 = 0;

  double pct(std::size_t k) const { return n_countries ? 100.0 * static_cast<double>(k) / static_cast<double>(n_countries) : 0.0; }
};

/// Table cell text: percentage with one decimal, followed by the count when nonzero.
inline std::string format_share(double pct, std::size_t count) {
  std::string s = csv::format_fixed(pct, 1);
  if (count > 0) s += " (" + std::to_string(count) + ")";
  return s;
}

struct ShiftMetrics {
  std::vector<ShiftCell> theta;
  std::vector<ShiftCell> inflation;  // only for fits with transitions
};

inline const std::vector<int> kShiftYears = {1995, 2005, 2015};

namespace detail {

struct YearDraws {
  std::vector<double> theta;
  std::vector<double> inflation;
};

inline YearDraws country_year_draws(const FittedModel& fit, std::size_t c, int year, std::uint64_t seed) {
  const auto& meta = fit.structure.countries[c];
  Rng rng = stream_rng(seed, meta.code, "shift/" + std::to_string(year));
  YearDraws d;
  for (std::size_t g = 0; g < fit.draws.size(); ++g) {
    const auto log_eta = log_eta_path(fit, g, c, year, year, rng);
    const DrawView v = fit.view(g);
    double infl = 0.0;
    if (v.has_transition(c)) {
      const auto tp = v.transition(c);
      if (tp.delta) infl = omega_at(tp, year);
    }
    d.inflation.push_back(infl);
    d.theta.push_back(v.beta(c) * std::exp(log_eta.back()) + infl);
  }
  return d;
}

inline ShiftCell shift_cell(int year, const std::vector<double>& full_med, const std::vector<stats::Summary>& train) {
  ShiftCell cell;
  cell.year = year;
  cell.n_countries = full_med.size();
  std::vector<double> err, abs_err;
  for (std::size_t i = 0; i < full_med.size(); ++i) {
    const double e = full_med[i] - train[i].q50;
    err.push_back(e);
    abs_err.push_back(std::abs(e));
    if (!(full_med[i] > train[i].q025)) ++cell.below95;
    else if (!(full_med[i] < train[i].q975)) ++cell.above95;
    if (!(full_med[i] > train[i].q10)) ++cell.below80;
    else if (!(full_med[i] < train[i].q90)) ++cell.above80;
  }
  if (!err.empty()) {
    cell.median_error = stats::median(err);
    cell.median_abs_error = stats::median(abs_err);
  }
  return cell;
}

}  // namespace detail

/// Countries present in both fits are compared at each reference year.
inline ShiftMetrics estimate_shift_metrics(const FittedModel& full, const FittedModel& train,
                                           const std::vector<int>& years, std::uint64_t seed) {
  ShiftMetrics out;
  const bool with_inflation = has_transitions(full.structure.spec.kind) && has_transitions(train.structure.spec.kind);
  for (int year : years) {
    std::vector<double> full_theta, full_infl;
    std::vector<stats::Summary> train_theta, train_infl;
    for (std::size_t cf = 0; cf < full.structure.countries.size(); ++cf) {
      const auto& code = full.structure.countries[cf].code;
      auto ct = train.country_index(code);
      if (!ct) continue;
      if (year < full.structure.countries[cf].eta_start || year < train.structure.countries[*ct].eta_start)
        throw Error(ErrorCode::MissingYear, code + " has no estimate in " + std::to_string(year));
      const auto f = detail::country_year_draws(full, cf, year, seed);
      const auto t = detail::country_year_draws(train, *ct, year, seed);
      full_theta.push_back(stats::median(f.theta));
      train_theta.push_back(stats::summarize(t.theta));
      full_infl.push_back(stats::median(f.inflation));
      train_infl.push_back(stats::summarize(t.inflation));
    }
    out.theta.push_back(detail::shift_cell(year, full_theta, train_theta));
    if (with_inflation) out.inflation.push_back(detail::shift_cell(year, full_infl, train_infl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// predicting transitions from 1970

/// Predictions for at-risk observations after 1970: eta from the M2 fit up to 1970 and
/// simulated forward with M1 fluctuation draws; indicator and trapezoid drawn from the M2
/// hyperparameter draws; baselines from M1 draws.
inline std::vector<Prediction> predict_from_1970(const FittedModel& m1, const FittedModel& m2,
                                                 const ObservationSet& at_risk, std::uint64_t seed) {
  if (m2.layout.hyper.mu_xi < 0) throw Error(ErrorCode::MissingHyperDraws, "M2 fit has no hyperparameter draws");
  if (m1.layout.rho < 0) throw Error(ErrorCode::InvalidArgument, "expected an M1 fit");
  const double floor = m2.variance_floor();
  const ObservationSet later = at_risk.filter([](const Observation& o) { return o.grid_year() > kRiskFreeLastYear; });
  std::map<std::string, std::vector<std::size_t>> rows_by_country;
  for (std::size_t i = 0; i < later.size(); ++i) rows_by_country[later[i].country].push_back(i);
  std::vector<Prediction> by_row(later.size());
  const std::size_t G = m2.draws.size();
  for (const auto& [code, rows] : rows_by_country) {
    auto c2 = m2.country_index(code);
    auto c1 = m1.country_index(code);
    if (!c2 || !c1) throw Error(ErrorCode::MissingTheta, "fits do not include " + code);
    const auto& meta = m2.structure.countries[*c2];
    int last = kRiskFreeLastYear;
    for (auto i : rows) last = std::max(last, later[i].grid_year());
    Rng align = stream_rng(seed, code, "align/m1");
    const auto idx1 = align_draws(m1.draws.size(), G, align);
    Rng rng = stream_rng(seed, code, "predict1970");
    std::vector<std::vector<double>> draws(rows.size(), std::vector<double>(G));
    for (std::size_t g = 0; g < G; ++g) {
      const DrawView v2 = m2.view(g);
      const DrawView v1 = m1.view(idx1[g]);
      const auto [rho, sigma] = v1.phi();
      // eta up to 1970 from M2, beyond from the M1 fluctuation process
      const int anchor = std::min(kRiskFreeLastYear, meta.eta_end);
      double u = std::log(v2.eta(*c2, anchor));
      std::vector<double> log_eta(static_cast<std::size_t>(last - kRiskFreeLastYear + 1));
      for (int t = anchor + 1; t <= kRiskFreeLastYear; ++t) u = rho * u + sigma * stats::std_normal(rng);
      log_eta[0] = u;
      for (int t = kRiskFreeLastYear + 1; t <= last; ++t) {
        u = rho * u + sigma * stats::std_normal(rng);
        log_eta[static_cast<std::size_t>(t - kRiskFreeLastYear)] = u;
      }
      const auto h = v2.hyper();
      const double pi = stats::inv_logit(h.mu_pi + h.sigma_pi * stats::std_normal(rng));
      TransitionParams tp;
      tp.delta = stats::uniform01(rng) < pi ? 1 : 0;
      tp.xi = stats::sample_truncnorm_lower(rng, h.mu_xi, h.sigma_xi, 0.0);
      tp.lambda1 = stats::sample_truncnorm_lower(rng, h.mu_lambda[0], h.sigma_lambda[0], 0.0);
      tp.lambda2 = stats::sample_truncnorm_lower(rng, h.mu_lambda[1], h.sigma_lambda[1], 0.0);
      tp.lambda3 = stats::sample_truncnorm_lower(rng, h.mu_lambda[2], h.sigma_lambda[2], 0.0);
      tp.gamma0 = stats::sample_trunct_lower(rng, meta.x, h.sigma_gamma, meta.z, kStartYearDf);
      const double beta = v1.beta(*c1);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& o = later[rows[k]];
        const int year = o.grid_year();
        double theta = beta * std::exp(log_eta[static_cast<std::size_t>(year - kRiskFreeLastYear)]);
        if (tp.delta) theta += omega_at(tp, year);
        const double w = v2.omega_sd(o.source);
        const double sd = std::sqrt(std::max(w * w + o.sampling_sd * o.sampling_sd, floor));
        draws[k][g] = theta * std::exp(sd * stats::std_normal(rng));
      }
    }
    for (std::size_t k = 0; k < rows.size(); ++k)
      by_row[rows[k]] = Prediction::from_draws(code, later[rows[k]].srb, std::move(draws[k]));
  }
  return by_row;
}

// ---------------------------------------------------------------------------
// reports

inline Json to_json(const LeftoutMetrics& m) {
  return {{"n_test_rows", m.n_test_rows},
          {"n_test_countries", m.n_test_countries},
          {"n_permutations", m.n_permutations},
          {"median_error", m.median_error},
          {"median_abs_error", m.median_abs_error},
          {"below95_pct", m.cover95.below},
          {"inside95_pct", m.cover95.inside},
          {"above95_pct", m.cover95.above},
          {"below80_pct", m.cover80.below},
          {"inside80_pct", m.cover80.inside},
          {"above80_pct", m.cover80.above}};
}

inline Json to_json(const ShiftCell& c) {
  return {{"year", c.year},
          {"n_countries", c.n_countries},
          {"median_error", c.median_error},
          {"median_abs_error", c.median_abs_error},
          {"below95", format_share(c.pct(c.below95), c.below95)},
          {"above95", format_share(c.pct(c.above95), c.above95)},
          {"below80", format_share(c.pct(c.below80), c.below80)},
          {"above80", format_share(c.pct(c.above80), c.above80)}};
}

inline std::string leftout_csv(const LeftoutMetrics& m) {
  std::string s = "metric,value\n";
  auto row = [&](const std::string& k, const std::string& v) { s += k + ',' + v + '\n'; };
  row("countries_in_test", std::to_string(m.n_test_countries));
  row("test_rows", std::to_string(m.n_test_rows));
  row("median_error", csv::format_fixed(m.median_error, 3));
  row("median_abs_error", csv::format_fixed(m.median_abs_error, 3));
  row("below_95_pct", csv::format_fixed(m.cover95.below, 1));
  row("above_95_pct", csv::format_fixed(m.cover95.above, 1));
  row("below_80_pct", csv::format_fixed(m.cover80.below, 1));
  row("above_80_pct", csv::format_fixed(m.cover80.above, 1));
  return s;
}

inline std::string shift_csv(const ShiftMetrics& m) {
  std::string s = "outcome,year,countries,median_error,median_abs_error,below95,above95,below80,above80\n";
  auto rows = [&](const char* name, const std::vector<ShiftCell>& cells) {
    for (const auto& c : cells)
      s += std::string(name) + ',' + std::to_string(c.year) + ',' + std::to_string(c.n_countries) + ',' +
           csv::format_fixed(c.median_error, 3) + ',' + csv::format_fixed(c.median_abs_error, 3) + ',' +
           csv::quote(format_share(c.pct(c.below95), c.below95)) + ',' +
           csv::quote(format_share(c.pct(c.above95), c.above95)) + ',' +
           csv::quote(format_share(c.pct(c.below80), c.below80)) + ',' +
           csv::quote(format_share(c.pct(c.above80), c.above80)) + '\n';
  };
  rows("theta", m.theta);
  rows("inflation", m.inflation);
  return s;
}

}  // namespace srb
