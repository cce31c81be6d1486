#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "srb/data.hpp"
#include "srb/io.hpp"
#include "srb/model.hpp"
#include "srb/stats.hpp"

namespace srb {

inline constexpr double kInflationEvidence = 0.95;
inline constexpr std::size_t kDefaultProjectionDraws = 4000;

/// Independent random stream for one (country, purpose) pair.
inline Rng stream_rng(std::uint64_t seed, std::string_view country, std::string_view purpose) {
  const std::string key = std::string(country) + '/' + std::string(purpose);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : key) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// latent paths of a fitted model

/// log eta of draw g over [from, to]; years after the fitted window are simulated forward
/// from the last fitted year with the draw's AR(1) parameters.
inline std::vector<double> log_eta_path(const FittedModel& fit, std::size_t g, std::size_t c, int from, int to,
                                        Rng& rng) {
  const auto& meta = fit.structure.countries[c];
  if (from < meta.eta_start)
    throw Error(ErrorCode::MissingYear, "no eta for " + meta.code + " before " + std::to_string(meta.eta_start));
  const DrawView v = fit.view(g);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(0, to - from + 1)));
  const int fitted_to = std::min(to, meta.eta_end);
  for (int t = from; t <= fitted_to; ++t) out.push_back(std::log(v.eta(c, t)));
  if (to > meta.eta_end) {
    const auto [rho, sigma] = v.phi();
    double u = std::log(v.eta(c, meta.eta_end));
    for (int t = meta.eta_end + 1; t <= to; ++t) {
      u = rho * u + sigma * stats::std_normal(rng);
      if (t >= from) out.push_back(u);
    }
  }
  return out;
}

/// Index map pairing G target draws with a fit's draws: identity when the counts agree,
/// otherwise uniform resampling with replacement.
inline std::vector<std::size_t> align_draws(std::size_t available, std::size_t target, Rng& rng, bool allow_resample = true) {
  if (available == 0) throw Error(ErrorCode::MissingFit, "fit has no draws");
  std::vector<std::size_t> idx(target);
  if (available == target) {
    for (std::size_t g = 0; g < target; ++g) idx[g] = g;
    return idx;
  }
  if (!allow_resample)
    throw Error(ErrorCode::DrawCountMismatch,
                std::to_string(available) + " draws where " + std::to_string(target) + " are required");
  for (auto& i : idx) i = stats::uniform_index(rng, available);
  return idx;
}

// ---------------------------------------------------------------------------
// classification

enum class CountryClass { Base, Inflation, FutureInf };

inline std::string_view to_string(CountryClass c) {
  switch (c) {
    case CountryClass::Base: return "base";
    case CountryClass::Inflation: return "inflation";
    case CountryClass::FutureInf: return "future-inf";
  }
  return "?";
}

/// Posterior mean of each country's inflation indicator.
inline std::map<std::string, double> compute_psi(const FittedModel& m2) {
  std::map<std::string, double> psi;
  for (std::size_t c = 0; c < m2.structure.countries.size(); ++c) {
    const int slot = m2.layout.countries[c].delta;
    if (slot < 0) continue;
    const auto col = m2.draws.column(static_cast<std::size_t>(slot));
    double on = 0.0;
    for (double d : col) on += d;
    psi[m2.structure.countries[c].code] = on / static_cast<double>(col.size());
  }
  return psi;
}

struct Classification {
  std::map<std::string, double> psi;
  std::map<std::string, CountryClass> of;

  std::vector<std::string> members(CountryClass k) const {
    std::vector<std::string> out;
    for (const auto& [code, c] : of)
      if (c == k) out.push_back(code);
    return out;
  }
};

inline Classification classify(const CountryRegistry& reg, const std::map<std::string, double>& psi) {
  Classification out;
  out.psi = psi;
  for (const auto& c : reg.countries()) {
    if (!c.at_risk) {
      out.of[c.code] = CountryClass::Base;
      continue;
    }
    auto it = psi.find(c.code);
    if (it == psi.end()) throw Error(ErrorCode::MissingPsi, "no inflation probability for " + c.code);
    out.of[c.code] = it->second >= kInflationEvidence ? CountryClass::Inflation : CountryClass::FutureInf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// scenarios

enum class Scenario { S1, S2, S3 };

inline std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::S3: return "S3";
  }
  return "?";
}

inline Scenario parse_scenario(std::string_view s) {
  if (s == "S1" || s == "s1") return Scenario::S1;
  if (s == "S2" || s == "s2") return Scenario::S2;
  if (s == "S3" || s == "s3") return Scenario::S3;
  throw Error(ErrorCode::InvalidArgument, "unknown scenario " + std::string(s));
}

/// SRB draws of one country under one scenario, year-major within each draw.
struct CountryTrajectories {
  std::string country;
  Scenario scenario = Scenario::S1;
  int first_year = kGridStart;
  int last_year = kGridEnd;
  std::size_t n_draws = 0;
  std::vector<double> theta;      // [g * n_years + t]
  std::vector<double> inflation;  // delta * Omega component, same layout
  std::vector<int> delta;         // per draw
  bool tfr_uncertainty = false;

  std::size_t n_years() const { return static_cast<std::size_t>(last_year - first_year + 1); }
  double theta_at(std::size_t g, int year) const { return theta[g * n_years() + static_cast<std::size_t>(year - first_year)]; }
  double inflation_at(std::size_t g, int year) const {
    return inflation[g * n_years() + static_cast<std::size_t>(year - first_year)];
  }
  std::vector<double> theta_column(int year) const { return column(theta, year); }
  std::vector<double> inflation_column(int year) const { return column(inflation, year); }

 private:
  std::vector<double> column(const std::vector<double>& v, int year) const {
    std::vector<double> out(n_draws);
    for (std::size_t g = 0; g < n_draws; ++g) out[g] = v[g * n_years() + static_cast<std::size_t>(year - first_year)];
    return out;
  }
};

struct ProjectionInputs {
  const CountryRegistry* registry = nullptr;
  const FittedModel* m1 = nullptr;
  const FittedModel* m2 = nullptr;
  std::map<std::string, const FittedModel*> m3;  // by country
  std::map<std::string, const FittedModel*> m4;
  const TfrTable* tfr = nullptr;
  std::map<std::string, TfrAnchors> anchors;
  std::map<std::string, int> last_obs_year;
  Classification classes;
  std::size_t n_draws = kDefaultProjectionDraws;
  bool resample = true;
  bool tfr_uncertainty = true;
  std::uint64_t seed = 1;
  int first_year = kGridStart;
  int last_year = kGridEnd;
};

/// Year shift of one TFR trajectory's start-year anchor against the median anchor.
inline int tfr_anchor_shift(const TfrTable& tfr, const std::string& code, std::size_t trajectory, int median_x) {
  const auto& ct = tfr.at(code);
  const auto a = anchors_from_series(code, ct.trajectories.at(trajectory));
  return a.x - median_x;
}

inline bool has_tfr_trajectories(const TfrTable* tfr, const std::string& code) {
  if (!tfr) return false;
  auto it = tfr->countries.find(code);
  return it != tfr->countries.end() && !it->second.trajectories.empty();
}

namespace detail {

inline const FittedModel& need_fit(const FittedModel* f, const std::string& what) {
  if (!f) throw Error(ErrorCode::MissingFit, what);
  return *f;
}

inline const FittedModel& need_country_fit(const std::map<std::string, const FittedModel*>& fits,
                                           const std::string& code, const std::string& what) {
  auto it = fits.find(code);
  if (it == fits.end() || !it->second) throw Error(ErrorCode::MissingFit, what + " for " + code);
  return *it->second;
}

inline std::size_t need_country(const FittedModel& fit, const std::string& code, const std::string& what) {
  auto c = fit.country_index(code);
  if (!c) throw Error(ErrorCode::MissingFit, what + " does not include " + code);
  return *c;
}

}  // namespace detail

/// Assembles scenario S for one country. Draw pairing and random streams depend only on
/// the seed, the country and the source fit, so shared components agree across scenarios.
inline CountryTrajectories assemble_country(const ProjectionInputs& in, const std::string& code, Scenario s) {
  const auto cls_it = in.classes.of.find(code);
  if (cls_it == in.classes.of.end()) throw Error(ErrorCode::MissingPsi, "no classification for " + code);
  const CountryClass cls = cls_it->second;

  const FittedModel& m1 = detail::need_fit(in.m1, "M1 fit required");
  const std::size_t c1 = detail::need_country(m1, code, "M1 fit");

  // which fit supplies eta and transitions
  const FittedModel* src = &m1;
  std::string tag = "m1";
  if (cls == CountryClass::Inflation || (cls == CountryClass::FutureInf && s == Scenario::S2)) {
    src = &detail::need_fit(in.m2, "M2 fit required for " + code);
    tag = "m2";
  } else if (cls == CountryClass::FutureInf && s == Scenario::S1) {
    src = &detail::need_country_fit(in.m3, code, "M3 fit");
    tag = "m3";
  } else if (cls == CountryClass::FutureInf && s == Scenario::S3) {
    src = &detail::need_country_fit(in.m4, code, "M4 fit");
    tag = "m4";
  }
  const std::size_t cs = detail::need_country(*src, code, to_string(src->structure.spec.kind).data());

  const std::size_t G = in.n_draws;
  Rng align1 = stream_rng(in.seed, code, "align/m1");
  const auto idx1 = align_draws(m1.draws.size(), G, align1, in.resample);
  std::vector<std::size_t> idx_src = idx1;
  if (src != &m1) {
    Rng align = stream_rng(in.seed, code, "align/" + tag);
    idx_src = align_draws(src->draws.size(), G, align, in.resample);
  }
  Rng eta_rng = stream_rng(in.seed, code, "eta/" + tag);

  const bool inject = cls == CountryClass::FutureInf && s != Scenario::S1 && in.tfr_uncertainty &&
                      has_tfr_trajectories(in.tfr, code);
  Rng tfr_rng = stream_rng(in.seed, code, std::string("tfr/") + std::string(to_string(s)));
  int median_x = 0;
  int last_obs = std::numeric_limits<int>::min();
  std::size_t n_traj = 0;
  if (inject) {
    median_x = in.anchors.at(code).x;
    if (auto it = in.last_obs_year.find(code); it != in.last_obs_year.end()) last_obs = it->second;
    n_traj = in.tfr->at(code).trajectories.size();
  }

  CountryTrajectories out;
  out.country = code;
  out.scenario = s;
  out.first_year = in.first_year;
  out.last_year = in.last_year;
  out.n_draws = G;
  out.tfr_uncertainty = inject;
  const std::size_t T = out.n_years();
  out.theta.resize(G * T);
  out.inflation.resize(G * T);
  out.delta.assign(G, 0);

  for (std::size_t g = 0; g < G; ++g) {
    const double beta = m1.view(idx1[g]).beta(c1);
    const auto log_eta = log_eta_path(*src, idx_src[g], cs, in.first_year, in.last_year, eta_rng);
    const DrawView v = src->view(idx_src[g]);
    TransitionParams tp;
    int delta = 0;
    if (v.has_transition(cs)) {
      tp = v.transition(cs);
      delta = tp.delta;
      if (inject && tp.gamma0 > last_obs) tp.gamma0 += tfr_anchor_shift(*in.tfr, code, stats::uniform_index(tfr_rng, n_traj), median_x);
    }
    out.delta[g] = delta;
    for (std::size_t t = 0; t < T; ++t) {
      const int year = in.first_year + static_cast<int>(t);
      const double infl = delta ? omega_at(tp, year) : 0.0;
      out.inflation[g * T + t] = infl;
      out.theta[g * T + t] = beta * std::exp(log_eta[t]) + infl;
    }
  }
  return out;
}

/// Scenario S for every country of the classification, in country-code order.
inline std::vector<CountryTrajectories> assemble_scenario(const ProjectionInputs& in, Scenario s) {
  std::vector<CountryTrajectories> out;
  for (const auto& [code, cls] : in.classes.of) out.push_back(assemble_country(in, code, s));
  return out;
}

/// Shifts every draw whose start year lies after the last observation by the anchor
/// difference of a randomly chosen TFR trajectory. Only timing changes.
inline std::vector<TransitionParams> inject_tfr_start_uncertainty(std::vector<TransitionParams> draws,
                                                                  const TfrTable& tfr, const TfrAnchors& anchors,
                                                                  int last_obs_year, Rng& rng) {
  if (!has_tfr_trajectories(&tfr, anchors.country)) {
    warn("no TFR trajectories for " + anchors.country + "; start-year uncertainty not added");
    return draws;
  }
  const std::size_t m = tfr.at(anchors.country).trajectories.size();
  for (auto& tp : draws)
    if (tp.gamma0 > last_obs_year) tp.gamma0 += tfr_anchor_shift(tfr, anchors.country, stats::uniform_index(rng, m), anchors.x);
  return draws;
}

// ---------------------------------------------------------------------------
// summaries

inline std::string scenario_header() {
  return "country_code,year,scenario,q50,q025,q975,q10,q90,infl_q50,infl_q025,infl_q975\n";
}

inline std::string scenario_rows(const CountryTrajectories& tr) {
  std::string s;
  for (int year = tr.first_year; year <= tr.last_year; ++year) {
    const auto th = stats::summarize(tr.theta_column(year));
    const auto inf = stats::summarize(tr.inflation_column(year));
    s += csv::quote(tr.country) + ',' + std::to_string(year) + ',' + std::string(to_string(tr.scenario));
    for (double v : {th.q50, th.q025, th.q975, th.q10, th.q90, inf.q50, inf.q025, inf.q975}) s += ',' + csv::format_double(v);
    s += '\n';
  }
  return s;
}

/// Most recent observation year per country.
inline std::map<std::string, int> last_observation_years(const ObservationSet& obs) {
  std::map<std::string, int> out;
  for (const auto& o : obs) {
    auto [it, inserted] = out.emplace(o.country, o.grid_year());
    if (!inserted) it->second = std::max(it->second, o.grid_year());
  }
  return out;
}

}  // namespace srb
