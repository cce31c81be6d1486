#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "srb/data.hpp"
#include "srb/io.hpp"
#include "srb/model.hpp"
#include "srb/stats.hpp"

namespace srb {

/// Observation schedule of one country: every `every` years from first to last.
struct ScheduleSpec {
  double first_year = 1985;
  double last_year = 2014;
  double every = 1;
  SourceType source = SourceType::CrvsSrs;
  double sampling_sd = 0.01;
};

struct CountrySpec {
  std::string code;
  std::string region;
  bool at_risk = false;
  std::vector<ScheduleSpec> schedules;
  std::optional<double> beta;                    // otherwise drawn around the regional level
  std::optional<TransitionParams> transition;    // at-risk only; otherwise drawn from the hyperparameters
  double tfr_f6 = 1965;                          // years the median TFR reaches 6 and 2.9
  double tfr_f29 = 1990;
  double births = 1000;
};

struct WorldSpec {
  std::uint64_t seed = 1;
  std::vector<std::string> regions;
  std::vector<double> beta_region;
  double sigma_beta = 0.02;
  double rho = 0.6;
  double sigma_eps = 0.01;
  std::array<double, kSourceTypeCount> omega{};
  TransitionHyper hyper;  // used for at-risk countries without an explicit transition
  std::vector<CountrySpec> countries;
  int tfr_trajectories = 0;
  double tfr_trajectory_sd = 0.0;  // sd (years) of each trajectory's time shift
  std::string births_unit = "thousands";

  /// `n_regions` x `per_region` countries named R<r>C<k>, all with the same schedule.
  static WorldSpec grid(int n_regions, int per_region, const ScheduleSpec& schedule) {
    WorldSpec w;
    for (int r = 0; r < n_regions; ++r) {
      w.regions.push_back("R" + std::to_string(r + 1));
      w.beta_region.push_back(1.04 + 0.01 * (r % 3));
      for (int k = 0; k < per_region; ++k) {
        CountrySpec c;
        c.code = "R" + std::to_string(r + 1) + "C" + std::to_string(k + 1);
        c.region = w.regions.back();
        c.schedules.push_back(schedule);
        w.countries.push_back(c);
      }
    }
    return w;
  }
};

inline void validate_world(const WorldSpec& w) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::SpecOutOfSupport, what);
  };
  need(!w.regions.empty() && w.regions.size() == w.beta_region.size(), "one regional baseline per region");
  for (double b : w.beta_region) need(b > kBetaRegionLower && b < kBetaRegionUpper, "regional baseline outside (1, 1.1)");
  need(w.sigma_beta >= 0 && w.sigma_beta <= kSigmaBetaUpper, "sigma_beta outside [0, 0.05]");
  need(w.rho >= 0 && w.rho < 1, "rho outside [0, 1)");
  need(w.sigma_eps >= 0 && w.sigma_eps <= kSigmaEpsUpper, "sigma_eps outside [0, 0.05]");
  need(w.omega[0] == 0.0, "CRVS/SRS non-sampling error must be zero");
  for (double o : w.omega) need(o >= 0 && o <= kOmegaUpper, "omega outside [0, 0.5]");
  need(w.hyper.mu_xi > 0 && w.hyper.mu_xi < kMuXiUpper && w.hyper.sigma_xi > 0 && w.hyper.sigma_xi < kSigmaXiUpper,
       "xi hyperparameters outside support");
  for (int k = 0; k < 3; ++k)
    need(w.hyper.mu_lambda[k] > 0 && w.hyper.mu_lambda[k] < kMuLambdaUpper &&
             w.hyper.sigma_lambda[k] > kSigmaLambdaLower && w.hyper.sigma_lambda[k] < kSigmaLambdaUpper,
         "lambda hyperparameters outside support");
  need(w.hyper.sigma_gamma > 0 && w.hyper.sigma_gamma < kSigmaGammaUpper, "sigma_gamma outside (0, 10)");
  need(w.hyper.sigma_pi > 0 && w.hyper.sigma_pi < kSigmaPiUpper, "sigma_pi outside (0, 2)");
  need(w.tfr_trajectories >= 0 && w.tfr_trajectory_sd >= 0, "negative TFR trajectory settings");
  std::set<std::string> codes;
  for (const auto& c : w.countries) {
    need(codes.insert(c.code).second, "duplicate country " + c.code);
    need(std::find(w.regions.begin(), w.regions.end(), c.region) != w.regions.end(), "unknown region " + c.region);
    if (c.beta) need(*c.beta > 0, "baseline must be positive");
    if (c.transition) {
      const auto& t = *c.transition;
      need(c.at_risk, c.code + ": transitions need an at-risk country");
      need(t.xi >= 0 && t.lambda1 >= 0 && t.lambda2 >= 0 && t.lambda3 >= 0, c.code + ": negative transition parameter");
      need(t.delta == 0 || t.delta == 1, c.code + ": delta must be 0 or 1");
    }
    need(c.tfr_f29 > c.tfr_f6, c.code + ": TFR must reach 6 before 2.9");
    need(c.births >= 0, c.code + ": births must be nonnegative");
    for (const auto& s : c.schedules) {
      need(s.every > 0 && s.first_year <= s.last_year, c.code + ": empty schedule");
      need(s.first_year >= 1900 && s.last_year <= kGridEnd, c.code + ": schedule outside [1900, 2100]");
      need(s.sampling_sd >= 0, c.code + ": negative sampling sd");
    }
  }
}

/// Every latent value of a generated world, keyed like fitted parameters.
struct WorldTruth {
  std::vector<std::string> names;
  std::vector<double> values;
  std::map<std::string, TransitionParams> transitions;  // at-risk countries
  std::map<std::string, double> beta;
  std::map<std::string, AnnualSeries> theta;

  void add(std::string name, double v) {
    names.push_back(std::move(name));
    values.push_back(v);
  }
};

struct World {
  ObservationSet observations;
  CountryRegistry registry;
  TfrTable tfr;
  BirthsTable births;
  WorldTruth truth;
};

/// Linear TFR through (f6, 6) and (f29, 2.9), clamped to [1.3, 7.5].
inline double synthetic_tfr(double f6, double f29, double year) {
  const double slope = (2.9 - 6.0) / (f29 - f6);
  return std::clamp(6.0 + slope * (year - f6), 1.3, 7.5);
}

inline World generate(const WorldSpec& w) {
  validate_world(w);
  Rng rng(w.seed);
  World out;
  std::vector<Country> reg;
  std::vector<Observation> obs;
  auto& truth = out.truth;
  for (std::size_t r = 0; r < w.regions.size(); ++r) truth.add("beta_region[" + w.regions[r] + "]", w.beta_region[r]);
  truth.add("sigma_beta", w.sigma_beta);
  truth.add("rho", w.rho);
  truth.add("sigma_eps", w.sigma_eps);
  for (auto s : kAllSourceTypes)
    if (s != SourceType::CrvsSrs) truth.add("omega[" + std::string(to_string(s)) + "]", w.omega[static_cast<std::size_t>(s)]);

  out.births.unit = w.births_unit;
  for (const auto& c : w.countries) {
    reg.push_back({c.code, c.code, c.region, c.at_risk});
    const std::size_t r = static_cast<std::size_t>(std::find(w.regions.begin(), w.regions.end(), c.region) - w.regions.begin());
    const double beta = c.beta ? *c.beta : std::exp(std::log(w.beta_region[r]) + w.sigma_beta * stats::std_normal(rng));
    truth.beta[c.code] = beta;
    truth.add("beta[" + c.code + "]", beta);

    int start = kGridStart;
    for (const auto& s : c.schedules) start = std::min(start, grid_year(s.first_year));
    const double s0 = w.sigma_eps / std::sqrt(1.0 - w.rho * w.rho);
    std::vector<double> log_eta;
    double u = s0 * stats::std_normal(rng);
    log_eta.push_back(u);
    for (int t = start + 1; t <= kGridEnd; ++t) {
      u = w.rho * u + w.sigma_eps * stats::std_normal(rng);
      log_eta.push_back(u);
    }
    for (int t = start; t <= kGridEnd; ++t)
      truth.add("eta[" + c.code + "][" + std::to_string(t) + "]", std::exp(log_eta[static_cast<std::size_t>(t - start)]));

    // TFR and its anchors
    CountryTfr ct;
    ct.median.first_year = kGridStart;
    for (int t = kGridStart; t <= kGridEnd; ++t) ct.median.values.push_back(synthetic_tfr(c.tfr_f6, c.tfr_f29, t));
    for (int m = 0; m < w.tfr_trajectories; ++m) {
      const double shift = w.tfr_trajectory_sd * stats::std_normal(rng);
      AnnualSeries s{kGridStart, {}};
      for (int t = kGridStart; t <= kGridEnd; ++t) s.values.push_back(synthetic_tfr(c.tfr_f6 + shift, c.tfr_f29 + shift, t));
      ct.trajectories.push_back(std::move(s));
    }
    const auto anchors = anchors_from_series(c.code, ct.median);
    out.tfr.countries[c.code] = std::move(ct);

    TransitionParams tp;
    if (c.at_risk) {
      if (c.transition) {
        tp = *c.transition;
      } else {
        const auto& h = w.hyper;
        const double pi = stats::inv_logit(h.mu_pi + h.sigma_pi * stats::std_normal(rng));
        tp.delta = stats::uniform01(rng) < pi ? 1 : 0;
        tp.xi = stats::sample_truncnorm_lower(rng, h.mu_xi, h.sigma_xi, 0.0);
        tp.lambda1 = stats::sample_truncnorm_lower(rng, h.mu_lambda[0], h.sigma_lambda[0], 0.0);
        tp.lambda2 = stats::sample_truncnorm_lower(rng, h.mu_lambda[1], h.sigma_lambda[1], 0.0);
        tp.lambda3 = stats::sample_truncnorm_lower(rng, h.mu_lambda[2], h.sigma_lambda[2], 0.0);
        tp.gamma0 = stats::sample_trunct_lower(rng, anchors.x, h.sigma_gamma, anchors.z, kStartYearDf);
      }
      truth.transitions[c.code] = tp;
      truth.add("gamma0[" + c.code + "]", tp.gamma0);
      truth.add("lambda1[" + c.code + "]", tp.lambda1);
      truth.add("lambda2[" + c.code + "]", tp.lambda2);
      truth.add("lambda3[" + c.code + "]", tp.lambda3);
      truth.add("xi[" + c.code + "]", tp.xi);
      truth.add("delta[" + c.code + "]", tp.delta);
    }

    AnnualSeries theta{start, {}};
    for (int t = start; t <= kGridEnd; ++t) {
      double th = beta * std::exp(log_eta[static_cast<std::size_t>(t - start)]);
      if (c.at_risk && tp.delta) th += omega_at(tp, t);
      theta.values.push_back(th);
      truth.add("theta[" + c.code + "][" + std::to_string(t) + "]", th);
    }

    for (const auto& s : c.schedules) {
      const double w_s = w.omega[static_cast<std::size_t>(s.source)];
      const double sd = std::sqrt(w_s * w_s + s.sampling_sd * s.sampling_sd);
      for (double year = s.first_year; year <= s.last_year + 1e-9; year += s.every) {
        const double th = theta.at(grid_year(year));
        obs.push_back({c.code, year, th * std::exp(sd * stats::std_normal(rng)), s.source, s.sampling_sd});
      }
    }
    out.truth.theta[c.code] = std::move(theta);

    AnnualSeries b{kGridStart, std::vector<double>(static_cast<std::size_t>(kGridEnd - kGridStart + 1), c.births)};
    out.births.countries[c.code] = std::move(b);
  }
  out.registry = CountryRegistry(std::move(reg));
  out.observations = ObservationSet(std::move(obs));
  return out;
}

// ---------------------------------------------------------------------------
// JSON form of a world spec

inline ScheduleSpec schedule_from_json(const Json& j, ScheduleSpec s = {}) {
  s.first_year = j.value("first_year", s.first_year);
  s.last_year = j.value("last_year", s.last_year);
  s.every = j.value("every", s.every);
  if (j.contains("source_type")) {
    auto src = parse_source_type(j["source_type"].get<std::string>());
    if (!src) throw Error(ErrorCode::UnknownSourceType, j["source_type"].get<std::string>());
    s.source = *src;
  }
  s.sampling_sd = j.value("sampling_sd", s.sampling_sd);
  return s;
}

inline TransitionParams transition_from_json(const Json& j) {
  TransitionParams t;
  t.gamma0 = j.at("gamma0").get<double>();
  t.lambda1 = j.at("lambda1").get<double>();
  t.lambda2 = j.at("lambda2").get<double>();
  t.lambda3 = j.at("lambda3").get<double>();
  t.xi = j.at("xi").get<double>();
  t.delta = j.value("delta", 1);
  return t;
}

/// Accepts either an explicit "countries" list or a "regions" x "countries_per_region" grid
/// whose first "at_risk_per_region" countries in each region are at risk.
inline WorldSpec world_from_json(const Json& j) {
  ScheduleSpec sched;
  if (j.contains("schedule")) sched = schedule_from_json(j["schedule"]);
  WorldSpec w;
  if (j.contains("countries")) {
    w.regions = j.at("region_codes").get<std::vector<std::string>>();
    for (const auto& cj : j["countries"]) {
      CountrySpec c;
      c.code = cj.at("code").get<std::string>();
      c.region = cj.at("region").get<std::string>();
      c.at_risk = cj.value("at_risk", false);
      if (cj.contains("schedules"))
        for (const auto& sj : cj["schedules"]) c.schedules.push_back(schedule_from_json(sj, sched));
      else
        c.schedules.push_back(sched);
      if (cj.contains("beta")) c.beta = cj["beta"].get<double>();
      if (cj.contains("transition")) c.transition = transition_from_json(cj["transition"]);
      c.tfr_f6 = cj.value("tfr_f6", c.tfr_f6);
      c.tfr_f29 = cj.value("tfr_f29", c.tfr_f29);
      c.births = cj.value("births", c.births);
      w.countries.push_back(c);
    }
    w.beta_region.assign(w.regions.size(), 1.05);
  } else {
    w = WorldSpec::grid(j.value("regions", 3), j.value("countries_per_region", 6), sched);
    const int at_risk = j.value("at_risk_per_region", 0);
    const auto at_risk_sched = j.contains("at_risk_schedule") ? schedule_from_json(j["at_risk_schedule"], sched) : sched;
    std::map<std::string, int> seen;
    for (auto& c : w.countries) {
      if (seen[c.region]++ < at_risk) {
        c.at_risk = true;
        c.schedules = {at_risk_sched};
        if (j.contains("transition")) c.transition = transition_from_json(j["transition"]);
        c.tfr_f6 = j.value("at_risk_tfr_f6", c.tfr_f6);
        c.tfr_f29 = j.value("at_risk_tfr_f29", c.tfr_f29);
      }
    }
  }
  w.seed = j.value("seed", w.seed);
  if (j.contains("beta_region")) w.beta_region = j["beta_region"].get<std::vector<double>>();
  w.sigma_beta = j.value("sigma_beta", w.sigma_beta);
  w.rho = j.value("rho", w.rho);
  w.sigma_eps = j.value("sigma_eps", w.sigma_eps);
  if (j.contains("omega")) {
    for (const auto& [name, v] : j["omega"].items()) {
      auto s = parse_source_type(name);
      if (!s) throw Error(ErrorCode::UnknownSourceType, name);
      w.omega[static_cast<std::size_t>(*s)] = v.get<double>();
    }
  }
  if (j.contains("hyper")) w.hyper = hyper_from_json(j["hyper"]);
  w.tfr_trajectories = j.value("tfr_trajectories", w.tfr_trajectories);
  w.tfr_trajectory_sd = j.value("tfr_trajectory_sd", w.tfr_trajectory_sd);
  w.births_unit = j.value("births_unit", w.births_unit);
  return w;
}

/// Writes the four input files plus truth.csv (draw format, chain 0).
inline void write_world(const fs::path& dir, const World& world, const std::string& hash) {
  fs::create_directories(dir);
  const std::string pre = csv::preamble(hash);
  csv::write_file((dir / "observations.csv").string(), pre + serialize_observations(world.observations));
  csv::write_file((dir / "countries.csv").string(), pre + serialize_countries(world.registry));
  csv::write_file((dir / "tfr.csv").string(), pre + serialize_tfr(world.tfr));
  csv::write_file((dir / "births.csv").string(), pre + serialize_births(world.births));
  std::string t = pre + "chain,iter,param,value\n";
  for (std::size_t i = 0; i < world.truth.names.size(); ++i)
    t += "0,1," + csv::quote(world.truth.names[i]) + ',' + csv::format_double(world.truth.values[i]) + '\n';
  csv::write_file((dir / "truth.csv").string(), t);
}

}  // namespace srb
