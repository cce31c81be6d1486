#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srb/chains.hpp"
#include "srb/csv.hpp"
#include "srb/diagnostics.hpp"
#include "srb/sampler.hpp"
#include "srb/stacking.hpp"

namespace srb {

using Json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string config_hash(const Json& config) { return csv::fnv1a_hex(config.dump()); }

inline Json to_json(const McmcConfig& c) {
  return {{"n_chains", c.n_chains},       {"n_burnin", c.n_burnin}, {"thinning", c.thinning},
          {"n_posterior", c.n_posterior}, {"seed", c.seed},         {"adapt_window", c.adapt_window},
          {"target_acceptance", c.target_acceptance}};
}

inline McmcConfig mcmc_from_json(const Json& j, McmcConfig c = {}) {
  c.n_chains = j.value("n_chains", c.n_chains);
  c.n_burnin = j.value("n_burnin", c.n_burnin);
  c.thinning = j.value("thinning", c.thinning);
  c.n_posterior = j.value("n_posterior", c.n_posterior);
  c.seed = j.value("seed", c.seed);
  c.adapt_window = j.value("adapt_window", c.adapt_window);
  c.target_acceptance = j.value("target_acceptance", c.target_acceptance);
  c.threads = j.value("threads", c.threads);
  return c;
}

inline Json to_json(const TransitionHyper& h) {
  return {{"mu_xi", h.mu_xi},
          {"sigma_xi", h.sigma_xi},
          {"mu_lambda", h.mu_lambda},
          {"sigma_lambda", h.sigma_lambda},
          {"sigma_gamma", h.sigma_gamma},
          {"mu_pi", h.mu_pi},
          {"sigma_pi", h.sigma_pi}};
}

inline TransitionHyper hyper_from_json(const Json& j) {
  TransitionHyper h;
  h.mu_xi = j.at("mu_xi").get<double>();
  h.sigma_xi = j.at("sigma_xi").get<double>();
  h.mu_lambda = j.at("mu_lambda").get<std::array<double, 3>>();
  h.sigma_lambda = j.at("sigma_lambda").get<std::array<double, 3>>();
  h.sigma_gamma = j.at("sigma_gamma").get<double>();
  h.mu_pi = j.value("mu_pi", 0.0);
  h.sigma_pi = j.value("sigma_pi", 1.0);
  return h;
}

inline Json to_json(const FixedInputs& f) {
  Json j = Json::object();
  j["beta"] = f.beta;
  j["beta_region"] = f.beta_region;
  if (f.sigma_beta) j["sigma_beta"] = *f.sigma_beta;
  if (f.rho) j["rho"] = *f.rho;
  if (f.sigma_eps) j["sigma_eps"] = *f.sigma_eps;
  if (f.zeta) j["zeta"] = to_json(*f.zeta);
  return j;
}

inline FixedInputs fixed_from_json(const Json& j) {
  FixedInputs f;
  if (j.contains("beta")) f.beta = j["beta"].get<std::map<std::string, double>>();
  if (j.contains("beta_region")) f.beta_region = j["beta_region"].get<std::map<std::string, double>>();
  if (j.contains("sigma_beta")) f.sigma_beta = j["sigma_beta"].get<double>();
  if (j.contains("rho")) f.rho = j["rho"].get<double>();
  if (j.contains("sigma_eps")) f.sigma_eps = j["sigma_eps"].get<double>();
  if (j.contains("zeta")) f.zeta = hyper_from_json(j["zeta"]);
  return f;
}

inline Json to_json(const ModelStructure& ms) {
  Json countries = Json::array();
  for (const auto& c : ms.countries)
    countries.push_back({{"code", c.code},
                         {"region", ms.regions[c.region]},
                         {"has_transition", c.has_transition},
                         {"z", c.z},
                         {"x", c.x},
                         {"eta_start", c.eta_start},
                         {"eta_end", c.eta_end}});
  return {{"model", std::string(to_string(ms.spec.kind))},
          {"regions", ms.regions},
          {"countries", countries},
          {"fixed", to_json(ms.spec.fixed)}};
}

inline ModelStructure structure_from_json(const Json& j) {
  ModelStructure ms;
  auto kind = parse_model_kind(j.at("model").get<std::string>());
  if (!kind) throw Error(ErrorCode::Parse, "unknown model kind in fit metadata");
  ms.spec.kind = *kind;
  ms.spec.fixed = fixed_from_json(j.at("fixed"));
  ms.regions = j.at("regions").get<std::vector<std::string>>();
  for (const auto& c : j.at("countries")) {
    CountryMeta m;
    m.code = c.at("code").get<std::string>();
    const auto region = c.at("region").get<std::string>();
    auto it = std::find(ms.regions.begin(), ms.regions.end(), region);
    if (it == ms.regions.end()) throw Error(ErrorCode::Parse, "unknown region in fit metadata");
    m.region = static_cast<std::size_t>(it - ms.regions.begin());
    m.has_transition = c.at("has_transition").get<bool>();
    m.z = c.at("z").get<int>();
    m.x = c.at("x").get<int>();
    m.eta_start = c.at("eta_start").get<int>();
    m.eta_end = c.at("eta_end").get<int>();
    ms.countries.push_back(m);
  }
  return ms;
}

// ---------------------------------------------------------------------------
// draws in long format: chain,iter,param,value

inline void write_draws_csv(std::ostream& out, const std::vector<std::string>& names,
                            const std::vector<const DrawMatrix*>& chains, const std::vector<int>& chain_ids) {
  out << "chain,iter,param,value\n";
  std::vector<std::string> quoted;
  for (const auto& n : names) quoted.push_back(csv::quote(n));
  for (std::size_t k = 0; k < chains.size(); ++k) {
    const auto& m = *chains[k];
    const std::string prefix = std::to_string(chain_ids[k]) + ',';
    for (std::size_t g = 0; g < m.size(); ++g) {
      const auto row = m.row(g);
      const std::string it = prefix + std::to_string(g + 1) + ',';
      for (std::size_t p = 0; p < names.size(); ++p) out << it << quoted[p] << ',' << csv::format_double(row[p]) << '\n';
    }
  }
}

/// Reads a long-format draw file; parameters come back in first-seen order.
inline PosteriorChains read_draws_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  PosteriorChains pc;
  std::map<int, std::size_t> chain_slot;
  std::unordered_map<std::string, std::size_t> param_slot;
  struct Cell {
    std::size_t chain, iter, param;
    double value;
  };
  std::vector<Cell> cells;
  std::vector<std::size_t> max_iter;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line != "chain,iter,param,value") throw Error(ErrorCode::MissingColumn, path + ": unexpected draw header");
      header = true;
      continue;
    }
    const auto f = csv::split_line(line);
    if (f.size() != 4) throw Error(ErrorCode::Parse, path + ": line " + std::to_string(lineno));
    auto chain = csv::parse_int(f[0]);
    auto iter = csv::parse_int(f[1]);
    auto value = csv::parse_double(f[3]);
    if (!chain || !iter || !value || *iter < 1) throw Error(ErrorCode::Parse, path + ": line " + std::to_string(lineno));
    auto [cit, cnew] = chain_slot.emplace(static_cast<int>(*chain), chain_slot.size());
    if (cnew) max_iter.push_back(0);
    auto [pit, pnew] = param_slot.emplace(f[2], pc.names.size());
    if (pnew) pc.names.push_back(f[2]);
    max_iter[cit->second] = std::max(max_iter[cit->second], static_cast<std::size_t>(*iter));
    cells.push_back({cit->second, static_cast<std::size_t>(*iter - 1), pit->second, *value});
  }
  const std::size_t np = pc.names.size();
  for (std::size_t k = 0; k < max_iter.size(); ++k) {
    DrawMatrix m(np);
    m.data().assign(max_iter[k] * np, std::numeric_limits<double>::quiet_NaN());
    pc.chains.push_back(std::move(m));
  }
  for (const auto& c : cells) pc.chains[c.chain].data()[c.iter * np + c.param] = c.value;
  for (const auto& m : pc.chains)
    for (double v : m.data())
      if (std::isnan(v)) throw Error(ErrorCode::Parse, path + ": incomplete draw table");
  return pc;
}

inline std::string estimates_csv(const std::vector<std::string>& names, const DrawMatrix& draws) {
  std::string s = "param,mean,q025,q10,q50,q90,q975\n";
  for (std::size_t p = 0; p < names.size(); ++p) {
    const auto sm = stats::summarize(draws.column(p));
    s += csv::quote(names[p]);
    for (double v : {sm.mean, sm.q025, sm.q10, sm.q50, sm.q90, sm.q975}) s += ',' + csv::format_double(v);
    s += '\n';
  }
  return s;
}

// ---------------------------------------------------------------------------
// fit directories

/// A fit as used downstream: its structure and the draw set (stacked if stacking applied).
struct FittedModel {
  ModelStructure structure;
  ParamLayout layout;
  PosteriorChains chains;
  DrawMatrix draws;
  bool stacked = false;
  Json meta;

  std::optional<std::size_t> country_index(std::string_view code) const {
    for (std::size_t c = 0; c < structure.countries.size(); ++c)
      if (structure.countries[c].code == code) return c;
    return std::nullopt;
  }
  DrawView view(std::size_t g) const { return DrawView(structure, layout, draws.row(g)); }
  double variance_floor() const {
    return meta.is_object() ? meta.value("variance_floor", kDefaultVarianceFloor) : kDefaultVarianceFloor;
  }
};

struct FitSummary {
  std::map<std::string, double> psrf;
  std::optional<StackReport> stack;
  double median_spread = 0.0;
};

/// Convergence table and optional stacking for a finished fit.
inline FitSummary summarize_fit(const FitResult& fit, const ObservationSet& data, StackMode mode, std::uint64_t seed,
                                double variance_floor = kDefaultVarianceFloor) {
  FitSummary s;
  s.psrf = psrf_table(fit.chains);
  s.median_spread = max_chain_median_spread(fit.chains);
  if (should_stack(fit.chains, mode)) {
    Rng rng(seed ^ 0x5eed5eedULL);
    s.stack = stack_chains(fit.structure, fit.layout, fit.chains, data, rng, variance_floor);
  }
  return s;
}

inline FittedModel to_fitted(const FitResult& fit, const FitSummary& summary,
                             double variance_floor = kDefaultVarianceFloor) {
  FittedModel m;
  m.meta["variance_floor"] = variance_floor;
  m.structure = fit.structure;
  m.layout = fit.layout;
  m.chains = fit.chains;
  if (summary.stack) {
    m.draws = summary.stack->posterior.draws;
    m.stacked = true;
  } else {
    m.draws = fit.chains.pooled();
  }
  return m;
}

inline void write_fit(const fs::path& dir, const FitResult& fit, const FitSummary& summary, const std::string& hash,
                      double variance_floor = kDefaultVarianceFloor) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "chains.csv", std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "chains.csv").string());
    out << csv::preamble(hash);
    std::vector<const DrawMatrix*> ptrs;
    std::vector<int> ids;
    for (std::size_t k = 0; k < fit.chains.chains.size(); ++k) {
      ptrs.push_back(&fit.chains.chains[k]);
      ids.push_back(static_cast<int>(k + 1));
    }
    write_draws_csv(out, fit.chains.names, ptrs, ids);
  }
  const DrawMatrix* used = nullptr;
  DrawMatrix pooled;
  if (summary.stack) {
    std::ofstream out(dir / "stacked.csv", std::ios::binary);
    out << csv::preamble(hash);
    write_draws_csv(out, fit.chains.names, {&summary.stack->posterior.draws}, {0});
    used = &summary.stack->posterior.draws;
  } else {
    fs::remove(dir / "stacked.csv");
    pooled = fit.chains.pooled();
    used = &pooled;
  }
  csv::write_file((dir / "estimates.csv").string(), csv::preamble(hash) + estimates_csv(fit.chains.names, *used));

  Json meta;
  meta["config_hash"] = hash;
  meta["version"] = csv::version_string();
  meta["structure"] = to_json(fit.structure);
  meta["mcmc"] = to_json(fit.config);
  meta["variance_floor"] = variance_floor;
  Json acc = Json::array();
  for (const auto& a : fit.acceptance) acc.push_back(a.rates());
  meta["acceptance"] = acc;
  Json psrf = Json::object();
  double worst = 0.0;
  for (const auto& [name, v] : summary.psrf) {
    psrf[name] = v;
    worst = std::max(worst, v);
  }
  meta["psrf"] = psrf;
  meta["psrf_max"] = worst;
  std::string psrf_csv = csv::preamble(hash) + "param,psrf\n";
  for (const auto& [name, v] : summary.psrf) psrf_csv += csv::quote(name) + ',' + csv::format_double(v) + '\n';
  csv::write_file((dir / "psrf.csv").string(), psrf_csv);
  meta["gamma0_chain_median_spread"] = summary.median_spread;
  if (summary.stack) {
    meta["stacking"] = {{"applied", true},
                        {"weights", summary.stack->weights.weights},
                        {"iterations", summary.stack->weights.iterations},
                        {"objective", summary.stack->weights.objective.back()},
                        {"loo_unstable_per_chain", summary.stack->unstable_per_chain}};
  } else {
    meta["stacking"] = {{"applied", false}};
  }
  csv::write_file((dir / "meta.json").string(), meta.dump(2) + "\n");
}

inline bool fit_exists(const fs::path& dir) { return fs::exists(dir / "meta.json") && fs::exists(dir / "chains.csv"); }

inline FittedModel read_fit(const fs::path& dir) {
  if (!fit_exists(dir)) throw Error(ErrorCode::MissingFit, "no fit in " + dir.string());
  FittedModel m;
  m.meta = Json::parse(csv::read_text((dir / "meta.json").string()));
  m.structure = structure_from_json(m.meta.at("structure"));
  m.layout = ParamLayout::build(m.structure);
  m.chains = read_draws_csv((dir / "chains.csv").string());
  if (m.chains.names != m.layout.names) throw Error(ErrorCode::Parse, "chain parameters do not match fit metadata");
  if (fs::exists(dir / "stacked.csv")) {
    auto st = read_draws_csv((dir / "stacked.csv").string());
    if (st.names != m.layout.names || st.chains.size() != 1)
      throw Error(ErrorCode::Parse, "stacked draws do not match fit metadata");
    m.draws = std::move(st.chains.front());
    m.stacked = true;
  } else {
    m.draws = m.chains.pooled();
  }
  return m;
}

/// Posterior medians of a parameter set, read from a fitted model.
inline double draw_median(const FittedModel& m, std::string_view param) {
  return stats::median(m.draws.column(m.chains.index(param)));
}

/// Point estimates an M1 fit hands to later fits.
inline FixedInputs fixed_from_m1(const FittedModel& m1) {
  if (m1.structure.spec.kind != ModelKind::M1) throw Error(ErrorCode::InvalidArgument, "expected an M1 fit");
  FixedInputs f;
  for (const auto& c : m1.structure.countries) f.beta[c.code] = draw_median(m1, "beta[" + c.code + "]");
  for (const auto& r : m1.structure.regions) f.beta_region[r] = draw_median(m1, "beta_region[" + r + "]");
  f.sigma_beta = draw_median(m1, "sigma_beta");
  f.rho = draw_median(m1, "rho");
  f.sigma_eps = draw_median(m1, "sigma_eps");
  return f;
}

/// Transition hyperparameter medians from an M2 (or M2Joint) fit.
inline TransitionHyper zeta_from_m2(const FittedModel& m2) {
  if (m2.layout.hyper.mu_xi < 0) throw Error(ErrorCode::MissingHyperDraws, "fit has no transition hyperparameters");
  TransitionHyper h;
  h.mu_xi = draw_median(m2, "mu_xi");
  h.sigma_xi = draw_median(m2, "sigma_xi");
  for (int k = 0; k < 3; ++k) {
    h.mu_lambda[k] = draw_median(m2, "mu_lambda" + std::to_string(k + 1));
    h.sigma_lambda[k] = draw_median(m2, "sigma_lambda" + std::to_string(k + 1));
  }
  h.sigma_gamma = draw_median(m2, "sigma_gamma");
  h.mu_pi = draw_median(m2, "mu_pi");
  h.sigma_pi = draw_median(m2, "sigma_pi");
  return h;
}

}  // namespace srb
