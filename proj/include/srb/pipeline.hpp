#pragma once

#include <algorithm>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "srb/births.hpp"
#include "srb/data.hpp"
#include "srb/diagnostics.hpp"
#include "srb/io.hpp"
#include "srb/projection.hpp"
#include "srb/sampler.hpp"
#include "srb/synth.hpp"
#include "srb/validation.hpp"

namespace srb {

struct InputPaths {
  std::string observations, countries, tfr, births;
};

struct ValidationConfig {
  std::string model = "m1";   // m1 | m2
  std::string mode = "recent";  // recent | random | predict1970
  std::optional<double> cutoff;
  double fraction = 0.2;
  int reps = 30;
  std::size_t permutations = kDefaultPermutations;
};

/// Effective configuration of one command invocation.
struct RunConfig {
  InputPaths inputs;
  fs::path out = "run";
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<ModelKind> models{ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4};
  McmcConfig mcmc;
  StackMode stack = StackMode::Auto;
  double variance_floor = kDefaultVarianceFloor;
  std::vector<Scenario> scenarios{Scenario::S1, Scenario::S2, Scenario::S3};
  std::size_t n_draws = kDefaultProjectionDraws;
  bool tfr_uncertainty = true;
  int t1 = kDefaultCmfbStart;
  int t2 = kGridEnd;
  ValidationConfig validation;

  /// Canonical JSON of every setting that can change results.
  Json to_json() const {
    Json models_j = Json::array();
    for (auto m : models) models_j.push_back(std::string(srb::to_string(m)));
    Json scen = Json::array();
    for (auto s : scenarios) scen.push_back(std::string(srb::to_string(s)));
    Json v = {{"model", validation.model},
              {"mode", validation.mode},
              {"fraction", validation.fraction},
              {"reps", validation.reps},
              {"permutations", validation.permutations}};
    if (validation.cutoff) v["cutoff"] = *validation.cutoff;
    std::string stack_s = stack == StackMode::Auto ? "auto" : stack == StackMode::Force ? "force" : "off";
    return {{"inputs",
             {{"observations", inputs.observations},
              {"countries", inputs.countries},
              {"tfr", inputs.tfr},
              {"births", inputs.births}}},
            {"seed", seed},
            {"models", models_j},
            {"mcmc", srb::to_json(mcmc)},
            {"stack", stack_s},
            {"variance_floor", variance_floor},
            {"projection", {{"scenarios", scen}, {"n_draws", n_draws}, {"tfr_uncertainty", tfr_uncertainty}}},
            {"births", {{"t1", t1}, {"t2", t2}}},
            {"validation", v}};
  }

  std::string hash() const { return config_hash(to_json()); }
};

inline std::vector<ModelKind> parse_models(const std::vector<std::string>& names) {
  std::vector<ModelKind> out;
  for (const auto& n : names) {
    auto k = parse_model_kind(n);
    if (!k) throw Error(ErrorCode::InvalidArgument, "unknown model " + n);
    if (std::find(out.begin(), out.end(), *k) == out.end()) out.push_back(*k);
  }
  // dependency order regardless of how they were listed
  auto rank = [](ModelKind k) {
    switch (k) {
      case ModelKind::M1: return 0;
      case ModelKind::M2: return 1;
      case ModelKind::M2Joint: return 2;
      case ModelKind::M3: return 3;
      case ModelKind::M4: return 4;
    }
    return 5;
  };
  std::sort(out.begin(), out.end(), [&](ModelKind a, ModelKind b) { return rank(a) < rank(b); });
  return out;
}

/// Reads a JSON config; relative input paths resolve against the config's directory.
inline RunConfig config_from_json(const Json& j, const fs::path& base = {}) {
  RunConfig c;
  auto path = [&](const std::string& p) {
    if (p.empty()) return p;
    fs::path fp(p);
    return (fp.is_relative() && !base.empty() ? base / fp : fp).lexically_normal().string();
  };
  if (j.contains("inputs")) {
    const auto& in = j["inputs"];
    c.inputs.observations = path(in.value("observations", ""));
    c.inputs.countries = path(in.value("countries", ""));
    c.inputs.tfr = path(in.value("tfr", ""));
    c.inputs.births = path(in.value("births", ""));
  }
  if (j.contains("out")) c.out = path(j["out"].get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.threads = j.value("threads", c.threads);
  if (j.contains("models")) c.models = parse_models(j["models"].get<std::vector<std::string>>());
  if (j.contains("mcmc")) c.mcmc = mcmc_from_json(j["mcmc"], c.mcmc);
  if (j.contains("stack")) c.stack = parse_stack_mode(j["stack"].get<std::string>());
  c.variance_floor = j.value("variance_floor", c.variance_floor);
  if (j.contains("projection")) {
    const auto& p = j["projection"];
    if (p.contains("scenarios")) {
      c.scenarios.clear();
      for (const auto& s : p["scenarios"]) c.scenarios.push_back(parse_scenario(s.get<std::string>()));
    }
    c.n_draws = p.value("n_draws", c.n_draws);
    c.tfr_uncertainty = p.value("tfr_uncertainty", c.tfr_uncertainty);
  }
  if (j.contains("births")) {
    c.t1 = j["births"].value("t1", c.t1);
    c.t2 = j["births"].value("t2", c.t2);
  }
  if (j.contains("validation")) {
    const auto& v = j["validation"];
    c.validation.model = v.value("model", c.validation.model);
    c.validation.mode = v.value("mode", c.validation.mode);
    if (v.contains("cutoff")) c.validation.cutoff = v["cutoff"].get<double>();
    c.validation.fraction = v.value("fraction", c.validation.fraction);
    c.validation.reps = v.value("reps", c.validation.reps);
    c.validation.permutations = v.value("permutations", c.validation.permutations);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  const Json j = Json::parse(csv::read_text(path));
  return config_from_json(j, fs::path(path).parent_path());
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h >> 1;
}

// ---------------------------------------------------------------------------
// inputs

struct InputData {
  CountryRegistry registry;
  ObservationSet observations;
  std::optional<TfrTable> tfr;
  std::optional<BirthsTable> births;

  std::map<std::string, TfrAnchors> at_risk_anchors() const {
    std::map<std::string, TfrAnchors> out;
    const auto codes = registry.at_risk_codes();
    if (codes.empty()) return out;
    if (!tfr) throw Error(ErrorCode::MissingTfr, "TFR input required for at-risk countries");
    for (const auto& c : codes) out[c] = compute_tfr_anchors(*tfr, c);
    return out;
  }
};

inline InputData load_inputs(const InputPaths& p, bool need_tfr, bool need_births) {
  if (p.countries.empty() || p.observations.empty())
    throw Error(ErrorCode::InvalidArgument, "observations and countries inputs are required");
  InputData d;
  d.registry = load_countries(p.countries);
  d.observations = load_observations(p.observations, &d.registry);
  if (!p.tfr.empty()) d.tfr = load_tfr(p.tfr);
  else if (need_tfr) throw Error(ErrorCode::MissingTfr, "no TFR input configured");
  if (!p.births.empty()) d.births = load_births(p.births);
  else if (need_births) throw Error(ErrorCode::MissingBirths, "no births input configured");
  return d;
}

// ---------------------------------------------------------------------------
// run directory layout

struct RunLayout {
  fs::path root;
  fs::path fits() const { return root / "fits"; }
  fs::path m1() const { return fits() / "m1"; }
  fs::path m2() const { return fits() / "m2"; }
  fs::path m2joint() const { return fits() / "m2joint"; }
  fs::path m3(const std::string& c) const { return fits() / "m3" / c; }
  fs::path m4(const std::string& c) const { return fits() / "m4" / c; }
  fs::path classification() const { return fits() / "classification.csv"; }
  fs::path projection() const { return root / "projection"; }
  fs::path births() const { return root / "births"; }
  fs::path validation() const { return root / "validation"; }
  fs::path diagnostics() const { return root / "diagnostics"; }
};

inline FittedModel require_fit(const fs::path& dir, const std::string& what) {
  if (!fit_exists(dir)) throw Error(ErrorCode::MissingPrerequisite, what + " not found in " + dir.string());
  return read_fit(dir);
}

// ---------------------------------------------------------------------------
// fitting

struct FitRequest {
  ModelSpec spec;
  const ObservationSet* data = nullptr;
  std::vector<std::string> countries;
  std::string tag;
};

/// Fits one model, writes it to `dir` when given, and returns it ready for downstream use.
inline FittedModel run_fit(const FitRequest& req, const InputData& in, const std::map<std::string, TfrAnchors>& anchors,
                           const RunConfig& cfg, const fs::path* dir, int threads) {
  ProblemOptions opts;
  opts.variance_floor = cfg.variance_floor;
  const auto problem = make_problem(req.spec, *req.data, in.registry, req.countries, anchors, opts);
  McmcConfig mc = cfg.mcmc;
  mc.seed = derive_seed(cfg.seed, req.tag);
  mc.threads = threads;
  const auto result = fit(problem, mc);
  const auto summary = summarize_fit(result, *req.data, cfg.stack, mc.seed, cfg.variance_floor);
  if (dir) write_fit(*dir, result, summary, cfg.hash(), cfg.variance_floor);
  return to_fitted(result, summary, cfg.variance_floor);
}

inline FitRequest m1_request(const InputData& in, const ObservationSet& risk_free) {
  return {ModelSpec{ModelKind::M1, {}}, &risk_free, in.registry.codes(), "m1"};
}

inline ModelSpec m2_spec(const FixedInputs& m1_fixed, ModelKind kind = ModelKind::M2) {
  ModelSpec s{kind, {}};
  s.fixed = m1_fixed;
  return s;
}

/// Runs `fn(i)` for i in [0, n) with at most `threads` at once; results keep index order.
template <typename Fn>
auto parallel_map(std::size_t n, int threads, Fn fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<R> out;
  out.reserve(n);
  const std::size_t width = static_cast<std::size_t>(std::max(1, threads));
  for (std::size_t start = 0; start < n; start += width) {
    const std::size_t stop = std::min(n, start + width);
    if (width == 1) {
      out.push_back(fn(start));
      continue;
    }
    std::vector<std::future<R>> pending;
    for (std::size_t i = start; i < stop; ++i) pending.push_back(std::async(std::launch::async, fn, i));
    for (auto& f : pending) out.push_back(f.get());
  }
  return out;
}

inline std::string classification_csv(const CountryRegistry& reg, const Classification& cls, const std::string& hash) {
  std::string s = csv::preamble(hash) + "country_code,at_risk,psi,class\n";
  for (const auto& c : reg.countries()) {
    auto it = cls.psi.find(c.code);
    s += csv::quote(c.code) + ',' + (c.at_risk ? "1" : "0") + ',' +
         (it == cls.psi.end() ? std::string() : csv::format_double(it->second)) + ',' +
         std::string(to_string(cls.of.at(c.code))) + '\n';
  }
  return s;
}

inline void log_line(const std::string& s) { std::cerr << s << '\n'; }

/// Staged pipeline M1 -> M2 -> per-country M3/M4. Stages not requested are read back from
/// the run directory when a later stage needs them.
inline void cmd_fit(const RunConfig& cfg) {
  const RunLayout run{cfg.out};
  const auto& models = cfg.models;
  auto wants = [&](ModelKind k) { return std::find(models.begin(), models.end(), k) != models.end(); };
  const bool need_tfr = wants(ModelKind::M2) || wants(ModelKind::M3) || wants(ModelKind::M4) || wants(ModelKind::M2Joint);
  const InputData in = load_inputs(cfg.inputs, need_tfr, false);
  const auto anchors = in.at_risk_anchors();
  const ObservationSet risk_free = build_risk_free_db(in.observations, in.registry);
  const ObservationSet at_risk = build_at_risk_db(in.observations, in.registry);

  std::optional<FittedModel> m1;
  if (wants(ModelKind::M1)) {
    log_line("fitting M1 on " + std::to_string(risk_free.size()) + " observations");
    const fs::path dir = run.m1();
    m1 = run_fit(m1_request(in, risk_free), in, anchors, cfg, &dir, cfg.threads);
  }
  if (!need_tfr) return;
  if (!m1) m1 = require_fit(run.m1(), "M1 fit");
  const FixedInputs fixed = fixed_from_m1(*m1);
  const auto at_risk_codes = in.registry.at_risk_codes();
  if (at_risk_codes.empty()) {
    warn("no at-risk countries; nothing to fit after M1");
    return;
  }

  std::optional<FittedModel> m2;
  if (wants(ModelKind::M2)) {
    log_line("fitting M2 on " + std::to_string(at_risk.size()) + " observations");
    const fs::path dir = run.m2();
    m2 = run_fit({m2_spec(fixed), &at_risk, at_risk_codes, "m2"}, in, anchors, cfg, &dir, cfg.threads);
  }
  if (wants(ModelKind::M2Joint)) {
    log_line("fitting M2Joint");
    const fs::path dir = run.m2joint();
    run_fit({m2_spec(fixed, ModelKind::M2Joint), &at_risk, at_risk_codes, "m2joint"}, in, anchors, cfg, &dir,
            cfg.threads);
  }
  if (!wants(ModelKind::M3) && !wants(ModelKind::M4)) {
    if (m2) csv::write_file(run.classification().string(),
                            classification_csv(in.registry, classify(in.registry, compute_psi(*m2)), cfg.hash()));
    return;
  }
  if (!m2) m2 = require_fit(run.m2(), "M2 fit");
  const auto cls = classify(in.registry, compute_psi(*m2));
  csv::write_file(run.classification().string(), classification_csv(in.registry, cls, cfg.hash()));
  const auto future = cls.members(CountryClass::FutureInf);
  FixedInputs fixed4 = fixed;
  fixed4.zeta = zeta_from_m2(*m2);

  std::vector<ObservationSet> country_db;
  for (const auto& c : future) country_db.push_back(build_country_db(in.observations, in.registry, c));
  for (ModelKind kind : {ModelKind::M3, ModelKind::M4}) {
    if (!wants(kind)) continue;
    log_line("fitting " + std::string(to_string(kind)) + " for " + std::to_string(future.size()) + " countries");
    parallel_map(future.size(), cfg.threads, [&](std::size_t i) {
      const auto& code = future[i];
      ModelSpec spec{kind, kind == ModelKind::M3 ? fixed : fixed4};
      const std::string tag = std::string(kind == ModelKind::M3 ? "m3/" : "m4/") + code;
      const fs::path dir = kind == ModelKind::M3 ? run.m3(code) : run.m4(code);
      run_fit({spec, &country_db[i], {code}, tag}, in, anchors, cfg, &dir, 1);
      return 0;
    });
  }
}

// ---------------------------------------------------------------------------
// projection

struct LoadedFits {
  FittedModel m1;
  std::optional<FittedModel> m2;
  std::map<std::string, FittedModel> m3, m4;
};

/// Loads every fit the projection needs and wires the inputs together.
inline ProjectionInputs projection_inputs(const RunConfig& cfg, const InputData& in, LoadedFits& fits) {
  const RunLayout run{cfg.out};
  fits.m1 = require_fit(run.m1(), "M1 fit");
  ProjectionInputs pi;
  pi.registry = &in.registry;
  pi.m1 = &fits.m1;
  std::map<std::string, double> psi;
  if (!in.registry.at_risk_codes().empty()) {
    fits.m2 = require_fit(run.m2(), "M2 fit");
    pi.m2 = &*fits.m2;
    psi = compute_psi(*fits.m2);
  }
  pi.classes = classify(in.registry, psi);
  for (const auto& code : pi.classes.members(CountryClass::FutureInf)) {
    fits.m3.emplace(code, require_fit(run.m3(code), "M3 fit for " + code));
    fits.m4.emplace(code, require_fit(run.m4(code), "M4 fit for " + code));
  }
  for (auto& [code, f] : fits.m3) pi.m3[code] = &f;
  for (auto& [code, f] : fits.m4) pi.m4[code] = &f;
  if (in.tfr) pi.tfr = &*in.tfr;
  pi.anchors = in.at_risk_anchors();
  pi.last_obs_year = last_observation_years(build_at_risk_db(in.observations, in.registry));
  pi.n_draws = cfg.n_draws;
  pi.tfr_uncertainty = cfg.tfr_uncertainty;
  pi.seed = derive_seed(cfg.seed, "projection");
  return pi;
}

inline void cmd_project(const RunConfig& cfg) {
  const RunLayout run{cfg.out};
  if (!fit_exists(run.m1())) throw Error(ErrorCode::MissingPrerequisite, "run the fit command first");
  const InputData in = load_inputs(cfg.inputs, false, false);
  LoadedFits fits;
  const auto pi = projection_inputs(cfg, in, fits);
  fs::create_directories(run.projection());
  const std::string hash = cfg.hash();
  std::map<std::string, bool> tfr_flag;
  for (auto s : cfg.scenarios) {
    std::string body = csv::preamble(hash) + scenario_header();
    for (const auto& [code, cls] : pi.classes.of) {
      const auto tr = assemble_country(pi, code, s);
      if (cls == CountryClass::FutureInf && s != Scenario::S1) tfr_flag[code] = tr.tfr_uncertainty;
      body += scenario_rows(tr);
    }
    csv::write_file((run.projection() / ("scenario_" + std::string(to_string(s)) + ".csv")).string(), body);
  }
  Json meta;
  meta["config_hash"] = hash;
  meta["version"] = csv::version_string();
  meta["n_draws"] = cfg.n_draws;
  meta["years"] = {pi.first_year, pi.last_year};
  Json scen = Json::array();
  for (auto s : cfg.scenarios) scen.push_back(std::string(to_string(s)));
  meta["scenarios"] = scen;
  Json countries = Json::object();
  for (const auto& [code, cls] : pi.classes.of) {
    Json c = {{"class", std::string(to_string(cls))}};
    if (auto it = pi.classes.psi.find(code); it != pi.classes.psi.end()) c["psi"] = it->second;
    if (auto it = tfr_flag.find(code); it != tfr_flag.end()) {
      c["tfr_uncertainty"] = it->second;
      if (!it->second) warn(code + ": no TFR uncertainty in S2/S3");
    }
    countries[code] = c;
  }
  meta["countries"] = countries;
  csv::write_file((run.projection() / "project_meta.json").string(), meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// births accounting

inline void cmd_births(const RunConfig& cfg) {
  const RunLayout run{cfg.out};
  const fs::path meta_path = run.projection() / "project_meta.json";
  if (!fs::exists(meta_path)) throw Error(ErrorCode::MissingPrerequisite, "run the project command first");
  const Json pmeta = Json::parse(csv::read_text(meta_path.string()));
  const InputData in = load_inputs(cfg.inputs, false, true);
  if (pmeta.value("config_hash", "") != cfg.hash())
    warn("projection was produced with a different configuration; trajectories are rebuilt from the current one");
  LoadedFits fits;
  const auto pi = projection_inputs(cfg, in, fits);
  fs::create_directories(run.births());
  const std::string hash = cfg.hash();
  for (auto s : cfg.scenarios) {
    std::string body = csv::preamble(hash) + "# births unit: " + in.births->unit + "\n" + births_header();
    for (const auto& [code, cls] : pi.classes.of) {
      const auto tr = assemble_country(pi, code, s);
      body += births_rows(amfb_cmfb(tr, *in.births, cfg.t1, cfg.t2));
    }
    csv::write_file((run.births() / ("births_" + std::string(to_string(s)) + ".csv")).string(), body);
  }
}

// ---------------------------------------------------------------------------
// validation

inline Json shift_json(const ShiftMetrics& m) {
  Json t = Json::array(), i = Json::array();
  for (const auto& c : m.theta) t.push_back(to_json(c));
  for (const auto& c : m.inflation) i.push_back(to_json(c));
  return {{"theta", t}, {"inflation", i}};
}

inline void write_report(const fs::path& dir, const Json& report, const std::string& csv_body, const std::string& hash) {
  fs::create_directories(dir);
  Json r = report;
  r["config_hash"] = hash;
  csv::write_file((dir / "report.json").string(), r.dump(2) + "\n");
  csv::write_file((dir / "report.csv").string(), csv::preamble(hash) + csv_body);
}

inline void cmd_validate(const RunConfig& cfg) {
  const RunLayout run{cfg.out};
  const auto& v = cfg.validation;
  if (v.model != "m1" && v.model != "m2") throw Error(ErrorCode::InvalidArgument, "validation model must be m1 or m2");
  const bool m2 = v.model == "m2" || v.mode == "predict1970";
  const InputData in = load_inputs(cfg.inputs, m2, false);
  const auto anchors = m2 ? in.at_risk_anchors() : std::map<std::string, TfrAnchors>{};
  const std::string hash = cfg.hash();
  const fs::path dir = run.validation() / (v.mode == "predict1970" ? std::string("predict1970") : v.model + "_" + v.mode);
  Rng perm_rng = stream_rng(cfg.seed, "validation", "permutations");

  if (v.mode == "predict1970") {
    const auto m1 = require_fit(run.m1(), "M1 fit");
    const auto m2fit = require_fit(run.m2(), "M2 fit");
    const auto at_risk = build_at_risk_db(in.observations, in.registry);
    const auto preds = predict_from_1970(m1, m2fit, at_risk, derive_seed(cfg.seed, "predict1970"));
    const auto metrics = leftout_metrics(preds, v.permutations, perm_rng);
    write_report(dir, {{"mode", "predict1970"}, {"leftout", to_json(metrics)}}, leftout_csv(metrics), hash);
    return;
  }

  std::optional<FittedModel> m1_full;
  FixedInputs fixed;
  const ObservationSet db = v.model == "m1" ? build_risk_free_db(in.observations, in.registry)
                                            : build_at_risk_db(in.observations, in.registry);
  std::vector<std::string> countries = v.model == "m1" ? in.registry.codes() : in.registry.at_risk_codes();
  if (v.model == "m2") {
    fixed = fixed_from_m1(require_fit(run.m1(), "M1 fit"));
    if (countries.empty()) throw Error(ErrorCode::NoData, "no at-risk countries to validate");
  }
  auto request = [&](const ObservationSet& data, const std::string& tag) {
    FitRequest r;
    r.spec = v.model == "m1" ? ModelSpec{ModelKind::M1, {}} : m2_spec(fixed);
    r.data = &data;
    r.countries = countries;
    r.tag = tag;
    return r;
  };

  if (v.mode == "recent") {
    const double cutoff = v.cutoff.value_or(v.model == "m1" ? 2005.0 : 2010.0);
    const auto sp = split(db, {SplitMode::RecentAfterYear, cutoff, v.fraction, 0, cfg.seed});
    const auto train = run_fit(request(sp.train, "validate/" + v.model + "/train"), in, anchors, cfg, nullptr, cfg.threads);
    const fs::path full_dir = v.model == "m1" ? run.m1() : run.m2();
    const auto full = fit_exists(full_dir) ? read_fit(full_dir)
                                           : run_fit(request(db, v.model), in, anchors, cfg, nullptr, cfg.threads);
    const auto preds = predict_observations(train, sp.test, derive_seed(cfg.seed, "ppd"));
    const auto metrics = leftout_metrics(preds, v.permutations, perm_rng);
    const auto shift = estimate_shift_metrics(full, train, kShiftYears, derive_seed(cfg.seed, "shift"));
    Json report = {{"mode", "recent"},
                   {"model", v.model},
                   {"cutoff", cutoff},
                   {"test_share", static_cast<double>(sp.test.size()) / static_cast<double>(db.size())},
                   {"countries_in_training", sp.train.countries().size()},
                   {"leftout", to_json(metrics)},
                   {"estimates", shift_json(shift)}};
    write_report(dir, report, leftout_csv(metrics) + "\n" + shift_csv(shift), hash);
    return;
  }
  if (v.mode != "random") throw Error(ErrorCode::InvalidArgument, "validation mode must be recent, random or predict1970");
  if (v.reps < 1) throw Error(ErrorCode::InvalidArgument, "at least one repetition required");
  std::vector<LeftoutMetrics> all;
  for (int rep = 0; rep < v.reps; ++rep) {
    const auto sp = split(db, {SplitMode::RandomFraction, 0, v.fraction, rep, cfg.seed});
    const std::string tag = "validate/" + v.model + "/random/" + std::to_string(rep);
    const auto train = run_fit(request(sp.train, tag), in, anchors, cfg, nullptr, cfg.threads);
    const auto preds = predict_observations(train, sp.test, derive_seed(cfg.seed, tag + "/ppd"));
    Rng rep_rng = stream_rng(cfg.seed, "validation", "permutations/" + std::to_string(rep));
    const auto metrics = leftout_metrics(preds, v.permutations, rep_rng);
    char name[32];
    std::snprintf(name, sizeof(name), "rep_%02d", rep + 1);
    write_report(dir / name, {{"mode", "random"}, {"model", v.model}, {"repetition", rep + 1}, {"leftout", to_json(metrics)}},
                 leftout_csv(metrics), hash);
    all.push_back(metrics);
  }
  LeftoutMetrics mean;
  const double n = static_cast<double>(all.size());
  for (const auto& m : all) {
    mean.n_test_rows += m.n_test_rows;
    mean.n_test_countries = std::max(mean.n_test_countries, m.n_test_countries);
    mean.n_permutations = m.n_permutations;
    mean.median_error += m.median_error / n;
    mean.median_abs_error += m.median_abs_error / n;
    mean.cover95.below += m.cover95.below / n;
    mean.cover95.inside += m.cover95.inside / n;
    mean.cover95.above += m.cover95.above / n;
    mean.cover80.below += m.cover80.below / n;
    mean.cover80.inside += m.cover80.inside / n;
    mean.cover80.above += m.cover80.above / n;
  }
  mean.n_test_rows = static_cast<std::size_t>(std::llround(static_cast<double>(mean.n_test_rows) / n));
  write_report(dir, {{"mode", "random"}, {"model", v.model}, {"repetitions", v.reps}, {"leftout", to_json(mean)}},
               leftout_csv(mean), hash);
}

// ---------------------------------------------------------------------------
// synthetic worlds and diagnostics

inline void cmd_synth(const std::string& spec_path, const fs::path& out, std::optional<std::uint64_t> seed) {
  Json j = Json::parse(csv::read_text(spec_path));
  if (seed) j["seed"] = *seed;
  const auto spec = world_from_json(j);
  write_world(out, generate(spec), config_hash(j));
}

inline std::vector<std::pair<std::string, fs::path>> fits_in_run(const RunLayout& run) {
  std::vector<std::pair<std::string, fs::path>> out;
  for (const char* m : {"m1", "m2", "m2joint"})
    if (fit_exists(run.fits() / m)) out.emplace_back(m, run.fits() / m);
  for (const char* m : {"m3", "m4"}) {
    const fs::path base = run.fits() / m;
    if (!fs::exists(base)) continue;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(base))
      if (fit_exists(e.path())) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) out.emplace_back(std::string(m) + "/" + d.filename().string(), d);
  }
  return out;
}

/// Convergence table of every fit in the run, recomputed from the stored chains.
inline void cmd_diagnose(const RunConfig& cfg, std::ostream& report) {
  const RunLayout run{cfg.out};
  const auto fits = fits_in_run(run);
  if (fits.empty()) throw Error(ErrorCode::MissingPrerequisite, "no fits in " + run.fits().string());
  fs::create_directories(run.diagnostics());
  const std::string hash = cfg.hash();
  std::string table = csv::preamble(hash) + "fit,param,psrf\n";
  std::string summary = csv::preamble(hash) + "fit,n_params,max_psrf,n_above_1.1,stacked\n";
  for (const auto& [name, dir] : fits) {
    const auto f = read_fit(dir);
    const auto psrf = psrf_table(f.chains);
    double worst = 0.0;
    std::size_t above = 0;
    for (const auto& [p, v] : psrf) {
      table += name + ',' + csv::quote(p) + ',' + csv::format_double(v) + '\n';
      worst = std::max(worst, v);
      if (v > 1.1) ++above;
    }
    summary += name + ',' + std::to_string(psrf.size()) + ',' + csv::format_double(worst) + ',' + std::to_string(above) +
               ',' + (f.stacked ? "1" : "0") + '\n';
    report << name << ": " << psrf.size() << " parameters, max PSRF " << csv::format_fixed(worst, 3) << ", " << above
           << " above 1.1" << (f.stacked ? ", stacked" : "") << '\n';
  }
  csv::write_file((run.diagnostics() / "psrf.csv").string(), table);
  csv::write_file((run.diagnostics() / "summary.csv").string(), summary);
}

}  // namespace srb
