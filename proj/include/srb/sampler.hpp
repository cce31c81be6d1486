#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srb/chains.hpp"
#include "srb/data.hpp"
#include "srb/model.hpp"
#include "srb/stats.hpp"

namespace srb {

struct McmcConfig {
  int n_chains = 4;
  int n_burnin = 1000;
  int thinning = 1;
  int n_posterior = 4000;  // total kept draws over all chains
  std::uint64_t seed = 1;
  int adapt_window = 50;
  double target_acceptance = 0.44;
  int threads = 1;

  int kept_per_chain() const { return n_posterior / n_chains; }

  void validate() const {
    if (n_chains < 1 || n_burnin < 0 || thinning < 1 || n_posterior < 1 || adapt_window < 1)
      throw Error(ErrorCode::InvalidArgument, "MCMC counts must be positive");
    if (n_posterior % n_chains != 0)
      throw Error(ErrorCode::InvalidArgument, "posterior sample count must be a multiple of the chain count");
    if (!(target_acceptance > 0 && target_acceptance < 1))
      throw Error(ErrorCode::InvalidArgument, "target acceptance must lie in (0, 1)");
  }
};

struct FitObs {
  std::size_t country = 0;
  int offset = 0;  // grid year minus the country's eta_start
  double log_y = 0;
  double v2 = 0;
  SourceType source = SourceType::CrvsSrs;
};

/// Everything a fit needs: model structure plus the observations indexed for local updates.
struct FitProblem {
  ModelStructure structure;
  ObservationSet data;
  std::vector<FitObs> obs;
  std::vector<std::vector<std::size_t>> obs_by_country;
  std::vector<std::vector<std::vector<std::size_t>>> obs_by_year;  // [country][offset]
  std::array<std::vector<std::size_t>, kSourceTypeCount> obs_by_source;
  double variance_floor = kDefaultVarianceFloor;
};

struct ProblemOptions {
  /// Earliest eta year per country (extends the window backwards).
  std::map<std::string, int> min_eta_start;
  double variance_floor = kDefaultVarianceFloor;
};

/// Builds the fit problem for `countries` (all must be in the registry). Anchors are
/// required for countries with transitions.
inline FitProblem make_problem(const ModelSpec& spec, const ObservationSet& data, const CountryRegistry& registry,
                               const std::vector<std::string>& countries,
                               const std::map<std::string, TfrAnchors>& anchors, const ProblemOptions& opts = {}) {
  FitProblem p;
  p.data = data;
  p.variance_floor = opts.variance_floor;
  auto& ms = p.structure;
  ms.spec = spec;
  std::map<std::string, std::size_t> index;
  for (const auto& code : countries) {
    const auto& entry = registry.at(code);
    if (std::find(ms.regions.begin(), ms.regions.end(), entry.region) == ms.regions.end())
      ms.regions.push_back(entry.region);
  }
  std::sort(ms.regions.begin(), ms.regions.end());

  std::vector<std::string> region_codes;
  for (const auto& code : countries) {
    const auto& entry = registry.at(code);
    CountryMeta meta;
    meta.code = code;
    meta.region = static_cast<std::size_t>(std::find(ms.regions.begin(), ms.regions.end(), entry.region) -
                                           ms.regions.begin());
    meta.has_transition = has_transitions(spec.kind);
    if (meta.has_transition) {
      auto it = anchors.find(code);
      if (it == anchors.end()) throw Error(ErrorCode::MissingTfr, "no TFR anchors for " + code);
      meta.z = it->second.z;
      meta.x = it->second.x;
    }
    meta.eta_start = kGridStart;
    if (auto it = opts.min_eta_start.find(code); it != opts.min_eta_start.end())
      meta.eta_start = std::min(meta.eta_start, it->second);
    meta.eta_end = meta.eta_start;
    index[code] = ms.countries.size();
    ms.countries.push_back(meta);
    region_codes.push_back(entry.region);
  }
  validate_spec(spec, countries, region_codes);

  for (const auto& o : data) {
    auto it = index.find(o.country);
    if (it == index.end()) {
      if (!registry.contains(o.country)) throw Error(ErrorCode::UnknownCountry, o.country);
      throw Error(ErrorCode::InvalidArgument, "observation of " + o.country + " is outside the fit's country set");
    }
    auto& meta = ms.countries[it->second];
    meta.eta_start = std::min(meta.eta_start, o.grid_year());
    meta.eta_end = std::max(meta.eta_end, o.grid_year());
  }
  if (data.empty()) throw Error(ErrorCode::NoData, "no observations for the fit");

  const std::size_t nc = ms.countries.size();
  p.obs_by_country.assign(nc, {});
  p.obs_by_year.resize(nc);
  for (std::size_t c = 0; c < nc; ++c)
    p.obs_by_year[c].assign(static_cast<std::size_t>(ms.countries[c].eta_end - ms.countries[c].eta_start + 1), {});
  for (const auto& o : data) {
    const std::size_t c = index.at(o.country);
    FitObs fo;
    fo.country = c;
    fo.offset = o.grid_year() - ms.countries[c].eta_start;
    fo.log_y = std::log(o.srb);
    fo.v2 = o.sampling_sd * o.sampling_sd;
    fo.source = o.source;
    const std::size_t i = p.obs.size();
    p.obs.push_back(fo);
    p.obs_by_country[c].push_back(i);
    p.obs_by_year[c][static_cast<std::size_t>(fo.offset)].push_back(i);
    p.obs_by_source[static_cast<std::size_t>(fo.source)].push_back(i);
  }
  return p;
}

inline constexpr double kSwitchGammaSd = 3.0;
inline constexpr double kSwitchLambdaSd = 3.0;

namespace detail {

enum class Scale { Identity, Log, Bounded };

/// Random-walk proposal on a transformed scale.
struct Transform {
  Scale scale = Scale::Identity;
  double lo = 0, hi = 1;

  double to_free(double x) const {
    switch (scale) {
      case Scale::Identity: return x;
      case Scale::Log: return std::log(x);
      case Scale::Bounded: return stats::logit((x - lo) / (hi - lo));
    }
    return x;
  }
  double from_free(double y) const {
    switch (scale) {
      case Scale::Identity: return y;
      case Scale::Log: return std::exp(y);
      case Scale::Bounded: return lo + (hi - lo) * stats::inv_logit(y);
    }
    return y;
  }
  /// log |dx/dy|
  double log_jacobian(double x) const {
    switch (scale) {
      case Scale::Identity: return 0.0;
      case Scale::Log: return std::log(x);
      case Scale::Bounded: return std::log(x - lo) + std::log(hi - x) - std::log(hi - lo);
    }
    return 0.0;
  }
  bool inside(double x) const {
    switch (scale) {
      case Scale::Identity: return std::isfinite(x);
      case Scale::Log: return x > 0 && std::isfinite(x);
      case Scale::Bounded: return x > lo && x < hi;
    }
    return false;
  }
};

inline Transform identity() { return {Scale::Identity, 0, 0}; }
inline Transform log_scale() { return {Scale::Log, 0, 0}; }
inline Transform bounded(double lo, double hi) { return {Scale::Bounded, lo, hi}; }

enum class Group { BetaRegion, SigmaBeta, Rho, SigmaEps, Omega, Beta, Shift, Eta, Gamma0, Lambda, Xi, Pi, Hyper, Switch, Count };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::BetaRegion: return "beta_region";
    case Group::SigmaBeta: return "sigma_beta";
    case Group::Rho: return "rho";
    case Group::SigmaEps: return "sigma_eps";
    case Group::Omega: return "omega";
    case Group::Beta: return "beta";
    case Group::Shift: return "beta_eta_shift";
    case Group::Eta: return "eta";
    case Group::Gamma0: return "gamma0";
    case Group::Lambda: return "lambda";
    case Group::Xi: return "xi";
    case Group::Pi: return "pi";
    case Group::Hyper: return "hyper";
    case Group::Switch: return "delta_switch";
    case Group::Count: break;
  }
  return "?";
}

/// Per-parameter proposal scale, adapted in batches during burn-in.
struct Tuner {
  double log_step = 0.0;
  int batch_proposals = 0;
  double batch_accept = 0.0;
  int batches = 0;

  explicit Tuner(double step = 0.1) : log_step(std::log(step)) {}
  double step() const { return std::exp(log_step); }

  void record(double accept_prob, int window, double target) {
    ++batch_proposals;
    batch_accept += accept_prob;
    if (batch_proposals >= window) {
      ++batches;
      const double rate = batch_accept / batch_proposals;
      log_step += 2.0 * (rate - target) / std::sqrt(static_cast<double>(batches));
      log_step = std::clamp(log_step, -14.0, 6.0);
      batch_proposals = 0;
      batch_accept = 0.0;
    }
  }
};

inline double ll_term(double log_y, double log_theta, double var) {
  const double d = log_y - log_theta;
  return -kLogSqrt2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}

}  // namespace detail

struct AcceptanceCounts {
  std::array<double, static_cast<std::size_t>(detail::Group::Count)> accepted{};
  std::array<double, static_cast<std::size_t>(detail::Group::Count)> proposed{};

  std::map<std::string, double> rates() const {
    std::map<std::string, double> out;
    for (std::size_t g = 0; g < accepted.size(); ++g)
      if (proposed[g] > 0) out[detail::group_name(static_cast<detail::Group>(g))] = accepted[g] / proposed[g];
    return out;
  }
};

/// One Markov chain of the adaptive Metropolis-within-Gibbs sampler.
class ChainSampler {
 public:
  ChainSampler(const FitProblem& problem, const McmcConfig& cfg, std::uint64_t seed)
      : p_(problem), ms_(problem.structure), cfg_(cfg), rng_(seed) {}

  const ModelState& state() const { return s_; }
  ModelState& mutable_state() { return s_; }
  const AcceptanceCounts& acceptance() const { return counts_; }

  void initialize() {
    using stats::uniform;
    const auto kind = ms_.spec.kind;
    const std::size_t nc = ms_.countries.size();
    auto& g = s_.global;
    g.beta_region.assign(ms_.regions.size(), 1.05);
    for (auto& br : g.beta_region) br = uniform(rng_, 1.03, 1.07);
    g.sigma_beta = uniform(rng_, 0.005, 0.03);
    g.rho = uniform(rng_, 0.3, 0.8);
    g.sigma_eps = uniform(rng_, 0.005, 0.03);
    g.errors = ErrorModel{};
    g.errors.variance_floor = p_.variance_floor;
    for (auto st : kAllSourceTypes)
      if (st != SourceType::CrvsSrs) g.errors.omega[static_cast<std::size_t>(st)] = uniform(rng_, 0.01, 0.1);
    auto& h = g.hyper;
    h.mu_xi = uniform(rng_, 0.02, 0.1);
    h.sigma_xi = uniform(rng_, 0.02, 0.1);
    for (int k = 0; k < 3; ++k) {
      h.mu_lambda[k] = uniform(rng_, 5.0, 15.0);
      h.sigma_lambda[k] = uniform(rng_, 2.0, 6.0);
    }
    h.sigma_gamma = uniform(rng_, 2.0, 6.0);
    h.mu_pi = uniform(rng_, -0.5, 0.5);
    h.sigma_pi = uniform(rng_, 0.5, 1.5);

    s_.countries.assign(nc, {});
    for (std::size_t c = 0; c < nc; ++c) {
      const auto& meta = ms_.countries[c];
      auto& cl = s_.countries[c];
      cl.log_eta.assign(static_cast<std::size_t>(meta.eta_end - meta.eta_start + 1), 0.0);
      if (kind == ModelKind::M1) {
        double acc = 0.0;
        for (auto i : p_.obs_by_country[c]) acc += p_.obs[i].log_y;
        const double centre = p_.obs_by_country[c].empty()
                                  ? std::log(g.beta_region[meta.region])
                                  : acc / static_cast<double>(p_.obs_by_country[c].size());
        cl.beta = std::exp(centre + 0.005 * stats::std_normal(rng_));
      } else if (kind == ModelKind::M2Joint) {
        cl.beta = ms_.fixed_beta_region(c) * std::exp(0.005 * stats::std_normal(rng_));
      } else {
        cl.beta = ms_.fixed_beta(c);
      }
      if (meta.has_transition) {
        auto& tp = cl.transition;
        tp.gamma0 = std::max(static_cast<double>(meta.z) + 0.5, meta.x + uniform(rng_, -5.0, 5.0));
        tp.lambda1 = uniform(rng_, 5.0, 15.0);
        tp.lambda2 = uniform(rng_, 5.0, 15.0);
        tp.lambda3 = uniform(rng_, 5.0, 15.0);
        tp.xi = uniform(rng_, 0.02, 0.08);
        tp.delta = 1;
        cl.logit_pi = 0.0;
      }
    }
    if (has_indicator(kind)) {
      switch_centre_.assign(nc, std::nullopt);
      for (std::size_t c = 0; c < nc; ++c)
        if (ms_.countries[c].has_transition) switch_centre_[c] = prefit_transition(c);
    }
    setup_tuners();
    refresh_caches();
    check_initial_state();
  }

  void sweep(bool adapting) {
    adapting_ = adapting;
    const auto kind = ms_.spec.kind;
    for (std::size_t c = 0; c < ms_.countries.size(); ++c) update_eta(c);
    if (kind == ModelKind::M1) {
      for (std::size_t c = 0; c < ms_.countries.size(); ++c) {
        gibbs_log_beta(c);
        shift_move(c);
      }
      update_beta_region();
      update_sigma_beta();
      update_phi();
    } else if (kind == ModelKind::M2Joint) {
      for (std::size_t c = 0; c < ms_.countries.size(); ++c) {
        rw_beta_joint(c);
        shift_move(c);
      }
    }
    update_omega();
    if (has_transitions(kind)) {
      for (std::size_t c = 0; c < ms_.countries.size(); ++c) {
        if (!ms_.countries[c].has_transition) continue;
        update_transition(c);
        if (has_indicator(kind)) {
          update_delta(c);
          switch_delta(c);
          update_pi(c);
        }
      }
      if (has_indicator(kind)) update_hyper();
    }
  }

  void write_draw(const ParamLayout& L, std::span<double> out) const {
    const auto& g = s_.global;
    for (std::size_t r = 0; r < L.beta_region.size(); ++r) out[L.beta_region[r]] = g.beta_region[r];
    if (L.sigma_beta >= 0) out[L.sigma_beta] = g.sigma_beta;
    if (L.rho >= 0) out[L.rho] = g.rho;
    if (L.sigma_eps >= 0) out[L.sigma_eps] = g.sigma_eps;
    for (auto st : kAllSourceTypes) {
      const int slot = L.omega[static_cast<std::size_t>(st)];
      if (slot >= 0) out[slot] = g.errors[st];
    }
    const auto& hs = L.hyper;
    if (hs.mu_xi >= 0) {
      out[hs.mu_xi] = g.hyper.mu_xi;
      out[hs.sigma_xi] = g.hyper.sigma_xi;
      for (int k = 0; k < 3; ++k) {
        out[hs.mu_lambda[k]] = g.hyper.mu_lambda[k];
        out[hs.sigma_lambda[k]] = g.hyper.sigma_lambda[k];
      }
      out[hs.sigma_gamma] = g.hyper.sigma_gamma;
      out[hs.mu_pi] = g.hyper.mu_pi;
      out[hs.sigma_pi] = g.hyper.sigma_pi;
    }
    for (std::size_t c = 0; c < ms_.countries.size(); ++c) {
      const auto& cs = L.countries[c];
      const auto& cl = s_.countries[c];
      if (cs.beta >= 0) out[cs.beta] = cl.beta;
      for (std::size_t t = 0; t < cl.log_eta.size(); ++t) out[cs.eta + t] = std::exp(cl.log_eta[t]);
      if (cs.gamma0 >= 0) {
        out[cs.gamma0] = cl.transition.gamma0;
        out[cs.lambda[0]] = cl.transition.lambda1;
        out[cs.lambda[1]] = cl.transition.lambda2;
        out[cs.lambda[2]] = cl.transition.lambda3;
        out[cs.xi] = cl.transition.xi;
      }
      if (cs.delta >= 0) out[cs.delta] = cl.transition.delta;
      if (cs.pi >= 0) out[cs.pi] = stats::inv_logit(cl.logit_pi);
    }
  }

  /// Throws SupportViolation if the state left the prior support.
  void check_support() const {
    if (!std::isfinite(log_prior(ms_, s_))) throw Error(ErrorCode::SupportViolation, "draw outside prior support");
  }

  double log_likelihood() const {
    double ll = 0.0;
    for (std::size_t i = 0; i < p_.obs.size(); ++i) ll += detail::ll_term(p_.obs[i].log_y, log_theta_[i], var_[i]);
    return ll;
  }

  /// Recompute cached SRB and variances from the state (after external edits).
  void refresh_caches() {
    log_theta_.assign(p_.obs.size(), 0.0);
    var_.assign(p_.obs.size(), 0.0);
    for (std::size_t c = 0; c < ms_.countries.size(); ++c) recompute_country(c, s_.countries[c], log_theta_);
    for (std::size_t i = 0; i < p_.obs.size(); ++i) var_[i] = total_var(s_.global.errors[p_.obs[i].source], p_.obs[i].v2);
  }

 private:
  using Group = detail::Group;

  double total_var(double omega, double v2) const { return std::max(omega * omega + v2, p_.variance_floor); }

  int delta_of(std::size_t c) const {
    return effective_delta(ms_, s_.countries[c], ms_.countries[c].has_transition);
  }

  double log_theta_at(std::size_t c, const CountryLatent& cl, int offset, double u) const {
    const double base = cl.beta * std::exp(u);
    if (!ms_.countries[c].has_transition) return std::log(base);
    const int delta = effective_delta(ms_, cl, true);
    if (!delta) return std::log(base);
    return std::log(base + omega_at(cl.transition, ms_.countries[c].eta_start + offset));
  }

  void recompute_country(std::size_t c, const CountryLatent& cl, std::vector<double>& out) const {
    for (auto i : p_.obs_by_country[c]) {
      const auto off = p_.obs[i].offset;
      out[i] = log_theta_at(c, cl, off, cl.log_eta[static_cast<std::size_t>(off)]);
    }
  }

  double country_ll(std::size_t c, const std::vector<double>& log_theta) const {
    double ll = 0.0;
    for (auto i : p_.obs_by_country[c]) ll += detail::ll_term(p_.obs[i].log_y, log_theta[i], var_[i]);
    return ll;
  }

  void count(Group g, double accept_prob) {
    if (adapting_) return;
    counts_.accepted[static_cast<std::size_t>(g)] += accept_prob;
    counts_.proposed[static_cast<std::size_t>(g)] += 1.0;
  }

  /// Generic random-walk Metropolis step for a scalar with a cheap target.
  template <typename Target>
  bool rw_scalar(double& x, detail::Tuner& tuner, const detail::Transform& tr, Group group, Target&& log_target) {
    const double y = tr.to_free(x);
    const double y_new = y + tuner.step() * stats::std_normal(rng_);
    const double x_new = tr.from_free(y_new);
    double log_ratio = kNegInf;
    if (tr.inside(x_new)) {
      const double cur = log_target(x);
      const double prop = log_target(x_new);
      log_ratio = prop - cur + tr.log_jacobian(x_new) - tr.log_jacobian(x);
      if (std::isnan(log_ratio)) log_ratio = kNegInf;
    }
    return finish(log_ratio, tuner, group, [&] { x = x_new; });
  }

  template <typename OnAccept>
  bool finish(double log_ratio, detail::Tuner& tuner, Group group, OnAccept&& on_accept) {
    const double accept_prob = log_ratio >= 0 ? 1.0 : std::exp(log_ratio);
    if (adapting_) tuner.record(accept_prob, cfg_.adapt_window, cfg_.target_acceptance);
    count(group, accept_prob);
    if (log_ratio >= 0 || std::log(stats::uniform01(rng_)) < log_ratio) {
      on_accept();
      return true;
    }
    return false;
  }

  void setup_tuners() {
    const std::size_t nc = ms_.countries.size();
    t_beta_region_.assign(ms_.regions.size(), detail::Tuner(0.5));
    t_sigma_beta_ = detail::Tuner(0.5);
    t_rho_ = detail::Tuner(0.3);
    t_sigma_eps_ = detail::Tuner(0.3);
    t_omega_.fill(detail::Tuner(0.5));
    t_beta_.assign(nc, detail::Tuner(0.01));
    t_shift_.assign(nc, detail::Tuner(0.005));
    t_eta_.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) t_eta_[c].assign(s_.countries[c].log_eta.size(), detail::Tuner(0.01));
    t_gamma0_.assign(nc, detail::Tuner(2.0));
    t_lambda_.assign(nc, {detail::Tuner(0.3), detail::Tuner(0.3), detail::Tuner(0.3)});
    t_xi_.assign(nc, detail::Tuner(0.3));
    t_pi_.assign(nc, detail::Tuner(1.0));
    t_hyper_.assign(12, detail::Tuner(0.5));
  }

  void check_initial_state() {
    for (std::size_t i = 0; i < p_.obs.size(); ++i) {
      if (!std::isfinite(detail::ll_term(p_.obs[i].log_y, log_theta_[i], var_[i]))) {
        const auto& meta = ms_.countries[p_.obs[i].country];
        throw Error(ErrorCode::NonFiniteDensity,
                    "likelihood of observation for " + meta.code + " in " +
                        std::to_string(meta.eta_start + p_.obs[i].offset));
      }
    }
    if (!std::isfinite(log_prior(ms_, s_))) {
      for (std::size_t c = 0; c < ms_.countries.size(); ++c) {
        const auto& meta = ms_.countries[c];
        if (meta.has_transition &&
            !std::isfinite(transition_log_prior(s_.countries[c].transition, active_hyper(ms_, s_.global), meta.z, meta.x)))
          throw Error(ErrorCode::NonFiniteDensity, "transition prior of " + meta.code);
      }
      throw Error(ErrorCode::NonFiniteDensity, "initial prior density");
    }
  }

  // -- eta ------------------------------------------------------------------

  void update_eta(std::size_t c) {
    auto& cl = s_.countries[c];
    auto& u = cl.log_eta;
    const auto [rho, sigma] = active_phi(ms_, s_.global);
    const double s2 = sigma * sigma;
    const double s0_2 = s2 / (1.0 - rho * rho);
    const std::size_t n = u.size();
    const bool linear = delta_of(c) == 0;
    const double log_beta = std::log(cl.beta);
    for (std::size_t t = 0; t < n; ++t) {
      const auto& at_year = p_.obs_by_year[c][t];
      // prior neighbours
      double prec = (t == 0) ? 1.0 / s0_2 : 1.0 / s2;
      double num = (t == 0) ? 0.0 : rho * u[t - 1] / s2;
      if (t + 1 < n) {
        prec += rho * rho / s2;
        num += rho * u[t + 1] / s2;
      }
      if (linear || at_year.empty()) {
        for (auto i : at_year) {
          prec += 1.0 / var_[i];
          num += (p_.obs[i].log_y - log_beta) / var_[i];
        }
        u[t] = num / prec + stats::std_normal(rng_) / std::sqrt(prec);
        for (auto i : at_year) log_theta_[i] = log_theta_at(c, cl, static_cast<int>(t), u[t]);
        continue;
      }
      // Gaussian prior conditional times the nonlinear likelihood
      const double prior_mean = num / prec;
      auto& tuner = t_eta_[c][t];
      const double cur = u[t];
      const double prop = cur + tuner.step() * stats::std_normal(rng_);
      double log_ratio = -0.5 * prec * ((prop - prior_mean) * (prop - prior_mean) - (cur - prior_mean) * (cur - prior_mean));
      scratch_small_.clear();
      for (auto i : at_year) {
        const double lt = log_theta_at(c, cl, static_cast<int>(t), prop);
        scratch_small_.push_back(lt);
        log_ratio += detail::ll_term(p_.obs[i].log_y, lt, var_[i]) - detail::ll_term(p_.obs[i].log_y, log_theta_[i], var_[i]);
      }
      if (std::isnan(log_ratio)) log_ratio = kNegInf;
      finish(log_ratio, tuner, Group::Eta, [&] {
        u[t] = prop;
        for (std::size_t k = 0; k < at_year.size(); ++k) log_theta_[at_year[k]] = scratch_small_[k];
      });
    }
  }

  // -- baselines --------------------------------------------------------------

  /// Conjugate draw of log(beta_c) when SRB = beta * eta.
  void gibbs_log_beta(std::size_t c) {
    auto& cl = s_.countries[c];
    const double prior_mean = std::log(s_.global.beta_region[ms_.countries[c].region]);
    const double sb2 = s_.global.sigma_beta * s_.global.sigma_beta;
    double prec = 1.0 / sb2;
    double num = prior_mean / sb2;
    for (auto i : p_.obs_by_country[c]) {
      const auto& o = p_.obs[i];
      prec += 1.0 / var_[i];
      num += (o.log_y - cl.log_eta[static_cast<std::size_t>(o.offset)]) / var_[i];
    }
    cl.beta = std::exp(num / prec + stats::std_normal(rng_) / std::sqrt(prec));
    recompute_country(c, cl, log_theta_);
  }

  double log_beta_prior(std::size_t c, double beta) const {
    if (ms_.spec.kind == ModelKind::M1)
      return stats::normal_logpdf(std::log(beta), std::log(s_.global.beta_region[ms_.countries[c].region]),
                                  s_.global.sigma_beta);
    // natural-scale normal, moved on the log scale
    return stats::normal_logpdf(beta, ms_.fixed_beta_region(c), *ms_.spec.fixed.sigma_beta) + std::log(beta);
  }

  /// Moves log(beta_c) by d and every log(eta_c,t) by -d; beta*eta is unchanged.
  void shift_move(std::size_t c) {
    auto& cl = s_.countries[c];
    auto& tuner = t_shift_[c];
    const double d = tuner.step() * stats::std_normal(rng_);
    CountryLatent prop = cl;
    prop.beta = cl.beta * std::exp(d);
    for (auto& v : prop.log_eta) v -= d;
    const auto [rho, sigma] = active_phi(ms_, s_.global);
    double log_ratio = log_beta_prior(c, prop.beta) - log_beta_prior(c, cl.beta) +
                       ar1_path_logpdf(prop.log_eta, rho, sigma) - ar1_path_logpdf(cl.log_eta, rho, sigma);
    scratch_ = log_theta_;
    recompute_country(c, prop, scratch_);
    log_ratio += country_ll(c, scratch_) - country_ll(c, log_theta_);
    if (std::isnan(log_ratio)) log_ratio = kNegInf;
    finish(log_ratio, tuner, Group::Shift, [&] {
      cl = std::move(prop);
      for (auto i : p_.obs_by_country[c]) log_theta_[i] = scratch_[i];
    });
  }

  void rw_beta_joint(std::size_t c) {
    auto& cl = s_.countries[c];
    auto& tuner = t_beta_[c];
    CountryLatent prop = cl;
    prop.beta = cl.beta * std::exp(tuner.step() * stats::std_normal(rng_));
    scratch_ = log_theta_;
    recompute_country(c, prop, scratch_);
    double log_ratio = log_beta_prior(c, prop.beta) - log_beta_prior(c, cl.beta) + country_ll(c, scratch_) -
                       country_ll(c, log_theta_);
    if (std::isnan(log_ratio)) log_ratio = kNegInf;
    finish(log_ratio, tuner, Group::Beta, [&] {
      cl.beta = prop.beta;
      for (auto i : p_.obs_by_country[c]) log_theta_[i] = scratch_[i];
    });
  }

  void update_beta_region() {
    auto& g = s_.global;
    for (std::size_t r = 0; r < g.beta_region.size(); ++r) {
      auto target = [&](double br) {
        double lp = 0.0;
        for (std::size_t c = 0; c < ms_.countries.size(); ++c)
          if (ms_.countries[c].region == r)
            lp += stats::normal_logpdf(std::log(s_.countries[c].beta), std::log(br), g.sigma_beta);
        return lp;
      };
      rw_scalar(g.beta_region[r], t_beta_region_[r], detail::bounded(kBetaRegionLower, kBetaRegionUpper),
                Group::BetaRegion, target);
    }
  }

  void update_sigma_beta() {
    auto& g = s_.global;
    auto target = [&](double sb) {
      double lp = 0.0;
      for (std::size_t c = 0; c < ms_.countries.size(); ++c)
        lp += stats::normal_logpdf(std::log(s_.countries[c].beta), std::log(g.beta_region[ms_.countries[c].region]), sb);
      return lp;
    };
    rw_scalar(g.sigma_beta, t_sigma_beta_, detail::bounded(0.0, kSigmaBetaUpper), Group::SigmaBeta, target);
  }

  // -- AR(1) hyperparameters ----------------------------------------------------

  void update_phi() {
    // sufficient statistics of all log-eta paths
    double first_sq = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0, n_trans = 0.0, n_paths = 0.0;
    for (const auto& cl : s_.countries) {
      const auto& u = cl.log_eta;
      if (u.empty()) continue;
      n_paths += 1.0;
      first_sq += u[0] * u[0];
      for (std::size_t t = 1; t < u.size(); ++t) {
        sxx += u[t - 1] * u[t - 1];
        syy += u[t] * u[t];
        sxy += u[t - 1] * u[t];
        n_trans += 1.0;
      }
    }
    auto path_lp = [&](double rho, double sigma) {
      const double s2 = sigma * sigma;
      const double s0_2 = s2 / (1.0 - rho * rho);
      return -0.5 * n_paths * std::log(s0_2) - 0.5 * first_sq / s0_2 - 0.5 * n_trans * std::log(s2) -
             0.5 * (syy - 2.0 * rho * sxy + rho * rho * sxx) / s2;
    };
    auto& g = s_.global;
    rw_scalar(g.rho, t_rho_, detail::bounded(0.0, kRhoCap), Group::Rho, [&](double r) { return path_lp(r, g.sigma_eps); });
    rw_scalar(g.sigma_eps, t_sigma_eps_, detail::bounded(0.0, kSigmaEpsUpper), Group::SigmaEps,
              [&](double s) { return path_lp(g.rho, s); });
  }

  // -- non-sampling errors ----------------------------------------------------

  void update_omega() {
    auto& em = s_.global.errors;
    for (auto st : kAllSourceTypes) {
      if (st == SourceType::CrvsSrs) continue;
      const auto si = static_cast<std::size_t>(st);
      const auto& rows = p_.obs_by_source[si];
      auto target = [&](double w) {
        double ll = 0.0;
        for (auto i : rows) ll += detail::ll_term(p_.obs[i].log_y, log_theta_[i], total_var(w, p_.obs[i].v2));
        return ll;
      };
      if (rw_scalar(em.omega[si], t_omega_[si], detail::bounded(0.0, kOmegaUpper), Group::Omega, target))
        for (auto i : rows) var_[i] = total_var(em.omega[si], p_.obs[i].v2);
    }
  }

  // -- transitions --------------------------------------------------------------

  void draw_transition_from_prior(std::size_t c) {
    const auto& meta = ms_.countries[c];
    const auto& h = active_hyper(ms_, s_.global);
    auto& tp = s_.countries[c].transition;
    tp.xi = stats::sample_truncnorm_lower(rng_, h.mu_xi, h.sigma_xi, 0.0);
    tp.lambda1 = stats::sample_truncnorm_lower(rng_, h.mu_lambda[0], h.sigma_lambda[0], 0.0);
    tp.lambda2 = stats::sample_truncnorm_lower(rng_, h.mu_lambda[1], h.sigma_lambda[1], 0.0);
    tp.lambda3 = stats::sample_truncnorm_lower(rng_, h.mu_lambda[2], h.sigma_lambda[2], 0.0);
    tp.gamma0 = stats::sample_trunct_lower(rng_, meta.x, h.sigma_gamma, meta.z, kStartYearDf);
    // guard the measure-zero boundary of the log-scale random walk
    tp.xi = std::max(tp.xi, 1e-300);
    tp.lambda1 = std::max(tp.lambda1, 1e-300);
    tp.lambda2 = std::max(tp.lambda2, 1e-300);
    tp.lambda3 = std::max(tp.lambda3, 1e-300);
  }

  /// Random-walk update of one transition scalar, likelihood included.
  template <typename Prior>
  void rw_transition_scalar(std::size_t c, double TransitionParams::*field, detail::Tuner& tuner,
                            const detail::Transform& tr, Group group, Prior&& prior) {
    auto& cl = s_.countries[c];
    const double cur = cl.transition.*field;
    const double y_new = tr.to_free(cur) + tuner.step() * stats::std_normal(rng_);
    const double x_new = tr.from_free(y_new);
    double log_ratio = kNegInf;
    if (tr.inside(x_new)) {
      CountryLatent prop = cl;
      prop.transition.*field = x_new;
      const double lp_new = prior(x_new);
      if (std::isfinite(lp_new)) {
        scratch_ = log_theta_;
        recompute_country(c, prop, scratch_);
        log_ratio = lp_new - prior(cur) + tr.log_jacobian(x_new) - tr.log_jacobian(cur) + country_ll(c, scratch_) -
                    country_ll(c, log_theta_);
        if (std::isnan(log_ratio)) log_ratio = kNegInf;
      }
    }
    finish(log_ratio, tuner, group, [&] {
      cl.transition.*field = x_new;
      for (auto i : p_.obs_by_country[c]) log_theta_[i] = scratch_[i];
    });
  }

  void update_transition(std::size_t c) {
    if (delta_of(c) == 0) {
      draw_transition_from_prior(c);
      return;
    }
    const auto& meta = ms_.countries[c];
    const auto& h = active_hyper(ms_, s_.global);
    rw_transition_scalar(c, &TransitionParams::gamma0, t_gamma0_[c], detail::identity(), Group::Gamma0, [&](double g0) {
      return stats::trunct_lower_logpdf(g0, meta.x, h.sigma_gamma, meta.z, kStartYearDf);
    });
    double TransitionParams::*lambdas[3] = {&TransitionParams::lambda1, &TransitionParams::lambda2,
                                            &TransitionParams::lambda3};
    for (int k = 0; k < 3; ++k) {
      rw_transition_scalar(c, lambdas[k], t_lambda_[c][k], detail::log_scale(), Group::Lambda, [&](double l) {
        return stats::truncnorm_lower_logpdf(l, h.mu_lambda[k], h.sigma_lambda[k], 0.0);
      });
    }
    rw_transition_scalar(c, &TransitionParams::xi, t_xi_[c], detail::log_scale(), Group::Xi,
                         [&](double xi) { return stats::truncnorm_lower_logpdf(xi, h.mu_xi, h.sigma_xi, 0.0); });
  }

  void update_delta(std::size_t c) {
    auto& cl = s_.countries[c];
    CountryLatent on = cl;
    on.transition.delta = 1;
    CountryLatent off = cl;
    off.transition.delta = 0;
    scratch_ = log_theta_;
    recompute_country(c, on, scratch_);
    const double ll_on = country_ll(c, scratch_);
    std::vector<double>& alt = scratch2_;
    alt = log_theta_;
    recompute_country(c, off, alt);
    const double ll_off = country_ll(c, alt);
    const double log_odds = cl.logit_pi + ll_on - ll_off;
    const int delta = stats::uniform01(rng_) < stats::inv_logit(log_odds) ? 1 : 0;
    cl.transition.delta = delta;
    const auto& chosen = delta ? scratch_ : alt;
    for (auto i : p_.obs_by_country[c]) log_theta_[i] = chosen[i];
  }

  /// Least-squares trapezoid through the yearly excess of the data over the reference SRB.
  std::optional<TransitionParams> prefit_transition(std::size_t c) const {
    const auto& meta = ms_.countries[c];
    const double beta = ms_.spec.kind == ModelKind::M2Joint ? ms_.fixed_beta_region(c) : ms_.fixed_beta(c);
    std::vector<double> years, excess;
    for (std::size_t t = 0; t < p_.obs_by_year[c].size(); ++t) {
      const auto& ids = p_.obs_by_year[c][t];
      if (ids.empty()) continue;
      double acc = 0.0;
      for (auto i : ids) acc += std::exp(p_.obs[i].log_y) - beta;
      years.push_back(meta.eta_start + static_cast<double>(t));
      excess.push_back(acc / static_cast<double>(ids.size()));
    }
    if (years.empty()) return std::nullopt;
    constexpr std::array<double, 5> lengths{2.0, 5.0, 8.0, 12.0, 16.0};
    TransitionParams best;
    best.delta = 1;
    best.gamma0 = std::max(static_cast<double>(meta.z) + 0.5, static_cast<double>(meta.x));
    best.lambda1 = best.lambda2 = best.lambda3 = 8.0;
    best.xi = 0.0;
    double best_gain = 0.0;
    TransitionParams tp;
    tp.xi = 1.0;
    for (int g0 = meta.z + 1; g0 <= meta.eta_end; ++g0) {
      tp.gamma0 = g0;
      for (double l1 : lengths)
        for (double l2 : lengths)
          for (double l3 : lengths) {
            tp.lambda1 = l1;
            tp.lambda2 = l2;
            tp.lambda3 = l3;
            double sds = 0.0, sss = 0.0;
            for (std::size_t i = 0; i < years.size(); ++i) {
              const double shape = omega_at(tp, years[i]);
              sds += excess[i] * shape;
              sss += shape * shape;
            }
            if (sss <= 0.0 || sds <= 0.0) continue;
            const double gain = sds * sds / sss;  // reduction in the residual sum of squares
            if (gain > best_gain) {
              best_gain = gain;
              best.gamma0 = g0;
              best.lambda1 = l1;
              best.lambda2 = l2;
              best.lambda3 = l3;
              best.xi = sds / sss;
            }
          }
    }
    return best;
  }

  double switch_proposal_logpdf(std::size_t c, const TransitionParams& tp) const {
    const auto& q = *switch_centre_[c];
    double lp = stats::truncnorm_lower_logpdf(tp.gamma0, q.gamma0, kSwitchGammaSd, ms_.countries[c].z);
    const std::array<double, 3> ql{q.lambda1, q.lambda2, q.lambda3}, tl{tp.lambda1, tp.lambda2, tp.lambda3};
    for (std::size_t k = 0; k < 3; ++k) lp += stats::truncnorm_lower_logpdf(tl[k], ql[k], kSwitchLambdaSd, 0.0);
    return lp + stats::truncnorm_lower_logpdf(tp.xi, q.xi, 0.3 * q.xi + 0.01, 0.0);
  }

  TransitionParams draw_switch_proposal(std::size_t c) {
    const auto& q = *switch_centre_[c];
    TransitionParams tp;
    tp.delta = 1;
    tp.gamma0 = stats::sample_truncnorm_lower(rng_, q.gamma0, kSwitchGammaSd, ms_.countries[c].z);
    tp.lambda1 = std::max(stats::sample_truncnorm_lower(rng_, q.lambda1, kSwitchLambdaSd, 0.0), 1e-300);
    tp.lambda2 = std::max(stats::sample_truncnorm_lower(rng_, q.lambda2, kSwitchLambdaSd, 0.0), 1e-300);
    tp.lambda3 = std::max(stats::sample_truncnorm_lower(rng_, q.lambda3, kSwitchLambdaSd, 0.0), 1e-300);
    tp.xi = std::max(stats::sample_truncnorm_lower(rng_, q.xi, 0.3 * q.xi + 0.01, 0.0), 1e-300);
    return tp;
  }

  /// Jumps between delta = 0 and delta = 1 while holding beta*eta + delta*Omega fixed in every year of the
  /// eta window: the trapezoid is moved out of (or into) eta. Without it a chain whose eta has absorbed an
  /// inflation cannot leave delta = 0.
  void switch_delta(std::size_t c) {
    if (!switch_centre_[c]) return;
    auto& cl = s_.countries[c];
    const auto& meta = ms_.countries[c];
    const auto& h = active_hyper(ms_, s_.global);
    const auto [rho, sigma] = active_phi(ms_, s_.global);
    const bool turn_on = cl.transition.delta == 0;
    const TransitionParams trapezoid = turn_on ? draw_switch_proposal(c) : cl.transition;
    CountryLatent prop = cl;
    double log_jac = 0.0;
    bool valid = true;
    for (std::size_t t = 0; t < prop.log_eta.size() && valid; ++t) {
      const double a = omega_at(trapezoid, meta.eta_start + static_cast<double>(t)) / cl.beta;
      if (a == 0.0) continue;
      const double e = turn_on ? std::exp(cl.log_eta[t]) - a : std::exp(cl.log_eta[t]) + a;
      if (!(e > 0.0)) valid = false;
      else prop.log_eta[t] = std::log(e);
      log_jac += cl.log_eta[t] - prop.log_eta[t];
    }
    double log_ratio = kNegInf;
    if (valid) {
      const double side = cl.logit_pi + transition_log_prior(trapezoid, h, meta.z, meta.x) -
                          switch_proposal_logpdf(c, trapezoid);
      log_ratio = (turn_on ? side : -side) + ar1_path_logpdf(prop.log_eta, rho, sigma) -
                  ar1_path_logpdf(cl.log_eta, rho, sigma) + log_jac;
      if (turn_on) prop.transition = trapezoid;
      prop.transition.delta = turn_on ? 1 : 0;
      scratch_ = log_theta_;
      recompute_country(c, prop, scratch_);
      log_ratio += country_ll(c, scratch_) - country_ll(c, log_theta_);
      if (std::isnan(log_ratio)) log_ratio = kNegInf;
    }
    finish(log_ratio, t_switch_, Group::Switch, [&] {
      cl = std::move(prop);
      for (auto i : p_.obs_by_country[c]) log_theta_[i] = scratch_[i];
      if (!turn_on) draw_transition_from_prior(c);
    });
  }

  void update_pi(std::size_t c) {
    auto& cl = s_.countries[c];
    const auto& h = s_.global.hyper;
    const int delta = cl.transition.delta;
    rw_scalar(cl.logit_pi, t_pi_[c], detail::identity(), Group::Pi,
              [&](double lp) { return indicator_log_prior(delta, lp, h.mu_pi, h.sigma_pi); });
  }

  void update_hyper() {
    auto& h = s_.global.hyper;
    std::vector<std::size_t> tc;
    for (std::size_t c = 0; c < ms_.countries.size(); ++c)
      if (ms_.countries[c].has_transition) tc.push_back(c);
    auto sum_tn = [&](auto value_of, double mu, double sd) {
      double lp = 0.0;
      for (auto c : tc) lp += stats::truncnorm_lower_logpdf(value_of(s_.countries[c].transition), mu, sd, 0.0);
      return lp;
    };
    auto xi_of = [](const TransitionParams& tp) { return tp.xi; };
    rw_scalar(h.mu_xi, t_hyper_[0], detail::bounded(0.0, kMuXiUpper), Group::Hyper,
              [&](double m) { return sum_tn(xi_of, m, h.sigma_xi); });
    rw_scalar(h.sigma_xi, t_hyper_[1], detail::bounded(0.0, kSigmaXiUpper), Group::Hyper,
              [&](double s) { return sum_tn(xi_of, h.mu_xi, s); });
    for (int k = 0; k < 3; ++k) {
      auto lam_of = [k](const TransitionParams& tp) { return k == 0 ? tp.lambda1 : (k == 1 ? tp.lambda2 : tp.lambda3); };
      rw_scalar(h.mu_lambda[k], t_hyper_[2 + k], detail::bounded(0.0, kMuLambdaUpper), Group::Hyper,
                [&](double m) { return sum_tn(lam_of, m, h.sigma_lambda[k]); });
      rw_scalar(h.sigma_lambda[k], t_hyper_[5 + k], detail::bounded(kSigmaLambdaLower, kSigmaLambdaUpper), Group::Hyper,
                [&](double s) { return sum_tn(lam_of, h.mu_lambda[k], s); });
    }
    rw_scalar(h.sigma_gamma, t_hyper_[8], detail::bounded(0.0, kSigmaGammaUpper), Group::Hyper, [&](double sg) {
      double lp = 0.0;
      for (auto c : tc)
        lp += stats::trunct_lower_logpdf(s_.countries[c].transition.gamma0, ms_.countries[c].x, sg, ms_.countries[c].z,
                                         kStartYearDf);
      return lp;
    });
    auto sum_pi = [&](double mu, double sd) {
      double lp = 0.0;
      for (auto c : tc) lp += stats::normal_logpdf(s_.countries[c].logit_pi, mu, sd);
      return lp;
    };
    rw_scalar(h.mu_pi, t_hyper_[9], detail::identity(), Group::Hyper,
              [&](double m) { return mu_pi_log_prior(m) + sum_pi(m, h.sigma_pi); });
    rw_scalar(h.sigma_pi, t_hyper_[10], detail::bounded(0.0, kSigmaPiUpper), Group::Hyper,
              [&](double s) { return sum_pi(h.mu_pi, s); });
  }

  const FitProblem& p_;
  const ModelStructure& ms_;
  McmcConfig cfg_;
  Rng rng_;
  ModelState s_;
  bool adapting_ = true;
  AcceptanceCounts counts_;

  std::vector<double> log_theta_, var_;
  std::vector<double> scratch_, scratch2_, scratch_small_;

  std::vector<detail::Tuner> t_beta_region_;
  detail::Tuner t_sigma_beta_, t_rho_, t_sigma_eps_;
  std::array<detail::Tuner, kSourceTypeCount> t_omega_;
  std::vector<detail::Tuner> t_beta_, t_shift_;
  std::vector<std::vector<detail::Tuner>> t_eta_;
  std::vector<detail::Tuner> t_gamma0_;
  std::vector<std::array<detail::Tuner, 3>> t_lambda_;
  std::vector<detail::Tuner> t_xi_, t_pi_, t_hyper_;
  detail::Tuner t_switch_;
  std::vector<std::optional<TransitionParams>> switch_centre_;
};

struct ChainRun {
  DrawMatrix draws;
  AcceptanceCounts acceptance;
};

inline ChainRun run_chain(const FitProblem& problem, const ParamLayout& layout, const McmcConfig& cfg, int chain) {
  ChainSampler sampler(problem, cfg, cfg.seed + static_cast<std::uint64_t>(chain));
  sampler.initialize();
  for (int it = 0; it < cfg.n_burnin; ++it) sampler.sweep(true);
  ChainRun run{DrawMatrix(layout.size()), {}};
  std::vector<double> row(layout.size());
  const int kept = cfg.kept_per_chain();
  run.draws.data().reserve(static_cast<std::size_t>(kept) * layout.size());
  for (int g = 0; g < kept; ++g) {
    for (int j = 0; j < cfg.thinning; ++j) sampler.sweep(false);
    sampler.check_support();
    sampler.write_draw(layout, row);
    run.draws.push_back(row);
  }
  run.acceptance = sampler.acceptance();
  return run;
}

struct FitResult {
  ModelStructure structure;
  ParamLayout layout;
  PosteriorChains chains;
  McmcConfig config;
  std::vector<AcceptanceCounts> acceptance;  // per chain
};

/// Runs all chains (in parallel up to cfg.threads); results are ordered by chain index.
inline FitResult fit(const FitProblem& problem, const McmcConfig& cfg) {
  cfg.validate();
  FitResult result;
  result.structure = problem.structure;
  result.layout = ParamLayout::build(problem.structure);
  result.config = cfg;
  result.chains.names = result.layout.names;
  std::vector<ChainRun> runs(static_cast<std::size_t>(cfg.n_chains));
  const int threads = std::max(1, cfg.threads);
  for (int start = 0; start < cfg.n_chains; start += threads) {
    std::vector<std::future<ChainRun>> pending;
    const int stop = std::min(cfg.n_chains, start + threads);
    if (threads == 1) {
      runs[static_cast<std::size_t>(start)] = run_chain(problem, result.layout, cfg, start);
      continue;
    }
    for (int k = start; k < stop; ++k)
      pending.push_back(std::async(std::launch::async, [&, k] { return run_chain(problem, result.layout, cfg, k); }));
    for (int k = start; k < stop; ++k) runs[static_cast<std::size_t>(k)] = pending[static_cast<std::size_t>(k - start)].get();
  }
  for (auto& r : runs) {
    result.chains.chains.push_back(std::move(r.draws));
    result.acceptance.push_back(r.acceptance);
  }
  return result;
}

}  // namespace srb
