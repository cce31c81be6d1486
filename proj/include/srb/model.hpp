#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srb/data.hpp"
#include "srb/likelihood.hpp"
#include "srb/stats.hpp"

namespace srb {

// Prior supports.
inline constexpr double kBetaRegionLower = 1.0;
inline constexpr double kBetaRegionUpper = 1.1;
inline constexpr double kSigmaBetaUpper = 0.05;
inline constexpr double kSigmaEpsUpper = 0.05;
inline constexpr double kRhoCap = 0.999;
inline constexpr double kMuXiUpper = 2.0;
inline constexpr double kSigmaXiUpper = 2.0;
inline constexpr double kMuLambdaUpper = 40.0;
inline constexpr double kSigmaLambdaLower = 1.0;
inline constexpr double kSigmaLambdaUpper = 10.0;
inline constexpr double kSigmaGammaUpper = 10.0;
inline constexpr double kSigmaPiUpper = 2.0;
inline constexpr double kStartYearDf = 3.0;

/// One sex ratio transition: rise over lambda1 years from gamma0, plateau at xi for
/// lambda2 years, fall back to zero over lambda3 years.
struct TransitionParams {
  double gamma0 = 1990.0;
  double lambda1 = 10.0;
  double lambda2 = 10.0;
  double lambda3 = 10.0;
  double xi = 0.0;
  int delta = 0;

  double gamma1() const { return gamma0 + lambda1; }
  double gamma2() const { return gamma1() + lambda2; }
  double gamma3() const { return gamma2() + lambda3; }
  bool operator==(const TransitionParams&) const = default;
};

/// Trapezoid inflation at time t (delta is ignored). Boundaries take the
/// continuous value; a zero-length rise or fall is a step that includes the plateau.
inline double omega_at(const TransitionParams& p, double t) {
  const double g0 = p.gamma0;
  const double g1 = p.gamma1();
  const double g2 = p.gamma2();
  const double g3 = p.gamma3();
  if (t < g0 || t > g3) return 0.0;
  if (t < g1) return p.xi * (t - g0) / p.lambda1;
  if (t <= g2) return p.xi;
  return p.xi * (g3 - t) / p.lambda3;
}

inline double theta_value(double beta, double eta, int delta, double omega) {
  return beta * eta + (delta ? omega : 0.0);
}

enum class ModelKind { M1, M2, M3, M4, M2Joint };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::M1: return "M1";
    case ModelKind::M2: return "M2";
    case ModelKind::M3: return "M3";
    case ModelKind::M4: return "M4";
    case ModelKind::M2Joint: return "M2Joint";
  }
  return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4, ModelKind::M2Joint}) {
    std::string name(to_string(k));
    std::string lower = name;
    for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == name || s == lower) return k;
  }
  return std::nullopt;
}

inline bool samples_beta(ModelKind k) { return k == ModelKind::M1 || k == ModelKind::M2Joint; }
inline bool has_transitions(ModelKind k) { return k == ModelKind::M2 || k == ModelKind::M4 || k == ModelKind::M2Joint; }
inline bool has_indicator(ModelKind k) { return k == ModelKind::M2 || k == ModelKind::M2Joint; }

/// Hierarchical parameters of the transition model. The pi pair is unused when
/// the hyperparameters are fixed (M4).
struct TransitionHyper {
  double mu_xi = 0.05;
  double sigma_xi = 0.05;
  std::array<double, 3> mu_lambda{10.0, 10.0, 10.0};
  std::array<double, 3> sigma_lambda{5.0, 5.0, 5.0};
  double sigma_gamma = 5.0;
  double mu_pi = 0.0;
  double sigma_pi = 1.0;
};

/// Point estimates carried between fits.
struct FixedInputs {
  std::map<std::string, double> beta;         // national baseline medians, by country
  std::map<std::string, double> beta_region;  // regional baseline medians, by region code
  std::optional<double> sigma_beta;
  std::optional<double> rho;
  std::optional<double> sigma_eps;
  std::optional<TransitionHyper> zeta;
};

struct ModelSpec {
  ModelKind kind = ModelKind::M1;
  FixedInputs fixed;
};

/// Checks fixed inputs needed by `spec.kind` for the given countries/regions.
inline void validate_spec(const ModelSpec& spec, const std::vector<std::string>& countries,
                          const std::vector<std::string>& regions_of_countries) {
  if (spec.kind == ModelKind::M1) return;
  auto need = [](bool ok, std::string what) {
    if (!ok) throw Error(ErrorCode::MissingFixedInput, what);
  };
  need(spec.fixed.rho.has_value(), "rho from M1");
  need(spec.fixed.sigma_eps.has_value(), "sigma_eps from M1");
  if (spec.kind == ModelKind::M2Joint) {
    need(spec.fixed.sigma_beta.has_value(), "sigma_beta from M1");
    for (const auto& r : regions_of_countries)
      need(spec.fixed.beta_region.count(r) > 0, "regional baseline for " + r);
  } else {
    for (const auto& c : countries) need(spec.fixed.beta.count(c) > 0, "baseline for " + c);
  }
  if (spec.kind == ModelKind::M4) need(spec.fixed.zeta.has_value(), "transition hyperparameters from M2");
}

// ---------------------------------------------------------------------------
// Map-based parameter containers.

struct BaselineParams {
  std::map<std::string, double> beta_region;
  std::map<std::string, double> beta;
  double sigma_beta = 0.0;
};

struct FluctuationParams {
  double rho = 0.0;
  double sigma_eps = 0.0;
  std::map<std::string, std::map<int, double>> eta;  // country -> year -> eta
};

using ThetaMap = std::map<std::pair<std::string, int>, double>;

/// SRB for every (country, year) in `f.eta` under the model equation of `spec.kind`.
inline ThetaMap theta_assemble(const ModelSpec& spec, const BaselineParams& b, const FluctuationParams& f,
                               const std::map<std::string, TransitionParams>* transitions = nullptr) {
  ThetaMap out;
  for (const auto& [country, path] : f.eta) {
    double beta = 0.0;
    if (samples_beta(spec.kind)) {
      auto it = b.beta.find(country);
      if (it == b.beta.end()) throw Error(ErrorCode::MissingFixedInput, "baseline for " + country);
      beta = it->second;
    } else {
      auto it = spec.fixed.beta.find(country);
      if (it == spec.fixed.beta.end()) throw Error(ErrorCode::MissingFixedInput, "baseline median for " + country);
      beta = it->second;
    }
    const TransitionParams* tp = nullptr;
    if (has_transitions(spec.kind) && transitions) {
      auto it = transitions->find(country);
      if (it != transitions->end()) tp = &it->second;
    }
    if (has_transitions(spec.kind) && !tp) throw Error(ErrorCode::MissingFixedInput, "transition for " + country);
    const int delta = !tp ? 0 : (spec.kind == ModelKind::M4 ? 1 : tp->delta);
    for (const auto& [year, eta] : path) {
      const double om = tp ? omega_at(*tp, year) : 0.0;
      out[{country, year}] = theta_value(beta, eta, delta, om);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// AR(1) fluctuations on the log scale.

/// Stationary sd of log eta, sigma_eps / sqrt(1 - rho^2).
inline double ar1_initial_log_sd(double rho, double sigma_eps) {
  if (!(rho >= 0.0 && rho < 1.0)) throw Error(ErrorCode::RhoOutOfRange, "rho must lie in [0, 1)");
  if (rho > kRhoCap) {
    warn("rho capped at 0.999 for the stationary variance");
    rho = kRhoCap;
  }
  return sigma_eps / std::sqrt(1.0 - rho * rho);
}

/// Forward simulation of eta for `horizon` years after `eta_last`.
inline std::vector<double> eta_project(double eta_last, double rho, double sigma_eps, int horizon, Rng& rng) {
  if (horizon < 1) throw Error(ErrorCode::InvalidArgument, "horizon must be at least 1");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(horizon));
  double u = std::log(eta_last);
  for (int k = 0; k < horizon; ++k) {
    u = rho * u + sigma_eps * stats::std_normal(rng);
    out.push_back(std::exp(u));
  }
  return out;
}

/// Density of a log-eta path starting at its stationary distribution.
inline double ar1_path_logpdf(std::span<const double> log_eta, double rho, double sigma_eps) {
  if (log_eta.empty()) return 0.0;
  if (!(rho >= 0.0 && rho < 1.0) || !(sigma_eps > 0.0)) return kNegInf;
  const double s0 = sigma_eps / std::sqrt(1.0 - rho * rho);
  double lp = stats::normal_logpdf(log_eta[0], 0.0, s0);
  for (std::size_t t = 1; t < log_eta.size(); ++t) lp += stats::normal_logpdf(log_eta[t], rho * log_eta[t - 1], sigma_eps);
  return lp;
}

// ---------------------------------------------------------------------------
// Index-based model state shared by the sampler, the prior and the projections.

struct CountryMeta {
  std::string code;
  std::size_t region = 0;
  bool has_transition = false;
  int z = kRiskFreeLastYear;  // start-year truncation
  int x = kRiskFreeLastYear;  // start-year location
  int eta_start = kGridStart;
  int eta_end = kGridStart;
};

struct ModelStructure {
  ModelSpec spec;
  std::vector<std::string> regions;
  std::vector<CountryMeta> countries;

  double fixed_beta(std::size_t c) const { return spec.fixed.beta.at(countries[c].code); }
  double fixed_beta_region(std::size_t c) const { return spec.fixed.beta_region.at(regions[countries[c].region]); }
};

struct CountryLatent {
  double beta = 1.05;
  std::vector<double> log_eta;  // eta_start .. eta_end
  TransitionParams transition;
  double logit_pi = 0.0;
};

struct GlobalParams {
  std::vector<double> beta_region;
  double sigma_beta = 0.01;
  double rho = 0.5;
  double sigma_eps = 0.01;
  ErrorModel errors;
  TransitionHyper hyper;
};

struct ModelState {
  GlobalParams global;
  std::vector<CountryLatent> countries;
};

/// Fluctuation hyperparameters in force for a state: sampled for M1, fixed otherwise.
inline std::pair<double, double> active_phi(const ModelStructure& ms, const GlobalParams& g) {
  if (ms.spec.kind == ModelKind::M1) return {g.rho, g.sigma_eps};
  return {*ms.spec.fixed.rho, *ms.spec.fixed.sigma_eps};
}

inline const TransitionHyper& active_hyper(const ModelStructure& ms, const GlobalParams& g) {
  return ms.spec.kind == ModelKind::M4 ? *ms.spec.fixed.zeta : g.hyper;
}

inline double country_beta(const ModelStructure& ms, const ModelState& s, std::size_t c) {
  return samples_beta(ms.spec.kind) ? s.countries[c].beta : ms.fixed_beta(c);
}

inline int effective_delta(const ModelStructure& ms, const CountryLatent& cl, bool has_transition) {
  if (!has_transition) return 0;
  return ms.spec.kind == ModelKind::M4 ? 1 : cl.transition.delta;
}

/// Transition-level terms: truncated normals for xi and the phase lengths,
/// truncated t3 for the start year.
inline double transition_log_prior(const TransitionParams& tp, const TransitionHyper& h, int z, int x) {
  double lp = stats::truncnorm_lower_logpdf(tp.xi, h.mu_xi, h.sigma_xi, 0.0);
  const std::array<double, 3> lambdas{tp.lambda1, tp.lambda2, tp.lambda3};
  for (std::size_t k = 0; k < 3; ++k)
    lp += stats::truncnorm_lower_logpdf(lambdas[k], h.mu_lambda[k], h.sigma_lambda[k], 0.0);
  lp += stats::trunct_lower_logpdf(tp.gamma0, x, h.sigma_gamma, z, kStartYearDf);
  return lp;
}

/// Bernoulli indicator plus its logit-normal probability.
inline double indicator_log_prior(int delta, double logit_pi, double mu_pi, double sigma_pi) {
  const double lp_delta = delta ? -stats::log1pexp(-logit_pi) : -stats::log1pexp(logit_pi);
  return lp_delta + stats::normal_logpdf(logit_pi, mu_pi, sigma_pi);
}

/// Logistic density: inverse-logit(mu_pi) is uniform on (0, 1).
inline double mu_pi_log_prior(double mu_pi) { return -mu_pi - 2.0 * stats::log1pexp(-mu_pi); }

inline double hyper_log_prior(const TransitionHyper& h, bool with_indicator) {
  double lp = stats::uniform_logpdf(h.mu_xi, 0.0, kMuXiUpper) + stats::uniform_logpdf(h.sigma_xi, 0.0, kSigmaXiUpper);
  for (std::size_t k = 0; k < 3; ++k) {
    lp += stats::uniform_logpdf(h.mu_lambda[k], 0.0, kMuLambdaUpper);
    lp += stats::uniform_logpdf(h.sigma_lambda[k], kSigmaLambdaLower, kSigmaLambdaUpper);
  }
  lp += stats::uniform_logpdf(h.sigma_gamma, 0.0, kSigmaGammaUpper);
  if (with_indicator) lp += mu_pi_log_prior(h.mu_pi) + stats::uniform_logpdf(h.sigma_pi, 0.0, kSigmaPiUpper);
  return lp;
}

inline double error_model_log_prior(const ErrorModel& em) {
  if (em[SourceType::CrvsSrs] != 0.0) return kNegInf;
  double lp = 0.0;
  for (auto s : kAllSourceTypes)
    if (s != SourceType::CrvsSrs) lp += stats::uniform_logpdf(em[s], 0.0, kOmegaUpper);
  return lp;
}

/// Joint log prior of every parameter active for the model kind; -inf outside support.
/// Baselines enter through log(beta_c) for M1 and on the natural scale for M2Joint;
/// fluctuations enter through log(eta).
inline double log_prior(const ModelStructure& ms, const ModelState& s) {
  const auto kind = ms.spec.kind;
  const auto& g = s.global;
  double lp = error_model_log_prior(g.errors);

  if (kind == ModelKind::M1) {
    for (double br : g.beta_region) lp += stats::uniform_logpdf(br, kBetaRegionLower, kBetaRegionUpper);
    lp += stats::uniform_logpdf(g.sigma_beta, 0.0, kSigmaBetaUpper);
    lp += stats::uniform_logpdf(g.rho, 0.0, 1.0);
    lp += stats::uniform_logpdf(g.sigma_eps, 0.0, kSigmaEpsUpper);
    if (!std::isfinite(lp)) return kNegInf;
    for (std::size_t c = 0; c < ms.countries.size(); ++c) {
      const double beta = s.countries[c].beta;
      if (!(beta > 0)) return kNegInf;
      lp += stats::normal_logpdf(std::log(beta), std::log(g.beta_region[ms.countries[c].region]), g.sigma_beta);
    }
  }
  if (kind == ModelKind::M2Joint) {
    for (std::size_t c = 0; c < ms.countries.size(); ++c)
      lp += stats::normal_logpdf(s.countries[c].beta, ms.fixed_beta_region(c), *ms.spec.fixed.sigma_beta);
  }

  const auto [rho, sigma_eps] = active_phi(ms, g);
  for (const auto& cl : s.countries) lp += ar1_path_logpdf(cl.log_eta, rho, sigma_eps);

  if (has_transitions(kind)) {
    const auto& h = active_hyper(ms, g);
    if (kind != ModelKind::M4) lp += hyper_log_prior(h, true);
    if (!std::isfinite(lp)) return kNegInf;
    for (std::size_t c = 0; c < ms.countries.size(); ++c) {
      const auto& meta = ms.countries[c];
      if (!meta.has_transition) continue;
      const auto& cl = s.countries[c];
      lp += transition_log_prior(cl.transition, h, meta.z, meta.x);
      if (has_indicator(kind)) lp += indicator_log_prior(cl.transition.delta, cl.logit_pi, h.mu_pi, h.sigma_pi);
    }
  }
  return std::isnan(lp) ? kNegInf : lp;
}

}  // namespace srb
