#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "srb/chains.hpp"
#include "srb/likelihood.hpp"
#include "srb/stats.hpp"

namespace srb {

struct LooValue {
  double log_density = 0.0;
  bool unstable = false;  // one draw carries more than half of the importance weight
};

/// Importance-sampling LOO predictive density from the per-draw log likelihoods of one
/// observation: log of [ (1/G) sum_g 1/p(y|theta_g) ]^-1.
inline LooValue loo_log_density(std::span<const double> log_lik) {
  if (log_lik.empty()) throw Error(ErrorCode::InvalidArgument, "no draws");
  std::vector<double> neg(log_lik.size());
  for (std::size_t g = 0; g < log_lik.size(); ++g) neg[g] = -log_lik[g];
  const double lse = stats::log_sum_exp(neg);
  LooValue v;
  v.log_density = -(lse - std::log(static_cast<double>(log_lik.size())));
  if (!std::isfinite(lse)) {
    v.unstable = true;
    if (std::isnan(v.log_density)) v.log_density = kNegInf;
    return v;
  }
  if (log_lik.size() >= 2) {
    const double max_w = std::exp(*std::max_element(neg.begin(), neg.end()) - lse);
    v.unstable = max_w > 0.5;
  }
  return v;
}

/// Per-draw, per-observation log likelihood of a fit ([draw][obs]).
inline std::vector<std::vector<double>> pointwise_log_lik(const ModelStructure& ms, const ParamLayout& layout,
                                                          const DrawMatrix& draws, const ObservationSet& data,
                                                          double variance_floor = kDefaultVarianceFloor) {
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < ms.countries.size(); ++c) index[ms.countries[c].code] = c;
  std::vector<std::size_t> obs_country;
  for (const auto& o : data) {
    auto it = index.find(o.country);
    if (it == index.end()) throw Error(ErrorCode::MissingTheta, "no parameters for " + o.country);
    obs_country.push_back(it->second);
  }
  std::vector<std::vector<double>> out(draws.size(), std::vector<double>(data.size()));
  for (std::size_t g = 0; g < draws.size(); ++g) {
    DrawView view(ms, layout, draws.row(g));
    ErrorModel em = view.error_model();
    em.variance_floor = variance_floor;
    for (std::size_t i = 0; i < data.size(); ++i)
      out[g][i] = obs_log_density(data[i], view.theta(obs_country[i], data[i].grid_year()), em);
  }
  return out;
}

struct ChainLoo {
  std::vector<double> log_density;  // per observation
  std::vector<bool> unstable;
  std::size_t n_unstable() const { return static_cast<std::size_t>(std::count(unstable.begin(), unstable.end(), true)); }
};

inline ChainLoo loo_pointwise(const std::vector<std::vector<double>>& log_lik) {
  ChainLoo out;
  if (log_lik.empty()) return out;
  const std::size_t n = log_lik.front().size();
  std::vector<double> col(log_lik.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < log_lik.size(); ++g) col[g] = log_lik[g][i];
    auto v = loo_log_density(col);
    out.log_density.push_back(v.log_density);
    out.unstable.push_back(v.unstable);
  }
  return out;
}

inline ChainLoo loo_pointwise(const ModelStructure& ms, const ParamLayout& layout, const DrawMatrix& chain,
                              const ObservationSet& data, double variance_floor = kDefaultVarianceFloor) {
  return loo_pointwise(pointwise_log_lik(ms, layout, chain, data, variance_floor));
}

struct StackingOptions {
  double step = 0.1;
  int max_iter = 5000;
  double tol = 1e-10;
};

struct StackingResult {
  std::vector<double> weights;
  std::vector<double> objective;  // mean log score after each accepted iteration, starting at uniform weights
  int iterations = 0;
};

/// Simplex weights maximizing the mean over observations of log sum_k w_k f_k(y_i | y_-i),
/// by exponentiated-gradient ascent from uniform weights. A step that would lower the
/// objective is halved until it does not.
inline StackingResult stack_weights(const std::vector<std::vector<double>>& log_f, const StackingOptions& opt = {}) {
  const std::size_t k = log_f.size();
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "no chains to stack");
  const std::size_t n = log_f.front().size();
  StackingResult res;
  res.weights.assign(k, 1.0 / static_cast<double>(k));
  if (k == 1) {
    res.weights[0] = 1.0;
    return res;
  }
  // rescale each observation by its best chain; ratios and gradients are unchanged
  std::vector<std::vector<double>> f(n, std::vector<double>(k));
  std::vector<double> shift(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = kNegInf;
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, log_f[j][i]);
    if (!std::isfinite(mx))
      throw Error(ErrorCode::DegenerateObjective, "every chain gives zero density to observation " + std::to_string(i));
    shift[i] = mx;
    for (std::size_t j = 0; j < k; ++j) f[i][j] = std::exp(log_f[j][i] - mx);
  }
  auto objective = [&](const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double mix = 0.0;
      for (std::size_t j = 0; j < k; ++j) mix += w[j] * f[i][j];
      s += std::log(mix) + shift[i];
    }
    return s / static_cast<double>(n);
  };
  double current = objective(res.weights);
  res.objective.push_back(current);
  std::vector<double> grad(k), proposal(k);
  for (int it = 0; it < opt.max_iter; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double mix = 0.0;
      for (std::size_t j = 0; j < k; ++j) mix += res.weights[j] * f[i][j];
      for (std::size_t j = 0; j < k; ++j) grad[j] += f[i][j] / mix;
    }
    for (auto& gj : grad) gj /= static_cast<double>(n);
    const double gmax = *std::max_element(grad.begin(), grad.end());
    double step = opt.step;
    double next = current;
    bool moved = false;
    while (step > 1e-12) {
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        proposal[j] = res.weights[j] * std::exp(step * (grad[j] - gmax));
        total += proposal[j];
      }
      for (auto& pj : proposal) pj /= total;
      next = objective(proposal);
      if (next >= current) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    res.iterations = it + 1;
    if (!moved) break;
    const double gain = next - current;
    res.weights = proposal;
    current = next;
    res.objective.push_back(current);
    if (gain < opt.tol) break;
  }
  return res;
}

struct StackedPosterior {
  std::vector<double> weights;
  DrawMatrix draws;
  std::vector<int> source_chain;  // chain of each resampled draw
};

/// Resamples `n_draws` draws: a chain by weight, then a uniform draw within it.
inline StackedPosterior resample_stacked(const PosteriorChains& pc, const std::vector<double>& weights,
                                         std::size_t n_draws, Rng& rng) {
  if (weights.size() != pc.n_chains()) throw Error(ErrorCode::InvalidArgument, "one weight per chain required");
  StackedPosterior out;
  out.weights = weights;
  out.draws = DrawMatrix(pc.n_params());
  std::vector<double> cumulative;
  double acc = 0.0;
  for (double w : weights) cumulative.push_back(acc += w);
  for (std::size_t g = 0; g < n_draws; ++g) {
    const double u = stats::uniform01(rng) * acc;
    std::size_t k = static_cast<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    k = std::min(k, pc.n_chains() - 1);
    const auto& ch = pc.chains[k];
    out.draws.push_back(ch.row(stats::uniform_index(rng, ch.size())));
    out.source_chain.push_back(static_cast<int>(k));
  }
  return out;
}

/// Largest pairwise difference between chain medians over all parameters whose name
/// starts with `prefix` (the start years by default).
inline double max_chain_median_spread(const PosteriorChains& pc, std::string_view prefix = "gamma0[") {
  double spread = 0.0;
  for (std::size_t p = 0; p < pc.n_params(); ++p) {
    if (pc.names[p].rfind(prefix, 0) != 0) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& ch : pc.chains) {
      const double m = stats::median(ch.column(p));
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    spread = std::max(spread, hi - lo);
  }
  return spread;
}

inline constexpr double kMultimodalityYears = 5.0;

enum class StackMode { Auto, Force, Off };

inline StackMode parse_stack_mode(std::string_view s) {
  if (s == "auto") return StackMode::Auto;
  if (s == "force") return StackMode::Force;
  if (s == "off") return StackMode::Off;
  throw Error(ErrorCode::InvalidArgument, "stack mode must be auto, force or off");
}

inline bool should_stack(const PosteriorChains& pc, StackMode mode) {
  if (pc.n_chains() < 2 || mode == StackMode::Off) return false;
  if (mode == StackMode::Force) return true;
  return max_chain_median_spread(pc) > kMultimodalityYears;
}

struct StackReport {
  StackingResult weights;
  std::vector<std::size_t> unstable_per_chain;
  StackedPosterior posterior;
};

/// LOO per chain, stacking weights, and the resampled draw set (same size as the pooled chains).
inline StackReport stack_chains(const ModelStructure& ms, const ParamLayout& layout, const PosteriorChains& pc,
                                const ObservationSet& data, Rng& rng, double variance_floor = kDefaultVarianceFloor) {
  StackReport rep;
  std::vector<std::vector<double>> log_f;
  for (const auto& ch : pc.chains) {
    auto loo = loo_pointwise(ms, layout, ch, data, variance_floor);
    rep.unstable_per_chain.push_back(loo.n_unstable());
    log_f.push_back(std::move(loo.log_density));
  }
  rep.weights = stack_weights(log_f);
  std::size_t total = 0;
  for (const auto& ch : pc.chains) total += ch.size();
  rep.posterior = resample_stacked(pc, rep.weights.weights, total, rng);
  return rep;
}

}  // namespace srb
