#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "srb/chains.hpp"
#include "srb/stats.hpp"

namespace srb {

inline constexpr std::size_t kMinDrawsForPsrf = 10;

/// Potential scale reduction factor from per-chain samples of one scalar.
inline double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::TooFewChains, "PSRF needs at least two chains");
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < kMinDrawsForPsrf) throw Error(ErrorCode::InvalidArgument, "PSRF needs at least 10 draws per chain");
  const double m = static_cast<double>(chains.size());
  const double nd = static_cast<double>(n);
  std::vector<double> means;
  double w = 0.0;
  for (const auto& c : chains) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += c[i];
    mean /= nd;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (c[i] - mean) * (c[i] - mean);
    w += ss / (nd - 1.0);
    means.push_back(mean);
  }
  w /= m;
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= nd / (m - 1.0);
  if (!(w > 0.0)) throw Error(ErrorCode::ZeroVariance, "within-chain variance is zero");
  const double var_plus = (nd - 1.0) / nd * w + b / nd;
  return std::sqrt(var_plus / w);
}

inline double gelman_rubin(const PosteriorChains& pc, std::size_t param) {
  std::vector<std::vector<double>> per_chain;
  for (const auto& ch : pc.chains) per_chain.push_back(ch.column(param));
  return gelman_rubin(per_chain);
}

inline double gelman_rubin(const PosteriorChains& pc, std::string_view param) {
  return gelman_rubin(pc, pc.index(param));
}

/// PSRF for each parameter that varies; constant parameters (fixed indicators) are skipped.
inline std::map<std::string, double> psrf_table(const PosteriorChains& pc) {
  std::map<std::string, double> out;
  if (pc.n_chains() < 2) return out;
  for (std::size_t p = 0; p < pc.n_params(); ++p) {
    try {
      out[pc.names[p]] = gelman_rubin(pc, p);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroVariance) throw;
    }
  }
  return out;
}

inline std::map<std::string, stats::Summary> point_estimates(const DrawMatrix& draws,
                                                             const std::vector<std::string>& names) {
  if (draws.empty()) throw Error(ErrorCode::InvalidArgument, "no draws");
  std::map<std::string, stats::Summary> out;
  for (std::size_t p = 0; p < names.size(); ++p) out[names[p]] = stats::summarize(draws.column(p));
  return out;
}

inline std::map<std::string, stats::Summary> point_estimates(const PosteriorChains& pc) {
  return point_estimates(pc.pooled(), pc.names);
}

}  // namespace srb
