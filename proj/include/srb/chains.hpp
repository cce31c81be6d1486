#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "srb/model.hpp"

namespace srb {

/// Row-major matrix of draws (one row per draw, one column per parameter).
class DrawMatrix {
 public:
  DrawMatrix() = default;
  explicit DrawMatrix(std::size_t n_params) : n_params_(n_params) {}

  std::size_t n_params() const { return n_params_; }
  std::size_t size() const { return n_params_ == 0 ? 0 : data_.size() / n_params_; }
  bool empty() const { return size() == 0; }

  std::span<const double> row(std::size_t g) const { return {data_.data() + g * n_params_, n_params_}; }
  std::span<double> row(std::size_t g) { return {data_.data() + g * n_params_, n_params_}; }

  void push_back(std::span<const double> draw) { data_.insert(data_.end(), draw.begin(), draw.end()); }

  std::vector<double> column(std::size_t p) const {
    std::vector<double> out(size());
    for (std::size_t g = 0; g < out.size(); ++g) out[g] = data_[g * n_params_ + p];
    return out;
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  std::size_t n_params_ = 0;
  std::vector<double> data_;
};

struct PosteriorChains {
  std::vector<std::string> names;
  std::vector<DrawMatrix> chains;

  std::size_t n_params() const { return names.size(); }
  std::size_t n_chains() const { return chains.size(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }

  std::size_t index(std::string_view name) const {
    auto i = find(name);
    if (!i) throw Error(ErrorCode::InvalidArgument, "no parameter " + std::string(name));
    return *i;
  }

  /// All chains stacked in chain order.
  DrawMatrix pooled() const {
    DrawMatrix out(n_params());
    for (const auto& ch : chains) out.data().insert(out.data().end(), ch.data().begin(), ch.data().end());
    return out;
  }
};

struct CountrySlots {
  int beta = -1;
  int eta = -1;  // first eta year
  int gamma0 = -1;
  std::array<int, 3> lambda{-1, -1, -1};
  int xi = -1;
  int delta = -1;
  int pi = -1;
};

struct HyperSlots {
  int mu_xi = -1, sigma_xi = -1;
  std::array<int, 3> mu_lambda{-1, -1, -1};
  std::array<int, 3> sigma_lambda{-1, -1, -1};
  int sigma_gamma = -1;
  int mu_pi = -1, sigma_pi = -1;
};

/// Parameter naming and positions of a flattened draw. Values are stored on
/// their natural scale (beta and eta, not their logs).
struct ParamLayout {
  std::vector<std::string> names;
  std::vector<int> beta_region;
  int sigma_beta = -1, rho = -1, sigma_eps = -1;
  std::array<int, kSourceTypeCount> omega{-1, -1, -1, -1, -1};
  HyperSlots hyper;
  std::vector<CountrySlots> countries;

  static ParamLayout build(const ModelStructure& ms) {
    ParamLayout L;
    auto add = [&](std::string name) {
      L.names.push_back(std::move(name));
      return static_cast<int>(L.names.size() - 1);
    };
    const auto kind = ms.spec.kind;
    if (kind == ModelKind::M1) {
      for (const auto& r : ms.regions) L.beta_region.push_back(add("beta_region[" + r + "]"));
      L.sigma_beta = add("sigma_beta");
      L.rho = add("rho");
      L.sigma_eps = add("sigma_eps");
    }
    for (auto s : kAllSourceTypes)
      if (s != SourceType::CrvsSrs) L.omega[static_cast<std::size_t>(s)] = add("omega[" + std::string(to_string(s)) + "]");
    if (kind == ModelKind::M2 || kind == ModelKind::M2Joint) {
      auto& h = L.hyper;
      h.mu_xi = add("mu_xi");
      h.sigma_xi = add("sigma_xi");
      for (int k = 0; k < 3; ++k) h.mu_lambda[k] = add("mu_lambda" + std::to_string(k + 1));
      for (int k = 0; k < 3; ++k) h.sigma_lambda[k] = add("sigma_lambda" + std::to_string(k + 1));
      h.sigma_gamma = add("sigma_gamma");
      h.mu_pi = add("mu_pi");
      h.sigma_pi = add("sigma_pi");
    }
    for (const auto& meta : ms.countries) {
      CountrySlots cs;
      const std::string& c = meta.code;
      if (samples_beta(kind)) cs.beta = add("beta[" + c + "]");
      for (int y = meta.eta_start; y <= meta.eta_end; ++y) {
        const int i = add("eta[" + c + "][" + std::to_string(y) + "]");
        if (y == meta.eta_start) cs.eta = i;
      }
      if (meta.has_transition) {
        cs.gamma0 = add("gamma0[" + c + "]");
        for (int k = 0; k < 3; ++k) cs.lambda[k] = add("lambda" + std::to_string(k + 1) + "[" + c + "]");
        cs.xi = add("xi[" + c + "]");
        if (has_indicator(kind)) {
          cs.delta = add("delta[" + c + "]");
          cs.pi = add("pi[" + c + "]");
        }
      }
      L.countries.push_back(cs);
    }
    return L;
  }

  std::size_t size() const { return names.size(); }
};

/// Read access to one flattened draw.
class DrawView {
 public:
  DrawView(const ModelStructure& ms, const ParamLayout& layout, std::span<const double> draw)
      : ms_(ms), L_(layout), d_(draw) {}

  double beta(std::size_t c) const {
    const int slot = L_.countries[c].beta;
    return slot >= 0 ? d_[slot] : ms_.fixed_beta(c);
  }

  /// eta inside the fitted window.
  double eta(std::size_t c, int year) const {
    const auto& meta = ms_.countries[c];
    if (year < meta.eta_start || year > meta.eta_end)
      throw Error(ErrorCode::MissingYear, "eta outside fitted window for " + meta.code);
    return d_[static_cast<std::size_t>(L_.countries[c].eta + (year - meta.eta_start))];
  }

  double omega_sd(SourceType s) const {
    const int slot = L_.omega[static_cast<std::size_t>(s)];
    return slot >= 0 ? d_[slot] : 0.0;
  }

  ErrorModel error_model() const {
    ErrorModel em;
    for (auto s : kAllSourceTypes) em.omega[static_cast<std::size_t>(s)] = omega_sd(s);
    return em;
  }

  std::pair<double, double> phi() const {
    if (L_.rho >= 0) return {d_[L_.rho], d_[L_.sigma_eps]};
    return {*ms_.spec.fixed.rho, *ms_.spec.fixed.sigma_eps};
  }

  bool has_transition(std::size_t c) const { return L_.countries[c].gamma0 >= 0; }

  TransitionParams transition(std::size_t c) const {
    const auto& cs = L_.countries[c];
    TransitionParams tp;
    if (cs.gamma0 < 0) return tp;
    tp.gamma0 = d_[cs.gamma0];
    tp.lambda1 = d_[cs.lambda[0]];
    tp.lambda2 = d_[cs.lambda[1]];
    tp.lambda3 = d_[cs.lambda[2]];
    tp.xi = d_[cs.xi];
    tp.delta = cs.delta >= 0 ? static_cast<int>(d_[cs.delta]) : 1;
    return tp;
  }

  TransitionHyper hyper() const {
    const auto& h = L_.hyper;
    if (h.mu_xi < 0) {
      if (ms_.spec.fixed.zeta) return *ms_.spec.fixed.zeta;
      throw Error(ErrorCode::MissingHyperDraws, "fit has no transition hyperparameters");
    }
    TransitionHyper out;
    out.mu_xi = d_[h.mu_xi];
    out.sigma_xi = d_[h.sigma_xi];
    for (int k = 0; k < 3; ++k) {
      out.mu_lambda[k] = d_[h.mu_lambda[k]];
      out.sigma_lambda[k] = d_[h.sigma_lambda[k]];
    }
    out.sigma_gamma = d_[h.sigma_gamma];
    out.mu_pi = d_[h.mu_pi];
    out.sigma_pi = d_[h.sigma_pi];
    return out;
  }

  /// SRB in a fitted year.
  double theta(std::size_t c, int year) const {
    const double base = beta(c) * eta(c, year);
    if (!has_transition(c)) return base;
    const auto tp = transition(c);
    return theta_value(1.0, base, tp.delta, omega_at(tp, year));
  }

 private:
  const ModelStructure& ms_;
  const ParamLayout& L_;
  std::span<const double> d_;
};

}  // namespace srb
