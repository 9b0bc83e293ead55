// Shared model-facing types: weighted mixture representations of filtering
// and smoothing laws, cost-to-go coefficient bundles, observation containers,
// and generic helpers (means, quantiles, a Monte Carlo duality check) that
// work for any model exposing the dual-process interface.
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/death.hpp"
#include "dualhmm/grid.hpp"
#include "dualhmm/rng.hpp"

namespace dualhmm {

// Parameter slot for models whose dual process has no mutable parameter
// component (the deterministic flow and observation update are identities).
struct NoTheta {
  friend bool operator==(const NoTheta&, const NoTheta&) { return true; }
};

// Finite mixture sum_m w_m g(x, m, theta): normalized log weights over a
// finite grid support plus the shared dual parameter, tagged with the
// observation time it refers to.
template <class Theta>
struct WeightedMixture {
  IndexSet indices;
  LogWeightMap log_weights;
  Theta theta{};
  double time = 0.0;

  void validate() const {
    require(indices == log_weights.support(), "mixture indices must match weight support");
    require(std::abs(log_weights.log_total()) < 1e-9, "mixture weights must be normalized");
  }
};

template <class Theta>
WeightedMixture<Theta> make_mixture(LogWeightMap log_weights, Theta theta, double time) {
  log_weights.normalize();
  IndexSet support = log_weights.support();
  return WeightedMixture<Theta>{std::move(support), std::move(log_weights), std::move(theta), time};
}

// Backward (cost-to-go) coefficients: unnormalized nonnegative weights over a
// finite grid support plus the backward-propagated dual parameter for the
// time slot the coefficients condition on.
template <class Theta>
struct CostToGo {
  IndexSet indices;
  LogWeightMap log_coeffs;
  Theta theta{};
  double time = 0.0;

  void validate() const {
    require(indices == log_coeffs.support(), "cost-to-go indices must match coefficient support");
  }
};

template <class Theta>
CostToGo<Theta> make_cost_to_go(LogWeightMap log_coeffs, Theta theta, double time) {
  IndexSet support = log_coeffs.support();
  return CostToGo<Theta>{std::move(support), std::move(log_coeffs), std::move(theta), time};
}

// Count observations grouped by collection time; several observation vectors
// may share one time (multiplicity is handled by repeated conjugate updates).
struct ObservationSeries {
  std::vector<double> times;
  std::vector<std::vector<GridIndex>> observations;

  std::size_t size() const { return times.size(); }

  int dim() const {
    for (const auto& group : observations) {
      if (!group.empty()) return group.front().dim();
    }
    throw ValidationError("observation series has no observations");
  }

  void validate() const {
    require(times.size() == observations.size(),
            "observation series times and observation groups must align");
    require(!times.empty(), "observation series must be nonempty");
    const int k = dim();
    for (std::size_t i = 0; i < times.size(); ++i) {
      require(std::isfinite(times[i]), "observation times must be finite");
      if (i > 0) {
        require(times[i] > times[i - 1], "observation times must be strictly increasing");
      }
      require(!observations[i].empty(),
              "each collection time must carry at least one observation");
      for (const auto& y : observations[i]) {
        require(y.dim() == k, "all observations must share one dimension");
      }
    }
  }
};

// Interface every dual-process model must implement. `Point` is the signal
// state space element, `Theta` the deterministically evolving dual parameter.
template <class M>
concept DualModel = requires(const M& model, const typename M::Point& x, const GridIndex& m,
                             const typename M::Theta& theta, const GridIndex& y, double dt,
                             Rng& rng) {
  { model.dim() } -> std::convertible_to<int>;
  { model.theta_ref() } -> std::convertible_to<typename M::Theta>;
  { model.log_pi_density(x) } -> std::convertible_to<double>;
  { model.log_h(x, m, theta) } -> std::convertible_to<double>;
  { model.update_t(y, m) } -> std::convertible_to<GridIndex>;
  { model.update_T(y, theta) } -> std::convertible_to<typename M::Theta>;
  { model.theta_flow(dt, theta) } -> std::convertible_to<typename M::Theta>;
  { model.log_marginal(m, theta, y) } -> std::convertible_to<double>;
  { model.death_row(m, dt, theta) } -> std::convertible_to<TransitionRow>;
  { model.hstab_d(m, m) } -> std::convertible_to<GridIndex>;
  { model.hstab_e(theta, theta) } -> std::convertible_to<typename M::Theta>;
  { model.log_hstab_C(m, m, theta, theta) } -> std::convertible_to<double>;
  { model.sample_component(m, theta, rng) } -> std::convertible_to<typename M::Point>;
  { model.log_component_density(x, m, theta) } -> std::convertible_to<double>;
  { model.component_mean(m, theta) } -> std::convertible_to<std::vector<double>>;
  { model.exact_transition_sample(x, dt, rng) } -> std::convertible_to<typename M::Point>;
  { model.sample_stationary(rng) } -> std::convertible_to<typename M::Point>;
  { model.simulate_emission(x, rng) } -> std::convertible_to<GridIndex>;
  { model.log_emission_density(x, y) } -> std::convertible_to<double>;
};

// Mean of the mixture: weighted average of closed-form component means.
template <class M>
std::vector<double> mixture_mean(const M& model, const WeightedMixture<typename M::Theta>& mix) {
  std::vector<double> mean(static_cast<std::size_t>(model.dim()), 0.0);
  for (const auto& [index, log_w] : mix.log_weights) {
    const double w = std::exp(log_w);
    const std::vector<double> cm = model.component_mean(index, mix.theta);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += w * cm[j];
  }
  return mean;
}

// Log density of the mixture at a signal point.
template <class M>
double mixture_log_pdf(const M& model, const WeightedMixture<typename M::Theta>& mix,
                       const typename M::Point& x) {
  double acc = neg_inf;
  for (const auto& [index, log_w] : mix.log_weights) {
    acc = log_add_exp(acc, log_w + model.log_component_density(x, index, mix.theta));
  }
  return acc;
}

// Draws a signal point from the mixture: pick a component, then sample it.
template <class M>
typename M::Point sample_from_mixture(const M& model,
                                      const WeightedMixture<typename M::Theta>& mix, Rng& rng) {
  std::vector<double> log_w;
  std::vector<const GridIndex*> idx;
  log_w.reserve(mix.log_weights.size());
  idx.reserve(mix.log_weights.size());
  for (const auto& [index, lw] : mix.log_weights) {
    idx.push_back(&index);
    log_w.push_back(lw);
  }
  const std::size_t pick = rng.categorical_log(log_w);
  return model.sample_component(*idx[pick], mix.theta, rng);
}

// Mixture CDF at a scalar point, for one-dimensional signal spaces.
template <class M>
double mixture_cdf_1d(const M& model, const WeightedMixture<typename M::Theta>& mix, double x) {
  require(model.dim() == 1, "mixture_cdf_1d requires a scalar signal space");
  double cdf = 0.0;
  for (const auto& [index, log_w] : mix.log_weights) {
    cdf += std::exp(log_w) * model.component_cdf(x, index, mix.theta);
  }
  return cdf;
}

// Solves mixture CDF = q by bracketing + bisection to 1e-8 absolute.
template <class M>
double mixture_quantile_1d(const M& model, const WeightedMixture<typename M::Theta>& mix,
                           double q, double tol = 1e-8) {
  require(model.dim() == 1, "mixture_quantile_1d requires a scalar signal space");
  require(q > 0.0 && q < 1.0, "quantile level must lie in (0, 1)");
  double lo = 0.0;
  double hi = 1.0;
  int guard = 0;
  while (mixture_cdf_1d(model, mix, hi) < q) {
    hi *= 2.0;
    require(++guard < 2000, "quantile bracket failed to enclose the target level");
  }
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (mixture_cdf_1d(model, mix, mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

struct DualityReport {
  double mc_estimate = 0.0;
  double dual_sum = 0.0;
  double std_error = 0.0;
  double z_score = 0.0;
  std::size_t n_paths = 0;
};

// Checks E^x[h(X_t, m, theta)] against the closed dual representation
// sum_{n <= m} p_{m,n}(t; theta) h(x, n, theta_flow(t, theta)) by Monte Carlo
// over exact signal transitions, reporting the standardized discrepancy.
template <class M>
DualityReport verify_duality(const M& model, const typename M::Point& x, const GridIndex& m,
                             const typename M::Theta& theta, double t, std::size_t n_paths,
                             Rng& rng) {
  require(n_paths >= 2, "duality check needs at least two paths");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < n_paths; ++i) {
    const typename M::Point xt = model.exact_transition_sample(x, t, rng);
    const double value = std::exp(model.log_h(xt, m, theta));
    sum += value;
    sum_sq += value * value;
  }
  const double n = static_cast<double>(n_paths);
  const double mc = sum / n;
  const double var = std::max(sum_sq / n - mc * mc, 0.0) * n / (n - 1.0);
  const double se = std::sqrt(var / n);

  const typename M::Theta theta_t = model.theta_flow(t, theta);
  const TransitionRow row = model.death_row(m, t, theta);
  double dual = 0.0;
  for (const auto& [index, log_p] : row.probs) {
    dual += std::exp(log_p + model.log_h(x, index, theta_t));
  }
  const double z = se > 0.0 ? (mc - dual) / se : 0.0;
  return DualityReport{mc, dual, se, z, n_paths};
}

}  // namespace dualhmm
