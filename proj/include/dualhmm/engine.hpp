// Model-generic exact inference on the dual finite-mixture representation:
// conjugate observation updates, death-process prediction, filtering with the
// likelihood decomposition, backward cost-to-go coefficients, and marginal
// smoothing, each with optional pruning of small mixture components.
#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/grid.hpp"
#include "dualhmm/model.hpp"

namespace dualhmm {

// ---------------------------------------------------------------------------
// Pruning
// ---------------------------------------------------------------------------
struct PruneRule {
  enum class Kind { Off, FixedNumber, FixedMass, FixedThreshold };

  Kind kind = Kind::Off;
  int number = 0;          // FixedNumber: components kept
  double mass = 1.0;       // FixedMass: retained weight fraction
  double threshold = 0.0;  // FixedThreshold: weight cutoff
  bool relative = false;   // FixedThreshold: cutoff relative to the largest weight

  static PruneRule off() { return {}; }

  static PruneRule fixed_number(int n) {
    require(n >= 1, "pruning must keep at least one component");
    PruneRule r;
    r.kind = Kind::FixedNumber;
    r.number = n;
    return r;
  }

  static PruneRule fixed_mass(double rho) {
    require(rho > 0.0 && rho <= 1.0, "retained mass fraction must lie in (0, 1]");
    PruneRule r;
    r.kind = Kind::FixedMass;
    r.mass = rho;
    return r;
  }

  static PruneRule fixed_threshold(double eps, bool relative) {
    require(eps > 0.0, "pruning threshold must be positive");
    PruneRule r;
    r.kind = Kind::FixedThreshold;
    r.threshold = eps;
    r.relative = relative;
    return r;
  }
};

struct PruneResult {
  LogWeightMap kept;
  double discarded_log_mass = neg_inf;  // log of the removed total, input scale
};

// Drops small-weight entries according to `rule`. The result is NOT
// renormalized (cost-to-go coefficients must stay on their absolute scale);
// callers on the filtering path renormalize when anything was discarded.  A
// rule that would discard everything keeps the single largest entry instead.
inline PruneResult prune_weights(const LogWeightMap& weights, const PruneRule& rule) {
  require(weights.size() > 0, "cannot prune an empty weight map");
  if (rule.kind == PruneRule::Kind::Off ||
      (rule.kind == PruneRule::Kind::FixedMass && rule.mass >= 1.0) ||
      (rule.kind == PruneRule::Kind::FixedNumber &&
       rule.number >= static_cast<int>(weights.size()))) {
    return {weights, neg_inf};
  }

  std::vector<std::pair<GridIndex, double>> entries(weights.begin(), weights.end());
  // Heaviest first; ties broken lexicographically by index.
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::size_t keep = entries.size();
  switch (rule.kind) {
    case PruneRule::Kind::FixedNumber:
      keep = static_cast<std::size_t>(rule.number);
      break;
    case PruneRule::Kind::FixedMass: {
      const double log_total = weights.log_total();
      double cum = neg_inf;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        cum = log_add_exp(cum, entries[i].second);
        if (std::exp(cum - log_total) >= rule.mass) {
          keep = i + 1;
          break;
        }
      }
      break;
    }
    case PruneRule::Kind::FixedThreshold: {
      const double cutoff =
          std::log(rule.threshold) + (rule.relative ? entries.front().second : 0.0);
      keep = entries.size();
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].second < cutoff) {
          keep = i;
          break;
        }
      }
      break;
    }
    case PruneRule::Kind::Off:
      break;
  }

  if (keep == 0) {
    std::cerr << "prune warning: rule would discard every component; keeping the largest"
              << std::endl;
    keep = 1;
  }
  if (keep >= entries.size()) return {weights, neg_inf};

  PruneResult out;
  double discarded = neg_inf;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i < keep) {
      out.kept.insert(entries[i].first, entries[i].second);
    } else {
      discarded = log_add_exp(discarded, entries[i].second);
    }
  }
  out.discarded_log_mass = discarded;
  return out;
}

// ---------------------------------------------------------------------------
// One-step operators
// ---------------------------------------------------------------------------

// Conjugate Bayes update of a mixture by a single observation vector.  Returns
// the posterior mixture and the log marginal (predictive) probability of y.
template <DualModel Model>
std::pair<WeightedMixture<typename Model::Theta>, double> update(
    const Model& model, const WeightedMixture<typename Model::Theta>& prior,
    const GridIndex& y) {
  require(!prior.log_weights.empty(), "cannot update an empty mixture");
  LogWeightMap posterior;
  for (const auto& [n, lw] : prior.log_weights) {
    // t(y, .) is injective (a shift by y), so plain inserts cannot collide.
    posterior.insert(model.update_t(y, n), lw + model.log_marginal(n, prior.theta, y));
  }
  const double log_marginal = posterior.log_total();
  require(std::isfinite(log_marginal), "observation has zero predictive probability");
  posterior.scale_log(-log_marginal);
  posterior.mark_normalized();
  return {make_mixture(std::move(posterior), model.update_T(y, prior.theta), prior.time),
          log_marginal};
}

// Propagates a posterior mixture over an inter-observation gap: weights move
// by the dual death process, the parameter by the deterministic flow.
template <DualModel Model>
WeightedMixture<typename Model::Theta> predict(
    const Model& model, const WeightedMixture<typename Model::Theta>& posterior,
    double delta_t) {
  require(!posterior.log_weights.empty(), "cannot predict from an empty mixture");
  require(delta_t > 0.0, "prediction horizon must be positive");
  LogWeightMap predicted;
  for (const auto& [n, lw] : posterior.log_weights) {
    const TransitionRow row = model.death_row(n, delta_t, posterior.theta);
    for (const auto& [m, lp] : row.probs) {
      predicted.accumulate(m, lw + lp);
    }
  }
  return make_mixture(std::move(predicted),
                      model.theta_flow(delta_t, posterior.theta),
                      posterior.time + delta_t);
}

// ---------------------------------------------------------------------------
// Forward filtering
// ---------------------------------------------------------------------------
template <class Theta>
struct FilterOutput {
  // One entry per collection time i: the predictive mixture before seeing the
  // time-i data (entry 0 is the stationary prior), the filtering mixture after
  // folding all of that time's observations (and pruning), the log marginal of
  // the time-i data given the past, and the removed log mass (-inf when none).
  std::vector<WeightedMixture<Theta>> predictive;
  std::vector<WeightedMixture<Theta>> filtered;
  std::vector<double> log_marginals;
  std::vector<double> discarded_log_mass;
  double log_likelihood = 0.0;
};

// Folds every observation in a same-time group through conjugate updates,
// returning the joint log marginal of the group given the incoming mixture.
template <DualModel Model>
std::pair<WeightedMixture<typename Model::Theta>, double> update_group(
    const Model& model, WeightedMixture<typename Model::Theta> mixture,
    const std::vector<GridIndex>& group) {
  double log_marginal = 0.0;
  for (const GridIndex& y : group) {
    auto [next, lm] = update(model, mixture, y);
    mixture = std::move(next);
    log_marginal += lm;
  }
  return {std::move(mixture), log_marginal};
}

template <DualModel Model>
FilterOutput<typename Model::Theta> run_filter(const Model& model,
                                               const ObservationSeries& series,
                                               const PruneRule& prune = PruneRule::off()) {
  using Theta = typename Model::Theta;
  series.validate();
  require(series.dim() == model.dim(), "observation dimension must match the model");

  FilterOutput<Theta> out;
  const std::size_t n_times = series.size();
  out.predictive.reserve(n_times);
  out.filtered.reserve(n_times);
  out.log_marginals.reserve(n_times);
  out.discarded_log_mass.reserve(n_times);

  LogWeightMap prior;
  prior.insert(GridIndex::zeros(model.dim()), 0.0);
  WeightedMixture<Theta> current =
      make_mixture(std::move(prior), model.theta_ref(), series.times.front());

  for (std::size_t i = 0; i < n_times; ++i) {
    out.predictive.push_back(current);
    auto [posterior, lm] = update_group(model, std::move(current), series.observations[i]);
    out.log_marginals.push_back(lm);
    out.log_likelihood += lm;

    PruneResult pruned = prune_weights(posterior.log_weights, prune);
    out.discarded_log_mass.push_back(pruned.discarded_log_mass);
    if (pruned.discarded_log_mass > neg_inf) {
      posterior = make_mixture(std::move(pruned.kept), posterior.theta, posterior.time);
    }
    out.filtered.push_back(posterior);

    if (i + 1 < n_times) {
      current = predict(model, out.filtered.back(), series.times[i + 1] - series.times[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward cost-to-go coefficients
// ---------------------------------------------------------------------------

// ctg[i] holds coefficients c_m with p(future data | x_i) = sum_m c_m h(x_i, m, theta_i):
// entry i conditions on all observations strictly after time index i, so the
// final entry is the constant 1 (empty future).  Pruning, when enabled, is
// applied after every backward step without renormalizing.
template <DualModel Model>
std::vector<CostToGo<typename Model::Theta>> cost_to_go_recursion(
    const Model& model, const ObservationSeries& series,
    const PruneRule& prune = PruneRule::off()) {
  using Theta = typename Model::Theta;
  series.validate();
  require(series.dim() == model.dim(), "observation dimension must match the model");
  require(series.size() >= 2, "backward recursion needs at least two collection times");

  const std::size_t n_times = series.size();
  std::vector<CostToGo<Theta>> out(n_times);

  LogWeightMap trivial;
  trivial.insert(GridIndex::zeros(model.dim()), 0.0);
  out[n_times - 1] =
      make_cost_to_go(std::move(trivial), model.theta_ref(), series.times.back());

  for (std::size_t i = n_times - 1; i-- > 0;) {
    const CostToGo<Theta>& next = out[i + 1];
    const double dt = series.times[i + 1] - series.times[i];

    // Fold the time-(i+1) observation group: the parameter chain is shared by
    // every coefficient; each index n gains the group's conjugate marginal
    // along its own index chain before the death-row pushforward.
    Theta theta = next.theta;
    std::vector<Theta> theta_chain{theta};
    for (const GridIndex& y : series.observations[i + 1]) {
      theta = model.update_T(y, theta);
      theta_chain.push_back(theta);
    }

    LogWeightMap step;
    for (const auto& [n, lc] : next.log_coeffs) {
      GridIndex idx = n;
      double log_coeff = lc;
      std::size_t stage = 0;
      for (const GridIndex& y : series.observations[i + 1]) {
        log_coeff += model.log_marginal(idx, theta_chain[stage], y);
        idx = model.update_t(y, idx);
        ++stage;
      }
      if (log_coeff == neg_inf) continue;
      const TransitionRow row = model.death_row(idx, dt, theta);
      for (const auto& [m, lp] : row.probs) {
        step.accumulate(m, log_coeff + lp);
      }
    }
    require(step.size() > 0, "backward recursion produced an empty coefficient set");

    PruneResult pruned = prune_weights(step, prune);
    out[i] = make_cost_to_go(std::move(pruned.kept), model.theta_flow(dt, theta),
                             series.times[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Marginal smoothing
// ---------------------------------------------------------------------------

// Combines the filtering mixture at time i with the cost-to-go for the data
// after time i into the smoothing marginal p(x_i | all data): a product
// mixture re-expanded through the duality-function product rule, with
// colliding component indices merged.
template <DualModel Model>
WeightedMixture<typename Model::Theta> marginal_smooth(
    const Model& model, const WeightedMixture<typename Model::Theta>& filtered,
    const CostToGo<typename Model::Theta>& ctg) {
  require(std::abs(filtered.time - ctg.time) <= 1e-9 * (1.0 + std::abs(filtered.time)),
          "filter and cost-to-go timestamps must match");
  require(!filtered.log_weights.empty() && !ctg.log_coeffs.empty(),
          "smoothing inputs must be nonempty");

  LogWeightMap smoothed;
  for (const auto& [m, lc] : ctg.log_coeffs) {
    for (const auto& [n, lw] : filtered.log_weights) {
      const double lwt =
          lc + lw + model.log_hstab_C(m, n, ctg.theta, filtered.theta);
      smoothed.accumulate(model.hstab_d(m, n), lwt);
    }
  }
  return make_mixture(std::move(smoothed), model.hstab_e(ctg.theta, filtered.theta),
                      filtered.time);
}

template <DualModel Model>
std::vector<WeightedMixture<typename Model::Theta>> run_smoother(
    const Model& model, const ObservationSeries& series,
    const PruneRule& prune = PruneRule::off()) {
  using Theta = typename Model::Theta;
  const FilterOutput<Theta> filter = run_filter(model, series, prune);

  // Cost-to-go coefficients are unnormalized, so absolute weight cutoffs are
  // meaningless there; thresholds switch to their relative form.
  PruneRule backward = prune;
  if (backward.kind == PruneRule::Kind::FixedThreshold) backward.relative = true;

  std::vector<WeightedMixture<Theta>> smoothed;
  smoothed.reserve(series.size());
  if (series.size() == 1) {
    smoothed.push_back(filter.filtered.front());
    return smoothed;
  }
  const auto ctgs = cost_to_go_recursion(model, series, backward);
  for (std::size_t i = 0; i < series.size(); ++i) {
    smoothed.push_back(marginal_smooth(model, filter.filtered[i], ctgs[i]));
  }
  return smoothed;
}

}  // namespace dualhmm
