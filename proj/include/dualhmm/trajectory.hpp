#pragma once

// Joint signal-trajectory sampling on top of the exact filter:
//  - for the square-root diffusion model, an exact backward pass through the
//    stored filtering/predictive laws (gamma-mixture backward kernel);
//  - for the Wright-Fisher model, an exact forward pass where each step is
//    tilted by the cost-to-go of the remaining data;
//  - a generic forward simulator used to produce synthetic data sets.

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "dualhmm/cir.hpp"
#include "dualhmm/common.hpp"
#include "dualhmm/engine.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/wf.hpp"

namespace dualhmm {

// One sampled signal path: states[i] is the signal at times[i] (scalar signals
// use a single coordinate). seed/stream record which RNG stream produced it.
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Draws x_i given x_{i+1} = x_next and the data up to time i. filter_i is the
// exact filtering law at time i (gamma mixture with rate filter_i.theta) and
// predictive_ip1 the one-step predictive law at time i+1, which normalizes the
// kernel. The joint mixture over (innovation count k, filter index m) is
// enumerated in increasing k with the m-slice marginalized by log-sum-exp, so
// the inverse-CDF draw touches only as many k-slices as the target mass needs;
// the slice masses provably sum to one, so the scan terminates.
inline double cir_backward_step(const CirModel& model, double x_next,
                                const WeightedMixture<double>& filter_i,
                                const WeightedMixture<double>& predictive_ip1, double dt,
                                Rng& rng) {
  require(dt > 0.0, "backward step requires a positive time gap");
  require(x_next > 0.0, "backward step requires a positive signal value");
  require(!filter_i.log_weights.empty(), "backward step requires a nonempty filtering law");

  const double half_delta = 0.5 * model.params().delta;
  const double vartheta = filter_i.theta;
  const double tp = model.theta_prime(dt);

  // Flatten the filtering mixture once: component shapes delta/2 + m.
  std::vector<double> shapes;
  std::vector<double> log_w;
  shapes.reserve(filter_i.log_weights.size());
  log_w.reserve(filter_i.log_weights.size());
  for (const auto& [m, lw] : filter_i.log_weights) {
    shapes.push_back(half_delta + static_cast<double>(m.norm()));
    log_w.push_back(lw);
  }

  const double keep_prob = vartheta / (vartheta + tp);
  if (tp == 0.0 || keep_prob == 1.0) {
    // The innovation rate underflowed (outright, or relative to the filter
    // rate): the endpoints have decoupled and the conditional law collapses
    // to the filtering law itself.
    const std::size_t pick = rng.categorical_log(log_w);
    return rng.gamma(shapes[pick], vartheta + tp);
  }

  const double rate_next = model.params().theta0() + tp;
  const double log_nu = mixture_log_pdf(model, predictive_ip1, x_next);
  require(std::isfinite(log_nu), "predictive density vanished at the conditioning point");

  constexpr long max_terms = 1000000;
  const double u = rng.uniform_pos();
  double cum = 0.0;
  std::vector<double> slice(log_w.size());
  for (long k = 0; k < max_terms; ++k) {
    const double log_outer =
        log_gamma_pdf(x_next, half_delta + static_cast<double>(k), rate_next) - log_nu;
    double log_slice = neg_inf;
    for (std::size_t i = 0; i < log_w.size(); ++i) {
      slice[i] = log_w[i] + log_negative_binomial_pmf(static_cast<int>(k), shapes[i], keep_prob);
      log_slice = log_add_exp(log_slice, slice[i]);
    }
    cum += std::exp(log_outer + log_slice);
    if (cum >= u) {
      const std::size_t pick = rng.categorical_log(slice);
      return rng.gamma(shapes[pick] + static_cast<double>(k), vartheta + tp);
    }
  }
  throw NumericError("backward kernel enumeration exceeded 1000000 terms (x_next=" +
                     std::to_string(x_next) + ", dt=" + std::to_string(dt) +
                     ", innovation_rate=" + std::to_string(tp) + ", filter_rate=" +
                     std::to_string(vartheta) + ", coverage=" + std::to_string(cum) +
                     ", target=" + std::to_string(u) + ")");
}

// Draws one signal path from the joint smoothing law encoded by a filter
// pass: the final time is drawn from the last filtering law, then the path is
// extended backwards one gap at a time.
inline Trajectory sample_joint_cir_single(const CirModel& model,
                                          const FilterOutput<double>& filter_out, Rng& rng) {
  const std::size_t n_times = filter_out.filtered.size();
  require(n_times >= 1, "joint sampling requires at least one collection time");

  Trajectory traj;
  traj.times.resize(n_times);
  traj.states.assign(n_times, std::vector<double>(1));
  double x = sample_from_mixture(model, filter_out.filtered.back(), rng);
  traj.times[n_times - 1] = filter_out.filtered.back().time;
  traj.states[n_times - 1][0] = x;
  for (std::size_t i = n_times - 1; i-- > 0;) {
    const auto& fil = filter_out.filtered[i];
    const double dt = filter_out.filtered[i + 1].time - fil.time;
    x = cir_backward_step(model, x, fil, filter_out.predictive[i + 1], dt, rng);
    traj.times[i] = fil.time;
    traj.states[i][0] = x;
  }
  return traj;
}

// Draws n_traj independent signal paths. Each trajectory owns its own RNG
// stream derived from (seed, trajectory id), so draws are reproducible and
// order-independent.
inline std::vector<Trajectory> sample_joint_cir(const CirModel& model,
                                                const FilterOutput<double>& filter_out,
                                                int n_traj, std::uint64_t seed) {
  require(n_traj >= 0, "trajectory count must be nonnegative");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_traj));
  for (int j = 0; j < n_traj; ++j) {
    Rng rng(seed, static_cast<std::uint64_t>(j) + 1);
    Trajectory traj = sample_joint_cir_single(model, filter_out, rng);
    traj.seed = seed;
    traj.stream = static_cast<std::uint64_t>(j) + 1;
    out.push_back(std::move(traj));
  }
  return out;
}

// Draws one signal path from the Wright-Fisher joint smoothing law: the first
// state comes from the time-0 smoothing mixture (time-0 posterior tilted by
// the cost-to-go of the later data), and each subsequent state from the exact
// forward kernel given the previous state, that time's observations, and the
// cost-to-go of the data strictly after it. ctgs must come from the backward
// recursion on the same series; a single-time series may pass an empty list.
inline Trajectory sample_joint_wf(const WfModel& model, const ObservationSeries& series,
                                  const std::vector<CostToGo<NoTheta>>& ctgs, Rng& rng) {
  series.validate();
  const std::size_t n = series.size();
  require(ctgs.size() == n || (n == 1 && ctgs.empty()),
          "need one cost-to-go entry per collection time");

  const auto fold_group = [&](std::size_t i) {
    GridIndex total = GridIndex::zeros(model.dim());
    for (const GridIndex& y : series.observations[i]) total = total.plus(y);
    return total;
  };

  Trajectory traj;
  traj.times = series.times;
  traj.states.resize(n);

  LogWeightMap prior;
  prior.insert(GridIndex::zeros(model.dim()), 0.0);
  auto [post0, lm0] = update_group(
      model, make_mixture(std::move(prior), model.theta_ref(), series.times[0]),
      series.observations[0]);
  (void)lm0;
  CostToGo<NoTheta> ctg0;
  if (ctgs.empty()) {
    LogWeightMap trivial;
    trivial.insert(GridIndex::zeros(model.dim()), 0.0);
    ctg0 = make_cost_to_go(std::move(trivial), model.theta_ref(), series.times[0]);
  } else {
    ctg0 = ctgs[0];
  }
  std::vector<double> x = sample_from_mixture(model, marginal_smooth(model, post0, ctg0), rng);
  traj.states[0] = x;

  for (std::size_t i = 1; i < n; ++i) {
    const double dt = series.times[i] - series.times[i - 1];
    x = model.forward_kernel_sample(x, fold_group(i), ctgs[i], dt, rng);
    traj.states[i] = x;
  }
  return traj;
}

// Convenience wrapper drawing n_traj independent Wright-Fisher paths, one RNG
// stream per trajectory.
inline std::vector<Trajectory> sample_joint_wf_many(const WfModel& model,
                                                    const ObservationSeries& series,
                                                    const std::vector<CostToGo<NoTheta>>& ctgs,
                                                    int n_traj, std::uint64_t seed) {
  require(n_traj >= 0, "trajectory count must be nonnegative");
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_traj));
  for (int j = 0; j < n_traj; ++j) {
    Rng rng(seed, static_cast<std::uint64_t>(j) + 1);
    Trajectory traj = sample_joint_wf(model, series, ctgs, rng);
    traj.seed = seed;
    traj.stream = static_cast<std::uint64_t>(j) + 1;
    out.push_back(std::move(traj));
  }
  return out;
}

// Simulates a latent path and observations at the given collection times:
// the signal starts at `start` (or a stationary draw), evolves by the exact
// transition law, and emits obs_counts[i] conditionally independent
// observations at time i (a single entry broadcasts to every time).
template <DualModel Model>
std::pair<ObservationSeries, Trajectory> simulate_series(
    const Model& model, const std::vector<double>& times, std::vector<int> obs_counts,
    Rng& rng, std::optional<typename Model::Point> start = std::nullopt) {
  require(!times.empty(), "simulation requires at least one collection time");
  for (std::size_t i = 1; i < times.size(); ++i) {
    require(times[i] > times[i - 1], "collection times must be strictly increasing");
  }
  require(!obs_counts.empty(), "need at least one observation count");
  if (obs_counts.size() == 1) obs_counts.assign(times.size(), obs_counts[0]);
  require(obs_counts.size() == times.size(),
          "observation counts must match the number of collection times");
  for (int c : obs_counts) require(c >= 0, "observation counts must be nonnegative");

  ObservationSeries series;
  series.times = times;
  series.observations.resize(times.size());
  Trajectory traj;
  traj.times = times;
  traj.states.resize(times.size());

  typename Model::Point x = start ? *start : model.sample_stationary(rng);
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (i > 0) x = model.exact_transition_sample(x, times[i] - times[i - 1], rng);
    if constexpr (std::is_same_v<typename Model::Point, double>) {
      traj.states[i] = {x};
    } else {
      traj.states[i] = x;
    }
    series.observations[i].reserve(static_cast<std::size_t>(obs_counts[i]));
    for (int c = 0; c < obs_counts[i]; ++c) {
      series.observations[i].push_back(model.simulate_emission(x, rng));
    }
  }
  series.validate();
  return {std::move(series), std::move(traj)};
}

}  // namespace dualhmm
