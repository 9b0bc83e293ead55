#pragma once

// Monte Carlo baseline: a bootstrap particle filter with adaptive systematic
// resampling (any model exposing exact transition sampling and an emission
// density), a backward-reweighting particle smoother for the scalar
// square-root diffusion, and a gamma-kernel density estimator whose output is
// a closed-form gamma mixture.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dualhmm/cir.hpp"
#include "dualhmm/common.hpp"
#include "dualhmm/metrics.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/wf.hpp"

namespace dualhmm {

// Weighted particle snapshot at one collection time, taken after the weight
// update and before any resampling. `resampled` records whether a resampling
// pass was triggered right after this snapshot.
template <class Model>
struct ParticleCloud {
  double time = 0.0;
  std::vector<typename Model::Point> states;
  std::vector<double> log_weights;  // normalized: log-sum-exp equals zero
  double ess = 0.0;
  bool resampled = false;
};

template <class Model>
struct PfOutput {
  double log_likelihood = 0.0;
  std::vector<ParticleCloud<Model>> clouds;
  std::vector<std::size_t> resample_times;  // indices of triggering collection times
};

// Bootstrap particle filter: particles start from the stationary law, move by
// the exact transition sampler, and are weighted by the emission density of
// each observation in the time's group. Systematic resampling fires when the
// effective sample size drops below ess_frac * N. The log-likelihood
// accumulates the log of the weighted mean incremental weight, which is
// unbiased for the likelihood itself.
template <DualModel Model>
PfOutput<Model> bootstrap_pf(const Model& model, const ObservationSeries& series,
                             int n_particles, Rng& rng, double ess_frac = 0.5) {
  series.validate();
  require(n_particles >= 1, "particle filter needs at least one particle");
  require(ess_frac >= 0.0 && ess_frac <= 1.0, "ESS fraction must lie in [0, 1]");
  const std::size_t n = static_cast<std::size_t>(n_particles);
  const std::size_t n_times = series.size();

  std::vector<typename Model::Point> xs(n);
  for (auto& x : xs) x = model.sample_stationary(rng);
  std::vector<double> log_w(n, -std::log(static_cast<double>(n)));

  PfOutput<Model> out;
  out.clouds.reserve(n_times);
  std::vector<double> folded(n);
  for (std::size_t t = 0; t < n_times; ++t) {
    if (t > 0) {
      const double dt = series.times[t] - series.times[t - 1];
      for (auto& x : xs) x = model.exact_transition_sample(x, dt, rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double inc = 0.0;
      for (const GridIndex& y : series.observations[t]) {
        inc += model.log_emission_density(xs[i], y);
      }
      folded[i] = log_w[i] + inc;
    }
    const double log_z = log_sum_exp(folded);
    if (log_z == neg_inf) {
      throw NumericError("all particle weights vanished at collection time index " +
                         std::to_string(t) + " (time " + std::to_string(series.times[t]) + ")");
    }
    out.log_likelihood += log_z;
    for (std::size_t i = 0; i < n; ++i) log_w[i] = folded[i] - log_z;

    ParticleCloud<Model> cloud;
    cloud.time = series.times[t];
    cloud.states = xs;
    cloud.log_weights = log_w;
    cloud.ess = effective_sample_size(log_w);
    cloud.resampled = cloud.ess < ess_frac * static_cast<double>(n) && t + 1 < n_times;
    if (cloud.resampled) {
      const std::vector<std::size_t> idx = systematic_resample(log_w, n, rng);
      std::vector<typename Model::Point> next(n);
      for (std::size_t k = 0; k < n; ++k) next[k] = xs[idx[k]];
      xs = std::move(next);
      log_w.assign(n, -std::log(static_cast<double>(n)));
      out.resample_times.push_back(t);
    }
    out.clouds.push_back(std::move(cloud));
  }
  return out;
}

// Backward-reweighting particle smoother for scalar models with a closed-form
// transition density: runs the bootstrap filter forward, then replaces each
// cloud's weights with marginal smoothing weights
//   s_t(i) proportional to W_t(i) * sum_j s_{t+1}(j) f(x_{t+1,j} | x_{t,i}) / d_j,
//   d_j = sum_l W_t(l) f(x_{t+1,j} | x_{t,l}).
// Models whose signal is not scalar are rejected.
template <DualModel Model>
std::vector<ParticleCloud<Model>> ffbs_particle_smoother(const Model& model,
                                                         const ObservationSeries& series,
                                                         int n_particles, Rng& rng,
                                                         double ess_frac = 0.5) {
  constexpr bool scalar_with_density =
      std::is_same_v<typename Model::Point, double> &&
      requires(const Model& m, double a, double b, double dt) {
        { m.log_transition_density(a, b, dt) } -> std::convertible_to<double>;
      };
  if constexpr (!scalar_with_density) {
    throw ValidationError(
        "particle smoothing requires a scalar signal with a closed-form transition density");
  } else {
    PfOutput<Model> fwd = bootstrap_pf(model, series, n_particles, rng, ess_frac);
    std::vector<ParticleCloud<Model>>& clouds = fwd.clouds;
    const std::size_t n = static_cast<std::size_t>(n_particles);
    const std::size_t n_times = clouds.size();
    if (n_times <= 1) return std::move(clouds);

    std::vector<double> smooth_next = clouds.back().log_weights;
    for (std::size_t t = n_times - 1; t-- > 0;) {
      const double dt = series.times[t + 1] - series.times[t];
      const std::vector<double>& filt = clouds[t].log_weights;
      const std::vector<double>& x_now = clouds[t].states;
      const std::vector<double>& x_next = clouds[t + 1].states;

      std::vector<double> log_f(n * n);  // [j * n + i] = log f(x_next[j] | x_now[i])
      std::vector<double> denom(n, neg_inf);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
          const double lf = model.log_transition_density(x_now[i], x_next[j], dt);
          log_f[j * n + i] = lf;
          denom[j] = log_add_exp(denom[j], filt[i] + lf);
        }
      }
      std::vector<double> smooth(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
          acc = log_add_exp(acc, smooth_next[j] + log_f[j * n + i] - denom[j]);
        }
        smooth[i] = filt[i] + acc;
      }
      const double z = log_sum_exp(smooth);
      require(z != neg_inf, "smoothing weights vanished");
      for (double& s : smooth) s -= z;
      clouds[t].log_weights = smooth;
      clouds[t].ess = effective_sample_size(smooth);
      smooth_next = clouds[t].log_weights;
    }
    return std::move(clouds);
  }
}

// Gamma-kernel density estimate of positive samples: an equal-weight gamma
// mixture with per-sample shape x_i/b + 1 and scale b (rate 1/b). When no
// bandwidth is given, the plug-in rule b = sd * n^{-2/5} is used.
inline GammaMixture gamma_kde(const std::vector<double>& samples,
                              std::optional<double> bandwidth = std::nullopt) {
  require(!samples.empty(), "density estimation needs at least one sample");
  for (double x : samples) require(x > 0.0, "gamma kernels need strictly positive samples");

  double b;
  if (bandwidth) {
    b = *bandwidth;
    require(b > 0.0, "bandwidth must be positive");
  } else {
    const double n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    var = samples.size() > 1 ? var / (n - 1.0) : mean * mean;
    const double sd = std::sqrt(std::max(var, 1e-300));
    b = sd * std::pow(n, -0.4);
  }

  GammaMixture mix;
  mix.shapes.reserve(samples.size());
  mix.rates.reserve(samples.size());
  mix.weights.assign(samples.size(), 1.0 / static_cast<double>(samples.size()));
  for (double x : samples) {
    mix.shapes.push_back(x / b + 1.0);
    mix.rates.push_back(1.0 / b);
  }
  return mix;
}

// Closed-form views of exact filtering/smoothing laws for metric evaluation.
inline GammaMixture to_gamma_mixture(const CirModel& model, const WeightedMixture<double>& mix) {
  GammaMixture out;
  const double half_delta = 0.5 * model.params().delta;
  for (const auto& [m, lw] : mix.log_weights) {
    out.shapes.push_back(half_delta + static_cast<double>(m.norm()));
    out.rates.push_back(mix.theta);
    out.weights.push_back(std::exp(lw));
  }
  double total = 0.0;
  for (double w : out.weights) total += w;
  for (double& w : out.weights) w /= total;
  return out;
}

inline DirichletMixture to_dirichlet_mixture(const WfModel& model,
                                             const WeightedMixture<NoTheta>& mix) {
  DirichletMixture out;
  const auto& alpha = model.params().alpha;
  for (const auto& [m, lw] : mix.log_weights) {
    std::vector<double> a(alpha.size());
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      a[j] = alpha[j] + static_cast<double>(m[static_cast<int>(j)]);
    }
    out.alphas.push_back(std::move(a));
    out.weights.push_back(std::exp(lw));
  }
  double total = 0.0;
  for (double w : out.weights) total += w;
  for (double& w : out.weights) w /= total;
  return out;
}

// Weighted particle cloud reduced to a plain sample by systematic resampling,
// for density estimation. Deterministic given the RNG stream.
template <class Model>
std::vector<double> cloud_to_sample(const ParticleCloud<Model>& cloud, Rng& rng) {
  static_assert(std::is_same_v<typename Model::Point, double>,
                "sample extraction is defined for scalar signals");
  const std::vector<std::size_t> idx =
      systematic_resample(cloud.log_weights, cloud.states.size(), rng);
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = cloud.states[idx[k]];
  return out;
}

}  // namespace dualhmm
