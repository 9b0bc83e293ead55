#pragma once

// Parameter inference by Markov chain Monte Carlo: Gaussian random-walk
// Metropolis-Hastings on log-parameters against the (optionally pruned) exact
// marginal likelihood, a Metropolis-within-Gibbs sampler alternating joint
// trajectory draws with parameter updates for the square-root diffusion, and
// split-R-hat / autocorrelation diagnostics.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dualhmm/cir.hpp"
#include "dualhmm/common.hpp"
#include "dualhmm/engine.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/trajectory.hpp"
#include "dualhmm/wf.hpp"

namespace dualhmm {

// Prior over one positive parameter: exponential with a given rate, or a
// normal(loc, scale^2) truncated to the positive axis ("half-normal" with a
// shifted mode). Densities are normalized.
struct PriorSpec {
  enum class Kind { Exponential, HalfNormal };
  Kind kind = Kind::Exponential;
  double rate = 1.0;   // exponential only
  double loc = 0.0;    // truncated normal only
  double scale = 1.0;  // truncated normal only

  static PriorSpec exponential(double rate) {
    require(rate > 0.0, "exponential prior rate must be positive");
    PriorSpec p;
    p.kind = Kind::Exponential;
    p.rate = rate;
    return p;
  }
  static PriorSpec half_normal(double loc, double scale) {
    require(scale > 0.0, "truncated-normal prior scale must be positive");
    PriorSpec p;
    p.kind = Kind::HalfNormal;
    p.loc = loc;
    p.scale = scale;
    return p;
  }

  double log_pdf(double x) const {
    if (x <= 0.0) return neg_inf;
    if (kind == Kind::Exponential) return std::log(rate) - rate * x;
    const double z = (x - loc) / scale;
    const double log_tail_mass = std::log(0.5 * std::erfc(-loc / (scale * std::sqrt(2.0))));
    return -0.5 * z * z - std::log(scale) - 0.5 * std::log(2.0 * M_PI) - log_tail_mass;
  }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (kind == Kind::Exponential) return -std::expm1(-rate * x);
    const auto phi = [](double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); };
    const double lo = phi(-loc / scale);
    return (phi((x - loc) / scale) - lo) / (1.0 - lo);
  }
};

struct ChainConfig {
  int n_iter = 5000;   // recorded iterations per chain (after the pilot)
  int n_chains = 3;
  int pilot = 2000;    // pilot iterations used to adapt the proposal covariance
  bool adapt = true;   // freeze 2.38^2/d * pilot covariance after the pilot
  std::vector<double> init;            // natural-scale initial parameter values
  std::vector<double> proposal_scale;  // initial per-parameter random-walk sd (log scale)
  double init_jitter_sd = 0.2;         // per-chain log-scale jitter of init
  std::vector<PriorSpec> priors;
  PruneRule prune = PruneRule::fixed_number(10);
  std::uint64_t seed = 1;

  void validate() const {
    require(n_iter >= 0, "iteration count must be nonnegative");
    require(n_chains >= 1, "need at least one chain");
    require(pilot >= 0, "pilot length must be nonnegative");
    require(!init.empty(), "initial parameter vector must be nonempty");
    for (double v : init) require(v > 0.0, "initial parameters must be positive");
    require(proposal_scale.size() == init.size(),
            "proposal scales must match the parameter dimension");
    for (double s : proposal_scale) require(s > 0.0, "proposal scales must be positive");
    require(priors.size() == init.size(), "need one prior per parameter");
    require(init_jitter_sd >= 0.0, "init jitter must be nonnegative");
  }
};

struct ChainOutput {
  std::vector<std::vector<std::vector<double>>> draws;  // [chain][iter][param], natural scale
  std::vector<std::vector<double>> log_post;            // [chain][iter]
  double acceptance_rate = 0.0;                         // pooled over recorded iterations
  std::vector<double> acceptance_per_chain;
  std::vector<double> rhat;               // per parameter (split form); empty if < 2 chains
  std::vector<std::vector<double>> acf;   // [param][lag], lag 0..max_lag, chain-averaged
  int rejected_failures = 0;              // proposals rejected because the target threw
};

struct Diagnostics {
  std::vector<double> rhat;
  std::vector<std::vector<double>> acf;
};

namespace detail {

// Lower-triangular Cholesky factor of a small SPD matrix (row-major), with a
// ridge fallback for near-singular inputs.
inline std::vector<double> cholesky(std::vector<double> a, std::size_t d) {
  for (int attempt = 0; attempt < 40; ++attempt) {
    std::vector<double> l(d * d, 0.0);
    bool ok = true;
    for (std::size_t i = 0; i < d && ok; ++i) {
      for (std::size_t j = 0; j <= i && ok; ++j) {
        double s = a[i * d + j];
        for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
        if (i == j) {
          if (s <= 0.0) {
            ok = false;
          } else {
            l[i * d + i] = std::sqrt(s);
          }
        } else {
          l[i * d + j] = s / l[j * d + j];
        }
      }
    }
    if (ok) return l;
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += std::abs(a[i * d + i]);
    const double ridge = std::max(trace, 1e-12) * 1e-8 * std::pow(4.0, attempt);
    for (std::size_t i = 0; i < d; ++i) a[i * d + i] += ridge;
  }
  throw NumericError("proposal covariance could not be factorized");
}

inline std::vector<double> diagonal_chol(const std::vector<double>& scales) {
  const std::size_t d = scales.size();
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) l[i * d + i] = scales[i];
  return l;
}

// Empirical covariance of rows, scaled by the standard 2.38^2/d factor.
inline std::vector<double> adapted_covariance(const std::vector<std::vector<double>>& rows,
                                              std::size_t d) {
  const std::size_t n = rows.size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
      }
    }
  }
  const double denom = static_cast<double>(n > 1 ? n - 1 : 1);
  const double factor = 2.38 * 2.38 / static_cast<double>(d);
  for (double& c : cov) c = c / denom * factor;
  return cov;
}

struct MhChainState {
  std::vector<double> u;  // log-parameters
  double log_target_u = neg_inf;
};

// One Gaussian random-walk Metropolis step on the log scale. target_u must
// already include the log-parameter Jacobian. Returns whether it accepted.
template <class TargetU>
bool mh_step(MhChainState& state, const TargetU& target_u, const std::vector<double>& chol,
             Rng& rng) {
  const std::size_t d = state.u.size();
  std::vector<double> z(d);
  for (double& v : z) v = rng.normal(0.0, 1.0);
  std::vector<double> proposal(d);
  for (std::size_t i = 0; i < d; ++i) {
    double step = 0.0;
    for (std::size_t j = 0; j <= i; ++j) step += chol[i * d + j] * z[j];
    proposal[i] = state.u[i] + step;
  }
  const double lt = target_u(proposal);
  if (std::log(rng.uniform_pos()) < lt - state.log_target_u) {
    state.u = std::move(proposal);
    state.log_target_u = lt;
    return true;
  }
  return false;
}

}  // namespace detail

// Split potential-scale-reduction factor and chain-averaged normalized
// autocorrelation, per parameter. R-hat needs at least two chains and
// nonconstant draws.
inline Diagnostics diagnostics(const std::vector<std::vector<std::vector<double>>>& draws,
                               int max_lag = 50) {
  require(!draws.empty() && !draws[0].empty(), "diagnostics need at least one nonempty chain");
  const std::size_t n_chains = draws.size();
  const std::size_t n = draws[0].size();
  const std::size_t d = draws[0][0].size();
  for (const auto& chain : draws) {
    require(chain.size() == n, "chains must have equal lengths");
  }

  Diagnostics out;

  require(n_chains >= 2, "the scale-reduction factor needs at least two chains");
  require(n >= 4, "the scale-reduction factor needs at least four draws per chain");
  const std::size_t half = n / 2;
  for (std::size_t p = 0; p < d; ++p) {
    std::vector<double> seq_mean, seq_var;
    for (std::size_t c = 0; c < n_chains; ++c) {
      for (int piece = 0; piece < 2; ++piece) {
        const std::size_t begin = piece == 0 ? 0 : n - half;
        double mean = 0.0;
        for (std::size_t i = 0; i < half; ++i) mean += draws[c][begin + i][p];
        mean /= static_cast<double>(half);
        double var = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
          const double dd = draws[c][begin + i][p] - mean;
          var += dd * dd;
        }
        var /= static_cast<double>(half - 1);
        seq_mean.push_back(mean);
        seq_var.push_back(var);
      }
    }
    const double m = static_cast<double>(seq_mean.size());
    double w = 0.0, grand = 0.0;
    for (std::size_t s = 0; s < seq_mean.size(); ++s) {
      w += seq_var[s];
      grand += seq_mean[s];
    }
    w /= m;
    grand /= m;
    double b = 0.0;
    for (double mu : seq_mean) b += (mu - grand) * (mu - grand);
    b *= static_cast<double>(half) / (m - 1.0);
    require(w > 0.0, "scale reduction is undefined for constant chains");
    const double hn = static_cast<double>(half);
    const double var_plus = (hn - 1.0) / hn * w + b / hn;
    out.rhat.push_back(std::sqrt(var_plus / w));
  }

  const int lag_cap = std::min<int>(max_lag, static_cast<int>(n) - 1);
  out.acf.assign(d, std::vector<double>(static_cast<std::size_t>(lag_cap) + 1, 0.0));
  for (std::size_t p = 0; p < d; ++p) {
    for (std::size_t c = 0; c < n_chains; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += draws[c][i][p];
      mean /= static_cast<double>(n);
      double gamma0 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double dd = draws[c][i][p] - mean;
        gamma0 += dd * dd;
      }
      gamma0 /= static_cast<double>(n);
      require(gamma0 > 0.0, "autocorrelation is undefined for constant chains");
      for (int lag = 0; lag <= lag_cap; ++lag) {
        double g = 0.0;
        for (std::size_t i = 0; i + static_cast<std::size_t>(lag) < n; ++i) {
          g += (draws[c][i][p] - mean) * (draws[c][i + static_cast<std::size_t>(lag)][p] - mean);
        }
        g /= static_cast<double>(n);
        out.acf[p][static_cast<std::size_t>(lag)] += g / gamma0 / static_cast<double>(n_chains);
      }
    }
  }
  return out;
}

// Crude effective-sample-size estimate from the chain-averaged ACF: n_total /
// (1 + 2 sum rho), truncating the sum when the ACF first dips below zero.
inline double ess_from_acf(const std::vector<double>& acf, std::size_t n_total) {
  double s = 0.0;
  for (std::size_t lag = 1; lag < acf.size(); ++lag) {
    if (acf[lag] <= 0.0) break;
    s += acf[lag];
  }
  return static_cast<double>(n_total) / (1.0 + 2.0 * s);
}

// Gaussian random-walk Metropolis-Hastings on log-parameters against an
// arbitrary natural-scale log-target (prior times likelihood). The chain
// state after every recorded iteration is stored, starting with the (possibly
// jittered) initial state, so a zero-iteration run reports the initial state
// alone. Proposals whose target evaluation throws a validation, numeric, or
// convergence error are rejected and counted.
inline ChainOutput run_rwmh(
    const std::function<double(const std::vector<double>&)>& natural_log_target,
    const ChainConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.init.size();

  ChainOutput out;
  out.draws.resize(static_cast<std::size_t>(cfg.n_chains));
  out.log_post.resize(static_cast<std::size_t>(cfg.n_chains));
  out.acceptance_per_chain.resize(static_cast<std::size_t>(cfg.n_chains), 0.0);

  long accepted_total = 0;
  long proposed_total = 0;
  for (int c = 0; c < cfg.n_chains; ++c) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(c) + 1);

    // Natural-scale target plus the log-parameter Jacobian; failures reject.
    const auto target_u = [&](const std::vector<double>& u) {
      std::vector<double> psi(d);
      double jac = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        psi[j] = std::exp(u[j]);
        jac += u[j];
      }
      try {
        const double lt = natural_log_target(psi);
        return std::isfinite(lt) ? lt + jac : neg_inf;
      } catch (const Error&) {
        ++out.rejected_failures;
        return neg_inf;
      }
    };

    detail::MhChainState state;
    state.u.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      state.u[j] = std::log(cfg.init[j]) + rng.normal(0.0, cfg.init_jitter_sd);
    }
    state.log_target_u = target_u(state.u);
    require(state.log_target_u != neg_inf,
            "the target is not evaluable at the initial state");

    std::vector<double> chol = detail::diagonal_chol(cfg.proposal_scale);
    if (cfg.adapt && cfg.pilot > 0) {
      std::vector<std::vector<double>> pilot_draws;
      pilot_draws.reserve(static_cast<std::size_t>(cfg.pilot));
      for (int it = 0; it < cfg.pilot; ++it) {
        detail::mh_step(state, target_u, chol, rng);
        pilot_draws.push_back(state.u);
      }
      if (pilot_draws.size() >= 10 * d) {
        chol = detail::cholesky(detail::adapted_covariance(pilot_draws, d), d);
      }
    }

    auto& draws = out.draws[static_cast<std::size_t>(c)];
    auto& lp = out.log_post[static_cast<std::size_t>(c)];
    draws.reserve(static_cast<std::size_t>(cfg.n_iter) + 1);
    lp.reserve(static_cast<std::size_t>(cfg.n_iter) + 1);
    const auto record = [&]() {
      std::vector<double> psi(d);
      double jac = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        psi[j] = std::exp(state.u[j]);
        jac += state.u[j];
      }
      draws.push_back(std::move(psi));
      lp.push_back(state.log_target_u - jac);
    };
    record();
    long accepted = 0;
    for (int it = 0; it < cfg.n_iter; ++it) {
      accepted += detail::mh_step(state, target_u, chol, rng) ? 1 : 0;
      record();
    }
    out.acceptance_per_chain[static_cast<std::size_t>(c)] =
        cfg.n_iter > 0 ? static_cast<double>(accepted) / cfg.n_iter : 0.0;
    accepted_total += accepted;
    proposed_total += cfg.n_iter;
  }
  out.acceptance_rate =
      proposed_total > 0 ? static_cast<double>(accepted_total) / proposed_total : 0.0;

  if (cfg.n_chains >= 2 && cfg.n_iter + 1 >= 4) {
    const Diagnostics diag = diagnostics(out.draws);
    out.rhat = diag.rhat;
    out.acf = diag.acf;
  }
  return out;
}

// Sum of the per-parameter prior log densities.
inline double log_prior(const std::vector<PriorSpec>& priors, const std::vector<double>& psi) {
  double acc = 0.0;
  for (std::size_t j = 0; j < psi.size(); ++j) acc += priors[j].log_pdf(psi[j]);
  return acc;
}

// Posterior sampling for the square-root diffusion observed through Poisson
// counts: parameters are the natural drift/level/volatility triple, the
// emission rate is fixed and known, and the likelihood is the exact filter
// under the configured pruning rule.
inline ChainOutput rwmh_cir(const ObservationSeries& series, const ChainConfig& cfg,
                            double emission_rate = 1.0) {
  cfg.validate();
  require(cfg.init.size() == 3, "the scalar model has three free parameters");
  series.validate();
  const auto target = [&](const std::vector<double>& psi) {
    const CirModel model(
        from_natural(NaturalCirParams{psi[0], psi[1], psi[2]}, emission_rate));
    return log_prior(cfg.priors, psi) +
           run_filter(model, series, cfg.prune).log_likelihood;
  };
  return run_rwmh(target, cfg);
}

// Posterior sampling for the Wright-Fisher mutation-rate vector under
// multinomial sampling, with the exact pruned-filter likelihood.
inline ChainOutput rwmh_wf(const ObservationSeries& series, const ChainConfig& cfg,
                           int emission_total, SeriesPolicy series_policy = {}) {
  cfg.validate();
  series.validate();
  require(cfg.init.size() == static_cast<std::size_t>(series.dim()) && series.dim() >= 2,
          "need one mutation parameter per observed type");
  const auto target = [&](const std::vector<double>& psi) {
    WfParams params;
    params.alpha = psi;
    params.emission_total = emission_total;
    const WfModel model(params, series_policy);
    return log_prior(cfg.priors, psi) +
           run_filter(model, series, cfg.prune).log_likelihood;
  };
  return run_rwmh(target, cfg);
}

struct GibbsOutput {
  ChainOutput chains;
  // [chain][iter][time]: the trajectory draw recorded with each iteration.
  std::vector<std::vector<std::vector<double>>> trajectories;
};

// Metropolis-within-Gibbs joint sampler for the square-root diffusion:
// alternates an exact joint trajectory draw given the current parameters with
// a random-walk parameter update given the trajectory. The parameter target
// given a trajectory is prior + stationary density at the first state +
// transition densities across gaps (the Poisson emission factor does not
// involve the sampled parameters, since the emission rate is fixed).
inline GibbsOutput gibbs_joint_cir(const ObservationSeries& series, const ChainConfig& cfg,
                                   double emission_rate = 1.0) {
  cfg.validate();
  require(cfg.init.size() == 3, "the scalar model has three free parameters");
  series.validate();
  const std::size_t d = 3;
  const std::size_t n_times = series.size();

  GibbsOutput out;
  out.chains.draws.resize(static_cast<std::size_t>(cfg.n_chains));
  out.chains.log_post.resize(static_cast<std::size_t>(cfg.n_chains));
  out.chains.acceptance_per_chain.resize(static_cast<std::size_t>(cfg.n_chains), 0.0);
  out.trajectories.resize(static_cast<std::size_t>(cfg.n_chains));

  long accepted_total = 0;
  long proposed_total = 0;
  for (int c = 0; c < cfg.n_chains; ++c) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(c) + 1);

    std::vector<double> traj(n_times);
    const auto refresh_trajectory = [&](const std::vector<double>& psi) {
      const CirModel model(
          from_natural(NaturalCirParams{psi[0], psi[1], psi[2]}, emission_rate));
      const auto fo = run_filter(model, series, cfg.prune);
      const Trajectory t = sample_joint_cir_single(model, fo, rng);
      for (std::size_t i = 0; i < n_times; ++i) traj[i] = t.states[i][0];
    };

    const auto target_u = [&](const std::vector<double>& u) {
      std::vector<double> psi(d);
      double jac = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        psi[j] = std::exp(u[j]);
        jac += u[j];
      }
      try {
        const CirModel model(
            from_natural(NaturalCirParams{psi[0], psi[1], psi[2]}, emission_rate));
        double lt = log_prior(cfg.priors, psi) + model.log_pi_density(traj[0]);
        for (std::size_t i = 0; i + 1 < n_times; ++i) {
          lt += model.log_transition_density(traj[i], traj[i + 1],
                                             series.times[i + 1] - series.times[i]);
        }
        return std::isfinite(lt) ? lt + jac : neg_inf;
      } catch (const Error&) {
        ++out.chains.rejected_failures;
        return neg_inf;
      }
    };

    detail::MhChainState state;
    state.u.resize(d);
    std::vector<double> psi0(d);
    for (std::size_t j = 0; j < d; ++j) {
      state.u[j] = std::log(cfg.init[j]) + rng.normal(0.0, cfg.init_jitter_sd);
      psi0[j] = std::exp(state.u[j]);
    }
    refresh_trajectory(psi0);
    state.log_target_u = target_u(state.u);
    require(state.log_target_u != neg_inf,
            "the target is not evaluable at the initial state");

    std::vector<double> chol = detail::diagonal_chol(cfg.proposal_scale);
    if (cfg.adapt && cfg.pilot > 0) {
      std::vector<std::vector<double>> pilot_draws;
      pilot_draws.reserve(static_cast<std::size_t>(cfg.pilot));
      for (int it = 0; it < cfg.pilot; ++it) {
        detail::mh_step(state, target_u, chol, rng);
        std::vector<double> psi(d);
        for (std::size_t j = 0; j < d; ++j) psi[j] = std::exp(state.u[j]);
        refresh_trajectory(psi);
        state.log_target_u = target_u(state.u);  // conditional moved with the trajectory
        pilot_draws.push_back(state.u);
      }
      if (pilot_draws.size() >= 10 * d) {
        chol = detail::cholesky(detail::adapted_covariance(pilot_draws, d), d);
      }
    }

    auto& draws = out.chains.draws[static_cast<std::size_t>(c)];
    auto& lp = out.chains.log_post[static_cast<std::size_t>(c)];
    auto& trajs = out.trajectories[static_cast<std::size_t>(c)];
    const auto record = [&]() {
      std::vector<double> psi(d);
      double jac = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        psi[j] = std::exp(state.u[j]);
        jac += state.u[j];
      }
      draws.push_back(std::move(psi));
      lp.push_back(state.log_target_u - jac);
      trajs.push_back(traj);
    };
    record();
    long accepted = 0;
    for (int it = 0; it < cfg.n_iter; ++it) {
      accepted += detail::mh_step(state, target_u, chol, rng) ? 1 : 0;
      std::vector<double> psi(d);
      for (std::size_t j = 0; j < d; ++j) psi[j] = std::exp(state.u[j]);
      refresh_trajectory(psi);
      state.log_target_u = target_u(state.u);
      record();
    }
    out.chains.acceptance_per_chain[static_cast<std::size_t>(c)] =
        cfg.n_iter > 0 ? static_cast<double>(accepted) / cfg.n_iter : 0.0;
    accepted_total += accepted;
    proposed_total += cfg.n_iter;
  }
  out.chains.acceptance_rate =
      proposed_total > 0 ? static_cast<double>(accepted_total) / proposed_total : 0.0;

  if (cfg.n_chains >= 2 && cfg.n_iter + 1 >= 4) {
    const Diagnostics diag = diagnostics(out.chains.draws);
    out.chains.rhat = diag.rhat;
    out.chains.acf = diag.acf;
  }
  return out;
}

}  // namespace dualhmm
