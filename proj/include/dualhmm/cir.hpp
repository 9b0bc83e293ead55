// Cox–Ingersoll–Ross signal observed through a Poisson channel. The dual
// process is a one-dimensional pure-death chain with unit per-particle rates
// plus a deterministic parameter flow; every operation below is in closed
// form (negative binomial marginals, binomial thinning rows, noncentral
// gamma transitions).
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/death.hpp"
#include "dualhmm/grid.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/special.hpp"

namespace dualhmm {

// Mean-reversion parameterization dX = a (b - X) dt + s sqrt(X) dW.
struct NaturalCirParams {
  double a = 0.0;
  double b = 0.0;
  double s = 0.0;
};

// Working parameterization dX = (delta sigma^2 - 2 gamma X) dt
//                              + 2 sigma sqrt(X) dW, with Poisson observation
// intensity lambda per unit of signal.
struct CirParams {
  double delta = 0.0;
  double gamma = 0.0;
  double sigma = 0.0;
  double lambda = 1.0;

  double theta0() const { return gamma / (sigma * sigma); }

  void validate() const {
    require(delta > 0.0 && std::isfinite(delta), "CIR delta must be positive");
    require(gamma > 0.0 && std::isfinite(gamma), "CIR gamma must be positive");
    require(sigma > 0.0 && std::isfinite(sigma), "CIR sigma must be positive");
    require(lambda > 0.0 && std::isfinite(lambda), "observation intensity must be positive");
  }
};

inline CirParams from_natural(const NaturalCirParams& n, double lambda) {
  require(n.a > 0.0 && n.b > 0.0 && n.s > 0.0, "natural CIR parameters must be positive");
  CirParams p;
  p.gamma = 0.5 * n.a;
  p.sigma = 0.5 * n.s;
  p.delta = 4.0 * n.a * n.b / (n.s * n.s);
  p.lambda = lambda;
  p.validate();
  return p;
}

inline NaturalCirParams to_natural(const CirParams& p) {
  p.validate();
  return NaturalCirParams{2.0 * p.gamma, p.delta * p.sigma * p.sigma / (2.0 * p.gamma),
                          2.0 * p.sigma};
}

class CirModel {
 public:
  using Point = double;
  using Theta = double;

  explicit CirModel(CirParams params) : params_(params) { params_.validate(); }

  const CirParams& params() const { return params_; }
  int dim() const { return 1; }
  double theta_ref() const { return params_.theta0(); }

  // --- stationary law: Gamma(delta/2, theta0) ------------------------------
  double log_pi_density(double x) const {
    return log_gamma_pdf(x, 0.5 * params_.delta, params_.theta0());
  }

  double sample_stationary(Rng& rng) const {
    return rng.gamma(0.5 * params_.delta, params_.theta0());
  }

  // --- duality function -----------------------------------------------------
  // h(x, m, theta) = [Gamma(d/2)/Gamma(d/2+m)] theta0^{-d/2} theta^{d/2+m}
  //                  x^m exp(-(theta - theta0) x)
  double log_h(double x, int m, double theta) const {
    require(m >= 0, "dual index must be nonnegative");
    check_theta(theta);
    require(x >= 0.0, "CIR signal point must be nonnegative");
    const double half_delta = 0.5 * params_.delta;
    if (m > 0 && x == 0.0) return neg_inf;
    double acc = lgamma(half_delta) - lgamma(half_delta + m);
    acc -= half_delta * std::log(params_.theta0());
    acc += (half_delta + m) * std::log(theta);
    if (m > 0) acc += m * std::log(x);
    acc -= (theta - params_.theta0()) * x;
    return acc;
  }

  double log_h(double x, const GridIndex& m, double theta) const {
    return log_h(x, scalar(m), theta);
  }

  // --- conjugate observation update -----------------------------------------
  GridIndex update_t(const GridIndex& y, const GridIndex& m) const {
    check_obs(y);
    return m.plus(y);
  }

  double update_T(const GridIndex& y, double theta) const {
    check_obs(y);
    check_theta(theta);
    return theta + params_.lambda;
  }

  // Negative binomial observation marginal under component (m, theta):
  // y ~ NB(delta/2 + m, theta / (theta + lambda)).
  double log_marginal(const GridIndex& m, double theta, const GridIndex& y) const {
    check_obs(y);
    return log_marginal_ctx(scalar(m), emission_context(theta), y[0]);
  }

  // Per-observation factors of the marginal that do not depend on the
  // component, so a whole mixture can reuse two logarithms.
  struct EmissionContext {
    double log_p;
    double log_1mp;
    double half_delta;
  };
  EmissionContext emission_context(double theta) const {
    check_theta(theta);
    const double p = theta / (theta + params_.lambda);
    return {std::log(p), std::log1p(-p), 0.5 * params_.delta};
  }
  double log_marginal_ctx(int m, const EmissionContext& ctx, int y) const {
    require(m >= 0 && y >= 0, "counts must be nonnegative");
    return lgamma_shifted(m + y) - lgamma_shifted(m) - log_factorial(y) +
           (ctx.half_delta + m) * ctx.log_p + y * ctx.log_1mp;
  }

  // --- deterministic parameter flow and dual death process ------------------
  // Theta_dt(theta) = theta0 theta / (theta (1 - e^{-2 g dt}) + theta0 e^{-2 g dt})
  double theta_flow(double dt, double theta) const {
    check_theta(theta);
    require(dt >= 0.0, "elapsed time must be nonnegative");
    if (dt == 0.0) return theta;
    const double theta0 = params_.theta0();
    const double decay = std::exp(-2.0 * params_.gamma * dt);
    return theta0 * theta / (theta * (1.0 - decay) + theta0 * decay);
  }

  // Theta'_dt = theta0 / (e^{2 g dt} - 1): Poisson rate of the exact
  // transition representation per unit of starting state.
  double theta_prime(double dt) const {
    require(dt > 0.0, "elapsed time must be positive");
    const double em = std::expm1(2.0 * params_.gamma * dt);
    return std::isinf(em) ? 0.0 : params_.theta0() / em;
  }

  // Per-particle survival probability of the dual death process over dt:
  // theta0 / (theta (e^{2 g dt} - 1) + theta0) = Theta'_dt / (theta + Theta'_dt).
  double survive_prob(double dt, double theta) const {
    check_theta(theta);
    require(dt > 0.0, "elapsed time must be positive");
    const double em = std::expm1(2.0 * params_.gamma * dt);
    if (std::isinf(em)) return 0.0;
    const double theta0 = params_.theta0();
    return theta0 / (theta * em + theta0);
  }

  // Particles die independently, so the row is binomial thinning.
  TransitionRow death_row(const GridIndex& m, double dt, double theta) const {
    const double p = survive_prob(dt, theta);
    if (p <= 0.0) {
      TransitionRow row{m, dt, {}};
      row.probs.insert(GridIndex::zeros(m.dim()), 0.0);
      row.probs.mark_normalized();
      return row;
    }
    if (p >= 1.0) {
      TransitionRow row{m, dt, {}};
      row.probs.insert(m, 0.0);
      row.probs.mark_normalized();
      return row;
    }
    TransitionRow row = binomial_row(scalar(m), p);
    row.elapsed = dt;
    return row;
  }

  // --- products of duality functions -----------------------------------------
  GridIndex hstab_d(const GridIndex& m1, const GridIndex& m2) const { return m1.plus(m2); }

  double hstab_e(double theta1, double theta2) const {
    check_theta(theta1);
    check_theta(theta2);
    const double e = theta1 + theta2 - params_.theta0();
    require(e > 0.0, "combined rate parameter must stay positive");
    return e;
  }

  double log_hstab_C(const GridIndex& m1, const GridIndex& m2, double theta1,
                     double theta2) const {
    const int a = scalar(m1);
    const int b = scalar(m2);
    const double e = hstab_e(theta1, theta2);
    const double half_delta = 0.5 * params_.delta;
    double acc = lgamma(half_delta) - half_delta * std::log(params_.theta0());
    acc += lgamma(half_delta + a + b) - lgamma(half_delta + a) - lgamma(half_delta + b);
    acc += (half_delta + a) * std::log(theta1) + (half_delta + b) * std::log(theta2);
    acc -= (half_delta + a + b) * std::log(e);
    return acc;
  }

  // --- mixture components: Gamma(delta/2 + m, theta) -------------------------
  double component_shape(const GridIndex& m) const { return 0.5 * params_.delta + scalar(m); }

  double log_component_density(double x, const GridIndex& m, double theta) const {
    check_theta(theta);
    return log_gamma_pdf(x, component_shape(m), theta);
  }

  double component_cdf(double x, const GridIndex& m, double theta) const {
    check_theta(theta);
    return gamma_cdf(x, component_shape(m), theta);
  }

  std::vector<double> component_mean(const GridIndex& m, double theta) const {
    check_theta(theta);
    return {component_shape(m) / theta};
  }

  double sample_component(const GridIndex& m, double theta, Rng& rng) const {
    check_theta(theta);
    return rng.gamma(component_shape(m), theta);
  }

  // --- exact signal transition ------------------------------------------------
  // X_{t+dt} | X_t = x0 is Gamma(delta/2 + k, rate_b) with
  // k ~ Poisson(Theta'_dt x0) and rate_b = theta0 + Theta'_dt.
  double exact_transition_sample(double x0, double dt, Rng& rng) const {
    require(x0 >= 0.0, "CIR signal point must be nonnegative");
    require(dt > 0.0, "elapsed time must be positive");
    const double tp = theta_prime(dt);
    const double rate = params_.theta0() + tp;
    const long k = x0 > 0.0 && tp > 0.0 ? rng.poisson(tp * x0) : 0;
    return rng.gamma(0.5 * params_.delta + static_cast<double>(k), rate);
  }

  // Noncentral-gamma transition density in Bessel form.
  double log_transition_density(double x0, double x1, double dt) const {
    require(x0 >= 0.0, "CIR signal point must be nonnegative");
    require(dt > 0.0, "elapsed time must be positive");
    if (x1 <= 0.0) return neg_inf;
    const double tp = theta_prime(dt);
    const double rate = params_.theta0() + tp;
    if (x0 == 0.0 || tp == 0.0) {
      return log_gamma_pdf(x1, 0.5 * params_.delta, rate);
    }
    const double q = 0.5 * params_.delta - 1.0;
    const double u = tp * x0;
    const double v = rate * x1;
    return std::log(rate) - u - v + 0.5 * q * (std::log(v) - std::log(u)) +
           log_bessel_i(q, 2.0 * std::sqrt(u * v));
  }

  // --- Poisson emission channel ------------------------------------------------
  GridIndex simulate_emission(double x, Rng& rng) const {
    require(x >= 0.0, "CIR signal point must be nonnegative");
    return GridIndex{static_cast<int>(rng.poisson(params_.lambda * x))};
  }

  double log_emission_density(double x, const GridIndex& y) const {
    check_obs(y);
    require(x >= 0.0, "CIR signal point must be nonnegative");
    return log_poisson_pmf(y[0], params_.lambda * x);
  }

 private:
  static int scalar(const GridIndex& m) {
    require(m.dim() == 1, "CIR dual indices are one-dimensional");
    return m[0];
  }

  static void check_obs(const GridIndex& y) {
    require(y.dim() == 1, "CIR observations are scalar counts");
    require(y[0] >= 0, "counts must be nonnegative");
  }

  void check_theta(double theta) const {
    if (!(theta > 0.0 && std::isfinite(theta))) {
      throw ValidationError("CIR dual parameter must be positive, got " +
                            std::to_string(theta));
    }
  }

  // lgamma(delta/2 + k) for integer k >= 0, grown on demand.  The model is
  // meant for single-threaded use; the cache is per instance.
  double lgamma_shifted(int k) const {
    while (static_cast<int>(lgamma_cache_.size()) <= k) {
      lgamma_cache_.push_back(
          lgamma(0.5 * params_.delta + static_cast<double>(lgamma_cache_.size())));
    }
    return lgamma_cache_[static_cast<std::size_t>(k)];
  }

  CirParams params_;
  mutable std::vector<double> lgamma_cache_;
};

}  // namespace dualhmm
