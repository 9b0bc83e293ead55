// Neutral K-type diffusion on the simplex observed through a multinomial
// channel. The dual is a K-dimensional pure-death chain at rates
// n (|alpha| + n - 1) / 2 with no mutable parameter component; mixture
// components are Dirichlet laws. Exact transitions and the conditioned
// forward kernel are sampled through the ancestral lineage-count series.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/death.hpp"
#include "dualhmm/grid.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/series.hpp"

namespace dualhmm {

struct WfParams {
  std::vector<double> alpha;
  // Multinomial size used when simulating observations.
  int emission_total = 1;

  double total() const {
    double acc = 0.0;
    for (double a : alpha) acc += a;
    return acc;
  }

  void validate() const {
    require(alpha.size() >= 2, "simplex models need at least two types");
    for (double a : alpha) {
      require(a > 0.0 && std::isfinite(a), "all mutation weights must be positive");
    }
    require(emission_total >= 1, "emission total must be at least one");
  }
};

namespace detail {

// All nonnegative integer K-vectors with coordinate sum `total`.
inline void enumerate_compositions(int total, int dim, std::vector<int>& scratch,
                                   std::vector<GridIndex>& out) {
  if (static_cast<int>(scratch.size()) == dim - 1) {
    scratch.push_back(total);
    out.emplace_back(scratch);
    scratch.pop_back();
    return;
  }
  for (int v = 0; v <= total; ++v) {
    scratch.push_back(v);
    enumerate_compositions(total - v, dim, scratch, out);
    scratch.pop_back();
  }
}

inline std::vector<GridIndex> compositions(int total, int dim) {
  std::vector<GridIndex> out;
  std::vector<int> scratch;
  scratch.reserve(static_cast<std::size_t>(dim));
  enumerate_compositions(total, dim, scratch, out);
  return out;
}

}  // namespace detail

class WfModel {
 public:
  using Point = std::vector<double>;
  using Theta = NoTheta;

  explicit WfModel(WfParams params, SeriesPolicy series_policy = {},
                   PrecisionPolicy precision = {})
      : params_(std::move(params)), series_policy_(series_policy), precision_(precision) {
    params_.validate();
  }

  const WfParams& params() const { return params_; }
  int dim() const { return static_cast<int>(params_.alpha.size()); }
  NoTheta theta_ref() const { return {}; }
  const SeriesPolicy& series_policy() const { return series_policy_; }

  // --- stationary law: Dirichlet(alpha) --------------------------------------
  double log_pi_density(const Point& x) const {
    check_point(x);
    return log_dirichlet_pdf(x, params_.alpha);
  }

  Point sample_stationary(Rng& rng) const { return rng.dirichlet(params_.alpha); }

  // --- duality function -------------------------------------------------------
  // h(x, m) = Gamma(|a|+|m|)/Gamma(|a|) prod_j Gamma(a_j)/Gamma(a_j+m_j) x_j^{m_j}
  double log_h(const Point& x, const GridIndex& m, NoTheta = {}) const {
    check_point(x);
    check_index(m);
    const double total = params_.total();
    double acc = lgamma(total + m.norm()) - lgamma(total);
    for (int j = 0; j < dim(); ++j) {
      acc += lgamma(params_.alpha[static_cast<std::size_t>(j)]) -
             lgamma(params_.alpha[static_cast<std::size_t>(j)] + m[j]);
      if (m[j] > 0) {
        if (x[static_cast<std::size_t>(j)] <= 0.0) return neg_inf;
        acc += m[j] * std::log(x[static_cast<std::size_t>(j)]);
      }
    }
    return acc;
  }

  // --- conjugate observation update --------------------------------------------
  GridIndex update_t(const GridIndex& y, const GridIndex& m) const {
    check_obs(y);
    return m.plus(y);
  }

  NoTheta update_T(const GridIndex& y, NoTheta = {}) const {
    check_obs(y);
    return {};
  }

  // Dirichlet-multinomial observation marginal under component m.  The
  // log-gamma factors live on integer-shifted grids (alpha_j + k and
  // |alpha| + k), so they are served from per-model memo tables.
  double log_marginal(const GridIndex& m, NoTheta, const GridIndex& y) const {
    check_index(m);
    check_obs(y);
    double acc = log_factorial(y.norm());
    for (int j = 0; j < dim(); ++j) {
      acc += lgamma_coord(j, m[j] + y[j]) - lgamma_coord(j, m[j]) - log_factorial(y[j]);
    }
    acc -= lgamma_total(m.norm() + y.norm()) - lgamma_total(m.norm());
    return acc;
  }

  // --- dual death process --------------------------------------------------------
  NoTheta theta_flow(double dt, NoTheta = {}) const {
    require(dt >= 0.0, "elapsed time must be nonnegative");
    return {};
  }

  double death_rate(int n) const { return n * (params_.total() + n - 1.0) / 2.0; }

  TransitionRow death_row(const GridIndex& m, double dt, NoTheta = {}) const {
    check_index(m);
    std::lock_guard<std::mutex> lock(mutex_);
    return kernel_for(dt).row(m);
  }

  // --- products of duality functions ----------------------------------------------
  GridIndex hstab_d(const GridIndex& m1, const GridIndex& m2) const { return m1.plus(m2); }

  NoTheta hstab_e(NoTheta, NoTheta) const { return {}; }

  double log_hstab_C(const GridIndex& m1, const GridIndex& m2, NoTheta = {},
                     NoTheta = {}) const {
    check_index(m1);
    check_index(m2);
    const double total = params_.total();
    double acc = lgamma(total + m1.norm()) + lgamma(total + m2.norm()) - lgamma(total) -
                 lgamma(total + m1.norm() + m2.norm());
    for (int j = 0; j < dim(); ++j) {
      const double aj = params_.alpha[static_cast<std::size_t>(j)];
      acc += lgamma(aj) + lgamma(aj + m1[j] + m2[j]) - lgamma(aj + m1[j]) -
             lgamma(aj + m2[j]);
    }
    return acc;
  }

  // --- mixture components: Dirichlet(alpha + m) --------------------------------------
  std::vector<double> component_alpha(const GridIndex& m) const {
    check_index(m);
    std::vector<double> out(params_.alpha);
    for (int j = 0; j < dim(); ++j) out[static_cast<std::size_t>(j)] += m[j];
    return out;
  }

  double log_component_density(const Point& x, const GridIndex& m, NoTheta = {}) const {
    check_point(x);
    return log_dirichlet_pdf(x, component_alpha(m));
  }

  std::vector<double> component_mean(const GridIndex& m, NoTheta = {}) const {
    std::vector<double> a = component_alpha(m);
    const double total = params_.total() + m.norm();
    for (double& v : a) v /= total;
    return a;
  }

  Point sample_component(const GridIndex& m, NoTheta, Rng& rng) const {
    return rng.dirichlet(component_alpha(m));
  }

  // --- exact signal transition ----------------------------------------------------------
  // Draw the surviving lineage count m, thin the start point multinomially,
  // and draw from the posterior Dirichlet.
  Point exact_transition_sample(const Point& x0, double dt, Rng& rng) const {
    check_point(x0);
    std::lock_guard<std::mutex> lock(mutex_);
    const int m = series_for(dt).sample(rng);
    const std::vector<int> l = rng.multinomial(m, x0);
    std::vector<double> a(params_.alpha);
    for (std::size_t j = 0; j < a.size(); ++j) a[j] += l[j];
    return rng.dirichlet(a);
  }

  // Transition density as a lineage-count mixture, truncated once the
  // remaining series mass falls below tol.
  double log_transition_density(const Point& x0, const Point& x1, double dt,
                                double tol = 1e-12) const {
    check_point(x0);
    check_point(x1);
    std::lock_guard<std::mutex> lock(mutex_);
    AncestralSeries& series = series_for(dt);
    double density = 0.0;
    double mass = 0.0;
    for (int m = 0; m <= 1000; ++m) {
      const double qm = series.q(m);
      mass += qm;
      if (qm > 0.0) {
        double inner = neg_inf;
        for (const GridIndex& l : detail::compositions(m, dim())) {
          std::vector<double> a(params_.alpha);
          for (int j = 0; j < dim(); ++j) a[static_cast<std::size_t>(j)] += l[j];
          inner = log_add_exp(inner, log_multinomial_pmf(l.coords(), x0) +
                                         log_dirichlet_pdf(x1, a));
        }
        density += qm * std::exp(inner);
      }
      if (1.0 - mass < tol) return std::log(density);
    }
    throw ConvergenceError("transition density truncation did not reach tolerance");
  }

  // --- conditioned forward kernel ---------------------------------------------------------
  struct ForwardKernelDraw {
    int lineage_count = 0;  // mixing index m
    GridIndex thinned;      // multinomial thinning l of the previous point
    GridIndex future;       // cost-to-go index k
    Point x;                // the Dirichlet(alpha + l + y + k) draw
  };

  Point forward_kernel_sample(const Point& x_prev, const GridIndex& y,
                              const CostToGo<NoTheta>& ctg, double dt, Rng& rng) const {
    return forward_kernel_draw(x_prev, y, ctg, dt, rng).x;
  }

  // Sample x_i given the previous point, the observation at time i, and the
  // cost-to-go coefficients for the future data, as a reweighted
  // lineage-count mixture of finite Dirichlet mixtures.
  ForwardKernelDraw forward_kernel_draw(const Point& x_prev, const GridIndex& y,
                                        const CostToGo<NoTheta>& ctg, double dt,
                                        Rng& rng) const {
    check_point(x_prev);
    check_obs(y);
    require(!ctg.log_coeffs.empty(), "cost-to-go coefficients must be nonempty");
    std::lock_guard<std::mutex> lock(mutex_);

    // Future-data factors G_k * ctg_k with G_k = Gamma(|a|+|k|)/prod Gamma(a_j+k_j).
    const double total = params_.total();
    std::vector<GridIndex> ks;
    std::vector<double> log_gw;
    ks.reserve(ctg.log_coeffs.size());
    log_gw.reserve(ctg.log_coeffs.size());
    for (const auto& [k, log_w] : ctg.log_coeffs) {
      check_index(k);
      double g = lgamma(total + k.norm());
      for (int j = 0; j < dim(); ++j) {
        g -= lgamma(params_.alpha[static_cast<std::size_t>(j)] + k[j]);
      }
      ks.push_back(k);
      log_gw.push_back(g + log_w);
    }
    // The Dirichlet-form ratio B(a+l+y+k)/B(a+l) is at most one, so this
    // bounds every reweighting factor r_m.
    const double log_r_bound = log_sum_exp(log_gw);

    // Per-l logits: log Multinom(l | m, x_prev) - log B(a+l) + log r_l with
    // r_l = sum_k B(a+l+y+k) G_k ctg_k. Cached per lineage count.
    std::map<int, std::vector<GridIndex>> ls_for_m;
    std::map<int, std::vector<double>> logits_for_m;
    auto log_r = [&](int m) {
      auto it = logits_for_m.find(m);
      if (it == logits_for_m.end()) {
        std::vector<GridIndex> ls = detail::compositions(m, dim());
        std::vector<double> logits(ls.size(), neg_inf);
        for (std::size_t idx = 0; idx < ls.size(); ++idx) {
          const GridIndex& l = ls[idx];
          std::vector<double> al = component_alpha(l);
          double r_l = neg_inf;
          for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            std::vector<double> full = al;
            for (int j = 0; j < dim(); ++j) {
              full[static_cast<std::size_t>(j)] += y[j] + ks[ki][j];
            }
            r_l = log_add_exp(r_l, log_beta_vec(full) + log_gw[ki]);
          }
          logits[idx] =
              log_multinomial_pmf(l.coords(), x_prev) - log_beta_vec(al) + r_l;
        }
        ls_for_m.emplace(m, std::move(ls));
        it = logits_for_m.emplace(m, std::move(logits)).first;
      }
      return log_sum_exp(it->second);
    };

    const int m_star = series_for(dt).sample_reweighted(log_r, log_r_bound, rng);
    log_r(m_star);  // ensure the categorical table exists
    const std::vector<GridIndex>& ls = ls_for_m.at(m_star);
    const std::vector<double>& logits = logits_for_m.at(m_star);
    const GridIndex l_star = ls[rng.categorical_log(logits)];

    // Inner index k | l: logits log B(a+l+y+k) + log G_k + log ctg_k.
    std::vector<double> k_logits(ks.size(), neg_inf);
    const std::vector<double> al = component_alpha(l_star);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      std::vector<double> full = al;
      for (int j = 0; j < dim(); ++j) full[static_cast<std::size_t>(j)] += y[j] + ks[ki][j];
      k_logits[ki] = log_beta_vec(full) + log_gw[ki];
    }
    const GridIndex k_star = ks[rng.categorical_log(k_logits)];

    std::vector<double> a = al;
    for (int j = 0; j < dim(); ++j) a[static_cast<std::size_t>(j)] += y[j] + k_star[j];
    return ForwardKernelDraw{m_star, l_star, k_star, rng.dirichlet(a)};
  }

  // --- multinomial emission channel ----------------------------------------------------------
  GridIndex simulate_emission(const Point& x, Rng& rng) const {
    check_point(x);
    return GridIndex(rng.multinomial(params_.emission_total, x));
  }

  double log_emission_density(const Point& x, const GridIndex& y) const {
    check_point(x);
    check_obs(y);
    return log_multinomial_pmf(y.coords(), x);
  }

  // Shared access to the lineage-count series for external diagnostics.
  std::vector<double> lineage_pmf(double dt, int m_max) const {
    std::lock_guard<std::mutex> lock(mutex_);
    return series_for(dt).pmf(m_max);
  }

 private:
  void check_point(const Point& x) const {
    require(static_cast<int>(x.size()) == dim(), "simplex point has wrong dimension");
    double total = 0.0;
    for (double v : x) {
      require(v >= 0.0 && std::isfinite(v), "simplex coordinates must be nonnegative");
      total += v;
    }
    require(std::abs(total - 1.0) <= 1e-8, "simplex coordinates must sum to one");
  }

  void check_index(const GridIndex& m) const {
    require(m.dim() == dim(), "dual index has wrong dimension");
  }

  void check_obs(const GridIndex& y) const {
    require(y.dim() == dim(), "observation has wrong dimension");
  }

  DeathKernel& kernel_for(double dt) const {
    require(dt > 0.0, "elapsed time must be positive");
    auto it = kernels_.find(dt);
    if (it == kernels_.end()) {
      auto spec = DeathRateSpec::homogeneous([this](int n) { return death_rate(n); });
      it = kernels_
               .emplace(dt, std::make_unique<DeathKernel>(std::move(spec), dt, 0.0, precision_))
               .first;
    }
    return *it->second;
  }

  AncestralSeries& series_for(double dt) const {
    auto it = series_.find(dt);
    if (it == series_.end()) {
      it = series_
               .emplace(dt, std::make_unique<AncestralSeries>(dt, params_.total(),
                                                              series_policy_))
               .first;
    }
    return *it->second;
  }

  WfParams params_;
  SeriesPolicy series_policy_;
  PrecisionPolicy precision_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::unique_ptr<DeathKernel>> kernels_;
  mutable std::map<double, std::unique_ptr<AncestralSeries>> series_;
};

}  // namespace dualhmm
