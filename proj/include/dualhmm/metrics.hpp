#pragma once

// Closed-form L2 distances between gamma mixtures and between Dirichlet
// mixtures, plus small summary utilities used when comparing exact and
// approximate posterior laws. The pairwise cross integrals have closed forms
// whenever every gamma shape (resp. every Dirichlet coordinate) exceeds 1/2.

#include <cmath>
#include <vector>

#include "dualhmm/common.hpp"

namespace dualhmm {

// Finite gamma mixture with normalized weights; rate parameterization.
struct GammaMixture {
  std::vector<double> shapes;
  std::vector<double> rates;
  std::vector<double> weights;

  void validate() const {
    require(!shapes.empty(), "gamma mixture must have at least one component");
    require(shapes.size() == rates.size() && shapes.size() == weights.size(),
            "gamma mixture fields must have equal lengths");
    double total = 0.0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      require(shapes[i] > 0.0 && rates[i] > 0.0, "gamma parameters must be positive");
      require(weights[i] >= 0.0, "mixture weights must be nonnegative");
      total += weights[i];
    }
    require(std::abs(total - 1.0) <= 1e-9, "mixture weights must sum to one");
  }

  double log_pdf(double x) const {
    double acc = neg_inf;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (weights[i] == 0.0) continue;
      acc = log_add_exp(acc, std::log(weights[i]) + log_gamma_pdf(x, shapes[i], rates[i]));
    }
    return acc;
  }
};

// Finite Dirichlet mixture with normalized weights.
struct DirichletMixture {
  std::vector<std::vector<double>> alphas;
  std::vector<double> weights;

  void validate() const {
    require(!alphas.empty(), "Dirichlet mixture must have at least one component");
    require(alphas.size() == weights.size(), "mixture fields must have equal lengths");
    const std::size_t dim = alphas.front().size();
    require(dim >= 2, "Dirichlet components need at least two coordinates");
    double total = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      require(alphas[i].size() == dim, "Dirichlet components must share a dimension");
      for (double a : alphas[i]) require(a > 0.0, "Dirichlet parameters must be positive");
      require(weights[i] >= 0.0, "mixture weights must be nonnegative");
      total += weights[i];
    }
    require(std::abs(total - 1.0) <= 1e-9, "mixture weights must sum to one");
  }
};

namespace detail {

// log of the cross integral of two gamma densities:
// integral Ga(x; a1, b1) Ga(x; a2, b2) dx, finite whenever a1 + a2 > 1.
inline double log_gamma_cross(double a1, double b1, double a2, double b2) {
  return a1 * std::log(b1) + a2 * std::log(b2) - std::lgamma(a1) - std::lgamma(a2) +
         std::lgamma(a1 + a2 - 1.0) - (a1 + a2 - 1.0) * std::log(b1 + b2);
}

// log of the cross integral of two Dirichlet densities on the simplex:
// B(a1 + a2 - 1) / (B(a1) B(a2)), finite when every coordinate sum exceeds 1.
inline double log_dirichlet_cross(const std::vector<double>& a1, const std::vector<double>& a2) {
  std::vector<double> merged(a1.size());
  for (std::size_t j = 0; j < a1.size(); ++j) merged[j] = a1[j] + a2[j] - 1.0;
  return log_beta_vec(merged) - log_beta_vec(a1) - log_beta_vec(a2);
}

}  // namespace detail

// L2 distance between two gamma mixtures via pairwise closed-form cross
// integrals. Every shape must exceed 1/2 (so each pair's shape sum exceeds 1).
inline double l2_gamma(const GammaMixture& g, const GammaMixture& h) {
  g.validate();
  h.validate();
  for (double a : g.shapes) require(a > 0.5, "gamma L2 needs every shape above one half");
  for (double a : h.shapes) require(a > 0.5, "gamma L2 needs every shape above one half");

  const auto quad = [](const GammaMixture& p, const GammaMixture& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.shapes.size(); ++i) {
      for (std::size_t j = 0; j < q.shapes.size(); ++j) {
        acc += p.weights[i] * q.weights[j] *
               std::exp(detail::log_gamma_cross(p.shapes[i], p.rates[i], q.shapes[j],
                                                q.rates[j]));
      }
    }
    return acc;
  };
  const double sq = quad(g, g) + quad(h, h) - 2.0 * quad(g, h);
  return std::sqrt(std::max(0.0, sq));
}

// L2 distance between two Dirichlet mixtures of a common dimension. Every
// coordinate of every component must exceed 1/2.
inline double l2_dirichlet(const DirichletMixture& g, const DirichletMixture& h) {
  g.validate();
  h.validate();
  require(g.alphas.front().size() == h.alphas.front().size(),
          "Dirichlet mixtures must share a dimension");
  for (const auto& a : g.alphas) {
    for (double v : a) require(v > 0.5, "Dirichlet L2 needs every coordinate above one half");
  }
  for (const auto& a : h.alphas) {
    for (double v : a) require(v > 0.5, "Dirichlet L2 needs every coordinate above one half");
  }

  const auto quad = [](const DirichletMixture& p, const DirichletMixture& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.alphas.size(); ++i) {
      for (std::size_t j = 0; j < q.alphas.size(); ++j) {
        acc += p.weights[i] * q.weights[j] *
               std::exp(detail::log_dirichlet_cross(p.alphas[i], q.alphas[j]));
      }
    }
    return acc;
  };
  const double sq = quad(g, g) + quad(h, h) - 2.0 * quad(g, h);
  return std::sqrt(std::max(0.0, sq));
}

// Maximum over aligned per-time pairs of the family's L2 distance.
inline double max_l2_over_time(const std::vector<GammaMixture>& exact,
                               const std::vector<GammaMixture>& approx) {
  require(exact.size() == approx.size() && !exact.empty(),
          "per-time mixture lists must be nonempty and aligned");
  double worst = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    worst = std::max(worst, l2_gamma(exact[i], approx[i]));
  }
  return worst;
}

inline double max_l2_over_time(const std::vector<DirichletMixture>& exact,
                               const std::vector<DirichletMixture>& approx) {
  require(exact.size() == approx.size() && !exact.empty(),
          "per-time mixture lists must be nonempty and aligned");
  double worst = 0.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    worst = std::max(worst, l2_dirichlet(exact[i], approx[i]));
  }
  return worst;
}

// Root mean squared error of a list of estimates against one exact value.
inline double likelihood_rmse(const std::vector<double>& estimates, double exact) {
  require(!estimates.empty(), "RMSE needs at least one estimate");
  double acc = 0.0;
  for (double e : estimates) acc += (e - exact) * (e - exact);
  return std::sqrt(acc / static_cast<double>(estimates.size()));
}

}  // namespace dualhmm
