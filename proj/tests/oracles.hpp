#pragma once

// Test-only oracles: independent routes to quantities the library computes,
// used to freeze expected values and gate the production code paths.

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/grid.hpp"
#include "dualhmm/rng.hpp"

namespace dualhmm::oracle {

// ---------------------------------------------------------------------------
// Finite-state continuous-time Markov chain: transition probabilities via
// uniformization, P(t) = Σ_k Poisson(k; q t) (I + Q/q)^k, truncated when the
// Poisson tail is below `tail_tol`.  Exact up to the stated tail mass.
// ---------------------------------------------------------------------------
struct CtmcOracle {
  std::vector<GridIndex> states;                 // state enumeration
  std::map<GridIndex, std::size_t> index_of;
  std::vector<std::vector<double>> q;            // generator matrix

  static CtmcOracle death_process(const GridIndex& top,
                                  const std::function<double(int)>& lambda) {
    CtmcOracle o;
    std::vector<GridIndex> states;
    detail::enumerate_box(top, states);
    std::sort(states.begin(), states.end());
    o.states = states;
    for (std::size_t i = 0; i < states.size(); ++i) o.index_of[states[i]] = i;
    const std::size_t n = states.size();
    o.q.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const GridIndex& s = states[i];
      if (s.norm() == 0) continue;
      const double total_rate = lambda(s.norm());
      for (int j = 0; j < s.dim(); ++j) {
        if (s[j] == 0) continue;
        std::vector<int> c = s.coords();
        c[static_cast<std::size_t>(j)] -= 1;
        const std::size_t k = o.index_of.at(GridIndex(c));
        const double r = total_rate * s[j] / s.norm();
        o.q[i][k] += r;
        o.q[i][i] -= r;
      }
    }
    return o;
  }

  // Row of exp(Qt) from `source`.
  std::vector<double> row(const GridIndex& source, double t,
                          double tail_tol = 1e-14) const {
    const std::size_t n = states.size();
    double qmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) qmax = std::max(qmax, -q[i][i]);
    qmax = std::max(qmax, 1e-12);
    // P = I + Q/qmax (stochastic matrix)
    std::vector<double> v(n, 0.0), out(n, 0.0);
    v[index_of.at(source)] = 1.0;
    const double a = qmax * t;
    double log_term = -a;  // log Poisson(0; a)
    double cum = std::exp(log_term);
    for (double x : v) (void)x;
    for (std::size_t i = 0; i < n; ++i) out[i] += std::exp(log_term) * v[i];
    std::size_t k = 0;
    while (cum < 1.0 - tail_tol) {
      ++k;
      // v <- v P
      std::vector<double> w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (v[i] == 0.0) continue;
        w[i] += v[i] * (1.0 + q[i][i] / qmax);
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i && q[i][j] != 0.0) w[j] += v[i] * q[i][j] / qmax;
        }
      }
      v.swap(w);
      log_term += std::log(a) - std::log(static_cast<double>(k));
      const double term = std::exp(log_term);
      for (std::size_t i = 0; i < n; ++i) out[i] += term * v[i];
      cum += term;
      if (k > 100000) throw std::runtime_error("uniformization stuck");
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Monte Carlo simulation of the multivariate death process with level
// intensities λ_n on a fixed transformed clock budget.
// ---------------------------------------------------------------------------
inline GridIndex simulate_death_path(const GridIndex& start,
                                     const std::function<double(int)>& lambda,
                                     double clock, Rng& rng) {
  std::vector<int> cur = start.coords();
  int norm = start.norm();
  double remaining = clock;
  while (norm > 0) {
    const double rate = lambda(norm);
    const double wait = rng.exponential(rate);
    if (wait > remaining) break;
    remaining -= wait;
    // choose the dying coordinate with probability proportional to count
    double u = rng.uniform() * norm;
    for (std::size_t j = 0; j < cur.size(); ++j) {
      if (u < cur[j]) {
        cur[j] -= 1;
        break;
      }
      u -= cur[j];
    }
    --norm;
  }
  return GridIndex(cur);
}

}  // namespace dualhmm::oracle
