#pragma once

// Deterministic random number generation.  A single global seed is expanded
// into independent per-component streams via a counter-based splitting rule
// (splitmix64 over (seed, stream id)), and every sampler below is written
// out explicitly so that results are bit-identical across platforms and
// standard-library implementations.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dualhmm/common.hpp"
#include "dualhmm/grid.hpp"

namespace dualhmm {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

class Rng {
 public:
  // Stream `stream_id` of the family identified by `seed`.
  explicit Rng(std::uint64_t seed, std::uint64_t stream_id = 0) {
    std::uint64_t s = seed ^ (0x5851f42d4c957f2dULL * (stream_id + 1));
    std::seed_seq seq{detail::splitmix64(s), detail::splitmix64(s),
                      detail::splitmix64(s), detail::splitmix64(s)};
    engine_.seed(seq);
  }

  // Derives a fresh independent stream deterministically (counter-based).
  Rng split() { return Rng(engine_(), ++split_counter_); }

  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1): never returns an exact endpoint.
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Marsaglia polar method.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential(double rate) {
    return -std::log(uniform_pos()) / rate;
  }

  // Gamma(shape, rate) via Marsaglia–Tsang squeeze (with the shape < 1
  // boost), parameterized so the mean is shape / rate.
  double gamma(double shape, double rate) {
    require(shape > 0.0 && rate > 0.0, "gamma: shape and rate must be > 0");
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v / rate;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0), y = gamma(b, 1.0);
    return x / (x + y);
  }

  std::vector<double> dirichlet(const std::vector<double>& alpha) {
    std::vector<double> x(alpha.size());
    double total = 0.0;
    for (std::size_t j = 0; j < alpha.size(); ++j) {
      x[j] = gamma(alpha[j], 1.0);
      total += x[j];
    }
    for (double& v : x) v /= total;
    return x;
  }

  // Poisson: inversion by sequential search below mean 10, PTRS-style
  // transformed rejection above.
  int poisson(double mean) {
    require(mean >= 0.0, "poisson: mean must be >= 0");
    if (mean == 0.0) return 0;
    if (mean < 10.0) {
      const double l = std::exp(-mean);
      int k = 0;
      double p = uniform_pos();
      while (p > l) {
        p *= uniform_pos();
        ++k;
      }
      return k;
    }
    // PTRS (Hörmann's transformed rejection with squeeze).
    const double b = 0.931 + 2.53 * std::sqrt(mean);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
      const double u = uniform() - 0.5;
      const double v = uniform_pos();
      const double us = 0.5 - std::abs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<int>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
      const double rhs = -mean + kf * std::log(mean) - log_factorial(
                             static_cast<int>(kf));
      if (lhs <= rhs) return static_cast<int>(kf);
    }
  }

  // Binomial(n, p) by explicit Bernoulli counting for small n and a
  // first-waiting-time / inversion scheme otherwise (n stays modest in this
  // library, so simplicity and determinism win over asymptotics).
  int binomial(int n, double p) {
    require(n >= 0 && p >= 0.0 && p <= 1.0, "binomial: bad arguments");
    if (n == 0 || p == 0.0) return 0;
    if (p == 1.0) return n;
    if (p > 0.5) return n - binomial(n, 1.0 - p);
    if (n <= 64) {
      int k = 0;
      for (int i = 0; i < n; ++i) k += uniform() < p ? 1 : 0;
      return k;
    }
    // Geometric-gap counting: expected work O(n p).
    const double log_q = std::log1p(-p);
    int k = 0;
    double pos = 0.0;
    while (true) {
      pos += std::floor(std::log(uniform_pos()) / log_q) + 1.0;
      if (pos > n) return k;
      ++k;
    }
  }

  // Multinomial(n, probs) via sequential conditional binomials.
  std::vector<int> multinomial(int n, const std::vector<double>& probs) {
    std::vector<int> out(probs.size(), 0);
    double rest = 0.0;
    for (double q : probs) rest += q;
    int remaining = n;
    for (std::size_t j = 0; j + 1 < probs.size() && remaining > 0; ++j) {
      const double q = probs[j] / rest;
      out[j] = binomial(remaining, std::min(1.0, std::max(0.0, q)));
      remaining -= out[j];
      rest -= probs[j];
    }
    if (!probs.empty()) out[probs.size() - 1] += remaining;
    return out;
  }

  // Draws an index proportional to exp(log_w); log-weights need not be
  // normalized.
  std::size_t categorical_log(const std::vector<double>& log_w) {
    require(!log_w.empty(), "categorical_log: empty weights");
    const double z = log_sum_exp(log_w);
    require(z != neg_inf, "categorical_log: all weights zero");
    double u = uniform_pos();
    double cum = 0.0;
    for (std::size_t i = 0; i < log_w.size(); ++i) {
      cum += std::exp(log_w[i] - z);
      if (u <= cum) return i;
    }
    return log_w.size() - 1;  // guard against rounding at the top end
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t split_counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Systematic resampling: N evenly spaced points with a common uniform
// offset, against the normalized weights exp(log_w - lse(log_w)).
inline std::vector<std::size_t> systematic_resample(
    const std::vector<double>& log_w, std::size_t n, Rng& rng) {
  require(!log_w.empty() && n > 0, "systematic_resample: empty input");
  const double z = log_sum_exp(log_w);
  require(z != neg_inf, "systematic_resample: all weights zero");
  std::vector<std::size_t> idx(n);
  const double u0 = rng.uniform() / static_cast<double>(n);
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double target = u0 + static_cast<double>(k) / static_cast<double>(n);
    while (cum + std::exp(log_w[i] - z) < target && i + 1 < log_w.size()) {
      cum += std::exp(log_w[i] - z);
      ++i;
    }
    idx[k] = i;
  }
  return idx;
}

// Effective sample size of a log-weight vector.
inline double effective_sample_size(const std::vector<double>& log_w) {
  const double z = log_sum_exp(log_w);
  double sumsq = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - z);
    sumsq += w * w;
  }
  return 1.0 / sumsq;
}

}  // namespace dualhmm
