#pragma once

// Shared numeric utilities and error types for the dualhmm library.

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualhmm {

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user input: bad parameters, malformed files, inconsistent shapes.
// The CLI maps this to exit code 2.
struct ValidationError : Error {
  using Error::Error;
};

// A numeric guarantee could not be met (precision exhausted, residual too
// large, series refinement cap exceeded).
struct NumericError : Error {
  using Error::Error;
};

// An iterative procedure failed to converge within its budget.
struct ConvergenceError : Error {
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// Overload for literal messages: avoids materializing a std::string on every
// successful check, which matters inside per-component inner loops.
inline void require(bool cond, const char* msg) {
  if (!cond) throw ValidationError(msg);
}

// Thread-safe log-gamma (boost::math does not touch the global signgam).
inline double lgamma(double x) { return boost::math::lgamma(x); }

// log Gamma(n) for integer n >= 1, memoized.  Grows on demand; thread_local
// so parallel MCMC chains do not contend.
inline double lgamma_int(int n) {
  thread_local std::vector<double> cache{neg_inf, 0.0, 0.0};  // lg(0*),lg(1),lg(2)
  if (n < 1) throw ValidationError("lgamma_int: argument must be >= 1");
  while (static_cast<int>(cache.size()) <= n) {
    const double m = static_cast<double>(cache.size() - 1);
    cache.push_back(cache.back() + std::log(m));
  }
  return cache[static_cast<std::size_t>(n)];
}

// log n! for integer n >= 0.
inline double log_factorial(int n) { return lgamma_int(n + 1); }

// log of the binomial coefficient C(n, k).
inline double log_choose(int n, int k) {
  if (k < 0 || k > n) return neg_inf;
  return log_factorial(n) - log_factorial(k) - log_factorial(n - k);
}

// log(exp(a) + exp(b)) without overflow; tolerates -inf operands.
inline double log_add_exp(double a, double b) {
  if (a == neg_inf) return b;
  if (b == neg_inf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(sum_i exp(v_i)); returns -inf for an empty or all -inf input.
inline double log_sum_exp(const std::vector<double>& v) {
  double hi = neg_inf;
  for (double x : v) hi = std::max(hi, x);
  if (hi == neg_inf) return neg_inf;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

// Binomial(k; n, p) in log-domain.
inline double log_binomial_pmf(int k, int n, double p) {
  if (k < 0 || k > n) return neg_inf;
  if (p <= 0.0) return k == 0 ? 0.0 : neg_inf;
  if (p >= 1.0) return k == n ? 0.0 : neg_inf;
  return log_choose(n, k) + k * std::log(p) + (n - k) * std::log1p(-p);
}

// Poisson(k; mean) in log-domain.
inline double log_poisson_pmf(int k, double mean) {
  if (k < 0) return neg_inf;
  if (mean <= 0.0) return k == 0 ? 0.0 : neg_inf;
  return k * std::log(mean) - mean - log_factorial(k);
}

// Negative binomial with r successes and success probability p, i.e.
// pmf(y) = C(y+r-1, y) p^r (1-p)^y, the Gamma(r, rate)–Poisson marginal
// with p = rate / (rate + intensity).
inline double log_negative_binomial_pmf(int y, double r, double p) {
  if (y < 0) return neg_inf;
  if (p >= 1.0) return y == 0 ? 0.0 : neg_inf;  // all mass at zero; avoids 0 * log(0)
  return lgamma(y + r) - lgamma(r) - log_factorial(y) + r * std::log(p) +
         y * std::log1p(-p);
}

// Gamma(shape, rate) log-density.
inline double log_gamma_pdf(double x, double shape, double rate) {
  if (x < 0.0) return neg_inf;
  if (x == 0.0) return shape < 1.0 ? std::numeric_limits<double>::infinity()
                                   : (shape == 1.0 ? std::log(rate) : neg_inf);
  return shape * std::log(rate) - lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

// Regularized lower incomplete gamma: P(shape, rate * x) = Gamma CDF.
inline double gamma_cdf(double x, double shape, double rate) {
  if (x <= 0.0) return 0.0;
  return boost::math::gamma_p(shape, rate * x);
}

inline bool almost_equal(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

// log of the multivariate beta function B(a) = prod Gamma(a_j) / Gamma(sum a_j).
inline double log_beta_vec(const std::vector<double>& a) {
  double acc = 0.0;
  double total = 0.0;
  for (double v : a) {
    require(v > 0.0, "beta function arguments must be positive");
    acc += lgamma(v);
    total += v;
  }
  return acc - lgamma(total);
}

// Dirichlet(alpha) log-density at a simplex point (uses the first K-1
// coordinates as the free ones; x must sum to one).
inline double log_dirichlet_pdf(const std::vector<double>& x, const std::vector<double>& alpha) {
  require(x.size() == alpha.size() && !x.empty(), "dimension mismatch in Dirichlet density");
  double acc = -log_beta_vec(alpha);
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] < 0.0) return neg_inf;
    if (x[j] == 0.0) {
      if (alpha[j] > 1.0) return neg_inf;
      if (alpha[j] < 1.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    acc += (alpha[j] - 1.0) * std::log(x[j]);
  }
  return acc;
}

// Multinomial log-pmf of counts with the given cell probabilities; the total
// is taken from the counts themselves.
inline double log_multinomial_pmf(const std::vector<int>& counts,
                                  const std::vector<double>& probs) {
  require(counts.size() == probs.size() && !counts.empty(),
          "dimension mismatch in multinomial pmf");
  int total = 0;
  double acc = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    require(counts[j] >= 0, "multinomial counts must be nonnegative");
    require(probs[j] >= 0.0, "multinomial probabilities must be nonnegative");
    total += counts[j];
    if (counts[j] > 0) {
      if (probs[j] == 0.0) return neg_inf;
      acc += counts[j] * std::log(probs[j]) - log_factorial(counts[j]);
    }
  }
  return acc + log_factorial(total);
}

}  // namespace dualhmm
