#pragma once

// Transition probabilities of the pure-death dual process on Z₊^K.
//
// The level process ‖M_t‖ is a one-dimensional death chain with intensities
// λ_n, possibly run on the transformed clock ∫₀ᵗ ρ(Θ_s) ds.  Its transition
// probabilities have a spectral (sum-of-exponentials) form whose terms
// cancel catastrophically, so they are evaluated in arbitrary precision and
// validated by a row-sum residual.  Given the level marginal, the choice of
// which coordinates died is multivariate hypergeometric.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dualhmm/bigfloat.hpp"
#include "dualhmm/common.hpp"
#include "dualhmm/grid.hpp"

namespace dualhmm {

// Resource exhaustion distinct from bad input (maps to a runtime failure).
struct ResourceError : Error {
  using Error::Error;
};

struct PrecisionPolicy {
  unsigned bits = 512;         // starting mantissa bits
  unsigned max_bits = 4096;    // retry ceiling (doubling)
  double row_sum_tol = 1e-10;  // |level-row sum − 1| acceptance
  std::size_t cache_max_bytes = 1ull << 30;
};

// Death intensities λ_n per total level, plus the elapsed transformed clock
// ∫₀ᵗ ρ(Θ_s) ds as a function of (t, θ).  Models with constant ρ ≡ 1 use
// rho_integral(t, θ) = t.
struct DeathRateSpec {
  std::function<double(int)> lambda;
  std::function<double(double, double)> rho_integral;

  static DeathRateSpec homogeneous(std::function<double(int)> lam) {
    return DeathRateSpec{std::move(lam), [](double t, double) { return t; }};
  }
};

// One row p_{m, ·}(Δ; θ) of the dual transition kernel, in log-domain.
struct TransitionRow {
  GridIndex source;
  double elapsed = 0.0;
  LogWeightMap probs;  // keys n ≤ source
};

// log of the multivariate hypergeometric pmf for the drop pattern i out of
// m given total drop ‖i‖ (which coordinates died, given how many died).
inline double log_mvh(const GridIndex& i, const GridIndex& m) {
  double acc = -log_choose(m.norm(), i.norm());
  for (int j = 0; j < m.dim(); ++j) acc += log_choose(m[j], i[j]);
  return acc;
}

// Precomputed level coefficients for one (t, θ, rate-spec) combination:
// gc(n, d) := γ_{n,d} · C_{n,n−d}(t) is the probability that the level
// process started at n sits at n−d after the elapsed clock.  The table is
// triangular and grows on demand; a failed row-sum residual triggers a full
// rebuild at doubled precision.
class DeathKernel {
 public:
  DeathKernel(DeathRateSpec spec, double t, double theta,
              PrecisionPolicy policy = {})
      : spec_(std::move(spec)), t_(t), theta_(theta), policy_(policy),
        bits_(policy.bits) {
    require(t_ > 0.0, "DeathKernel: elapsed time must be > 0");
    require(static_cast<bool>(spec_.lambda), "DeathKernel: lambda missing");
    require(static_cast<bool>(spec_.rho_integral),
            "DeathKernel: rho_integral missing");
    clock_ = spec_.rho_integral(t_, theta_);
    require(clock_ >= 0.0, "DeathKernel: negative transformed clock");
    require(std::abs(spec_.rho_integral(0.0, theta_)) == 0.0,
            "DeathKernel: rho_integral(0) must be 0");
  }

  double elapsed() const { return t_; }
  double theta() const { return theta_; }
  unsigned bits_used() const { return bits_; }
  int max_level() const { return static_cast<int>(log_gc_.size()) - 1; }

  // Precomputes all level coefficients up to max_level (the quadratic-size
  // factor cache); later row() calls at the same (t, θ) are pure lookups.
  void prewarm(int max_lvl) { ensure_level(max_lvl); }

  std::size_t stored_coefficients() const {
    const std::size_t n = log_gc_.size();
    return n * (n + 1) / 2;
  }

  // log P(level n → level n−d) over the elapsed clock.
  double log_level_prob(int n, int d) {
    require(n >= 0 && d >= 0 && d <= n, "DeathKernel: bad level/drop");
    ensure_level(n);
    return log_gc_[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
  }

  // The bare alternating-sum coefficient C_{n, n−d}(t), rounded to double.
  double coefficient(int n, int d) {
    require(n >= 0 && d >= 0 && d <= n, "DeathKernel: bad level/drop");
    ensure_level(n);
    return c_double_[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
  }

  // Full transition row from a grid point: level marginal times the
  // multivariate hypergeometric coordinate split.
  TransitionRow row(const GridIndex& m) {
    ensure_level(m.norm());
    TransitionRow out{m, t_, {}};
    std::vector<GridIndex> drops;
    drops.reserve(64);
    detail::enumerate_box(m, drops);
    for (const auto& i : drops) {
      const double lp = log_gc_[static_cast<std::size_t>(m.norm())]
                               [static_cast<std::size_t>(i.norm())] +
                        log_mvh(i, m);
      out.probs.insert(m.minus(i), lp);
    }
    out.probs.mark_normalized();
    return out;
  }

 private:
  void ensure_level(int n) {
    while (static_cast<int>(log_gc_.size()) <= n) {
      const int next = static_cast<int>(log_gc_.size());
      const std::size_t entries =
          static_cast<std::size_t>(next + 1) * (next + 2) / 2;
      if (entries * (bits_ / 8 + 48) > policy_.cache_max_bytes)
        throw ResourceError("DeathKernel: coefficient cache budget exceeded");
      if (!append_level(next)) {
        // Residual failure: retry everything at doubled precision.
        if (bits_ >= policy_.max_bits)
          throw NumericError(
              "DeathKernel: row-sum residual exceeds tolerance at max "
              "precision (" + std::to_string(policy_.max_bits) + " bits)");
        bits_ = std::min(policy_.max_bits, bits_ * 2);
        const int want = static_cast<int>(log_gc_.size());
        log_gc_.clear();
        c_double_.clear();
        lambda_.clear();
        (void)want;  // rebuild resumes from level 0 in the while loop
      }
    }
  }

  // Computes row `n` of the triangular table; returns false on a residual
  // failure (signalling a precision retry).
  bool append_level(int n) {
    PrecisionGuard guard(bits_);
    while (static_cast<int>(lambda_.size()) <= n) {
      const int k = static_cast<int>(lambda_.size());
      const double lk = spec_.lambda(k);
      if (k == 0)
        require(lk == 0.0, "DeathRateSpec: lambda_0 must be 0");
      else
        require(lk > lambda_.back(),
                "DeathRateSpec: lambda must be strictly increasing");
      lambda_.push_back(lk);
    }
    std::vector<double> log_row(static_cast<std::size_t>(n) + 1, neg_inf);
    std::vector<double> c_row(static_cast<std::size_t>(n) + 1, 0.0);
    BigFloat row_sum = 0;
    for (int d = 0; d <= n; ++d) {
      // C_{n,n−d}(t) = (−1)^d Σ_{k=0}^d e^{−λ_{n−k}·clock} /
      //                Π_{h≠k} (λ_{n−k} − λ_{n−h})
      BigFloat c = 0;
      for (int k = 0; k <= d; ++k) {
        BigFloat denom = 1;
        for (int h = 0; h <= d; ++h) {
          if (h == k) continue;
          denom *= BigFloat(lambda_[static_cast<std::size_t>(n - k)]) -
                   BigFloat(lambda_[static_cast<std::size_t>(n - h)]);
        }
        c += exp(BigFloat(-lambda_[static_cast<std::size_t>(n - k)]) *
                 BigFloat(clock_)) /
             denom;
      }
      if (d % 2 == 1) c = -c;
      BigFloat gamma = 1;
      for (int h = 0; h < d; ++h)
        gamma *= BigFloat(lambda_[static_cast<std::size_t>(n - h)]);
      BigFloat gc = gamma * c;
      if (gc < 0) {
        // A genuinely negative probability can only be residual cancellation
        // noise; treat like a residual failure unless it is tiny.
        if (to_double(gc) < -policy_.row_sum_tol) return false;
        gc = 0;
      }
      row_sum += gc;
      log_row[static_cast<std::size_t>(d)] = log_to_double(gc);
      c_row[static_cast<std::size_t>(d)] = to_double(c);
    }
    if (abs(row_sum - 1) > policy_.row_sum_tol) return false;
    log_gc_.push_back(std::move(log_row));
    c_double_.push_back(std::move(c_row));
    return true;
  }

  DeathRateSpec spec_;
  double t_, theta_, clock_;
  PrecisionPolicy policy_;
  unsigned bits_;
  std::vector<double> lambda_;
  std::vector<std::vector<double>> log_gc_;    // level × drop → log prob
  std::vector<std::vector<double>> c_double_;  // level × drop → C (double)
};

// Single coefficient C_{total_m, total_m − drop}(t), evaluated at the
// policy's starting precision.
inline double level_coefficient(int total_m, int drop, double t,
                                const DeathRateSpec& spec, double theta,
                                const PrecisionPolicy& policy = {}) {
  require(total_m >= 0 && drop >= 0 && drop <= total_m,
          "level_coefficient: need 0 <= drop <= total_m");
  DeathKernel kernel(spec, t, theta, policy);
  return kernel.coefficient(total_m, drop);
}

// Uncached full row (builds a throwaway kernel with precision retry).
inline TransitionRow transition_row(const GridIndex& m, double t,
                                    const DeathRateSpec& spec, double theta,
                                    const PrecisionPolicy& policy = {}) {
  DeathKernel kernel(spec, t, theta, policy);
  return kernel.row(m);
}

// One-dimensional binomial specialization: each of the m particles survives
// the window independently with probability survive_prob.
inline TransitionRow binomial_row(int m, double survive_prob) {
  require(m >= 0, "binomial_row: m must be >= 0");
  require(survive_prob > 0.0 && survive_prob < 1.0,
          "binomial_row: survive_prob must lie in (0,1)");
  TransitionRow out{GridIndex{m}, 0.0, {}};
  for (int n = 0; n <= m; ++n)
    out.probs.append(GridIndex{n}, log_binomial_pmf(n, m, survive_prob));
  out.probs.mark_normalized();
  return out;
}

}  // namespace dualhmm
