// Ancestral-lineage-count series of the neutral K-type diffusion: the number
// of surviving lineages over an interval of length t has probabilities
//   q_m = sum_{j>=0} (-1)^j b_{m+j}(m),
//   b_i(m) = [(theta + 2i - 1) (theta + m)_{(i-1)} / (m! (i-m)!)]
//            e^{-i (i + theta - 1) t / 2},
// an alternating series whose terms only start decaying at a known onset.
// This file provides extended-precision evaluation of the series and an
// exact sampler for m (optionally reweighted by positive per-m factors with
// a uniform upper bound) based on bracketing partial sums.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "dualhmm/bigfloat.hpp"
#include "dualhmm/common.hpp"
#include "dualhmm/rng.hpp"

namespace dualhmm {

struct SeriesPolicy {
  unsigned precision_bits = 512;
  // Total bracket-refinement budget per draw before giving up.
  long max_refine = 1000000;
  // Below this elapsed time the series converges impractically slowly and the
  // sampler refuses to run.
  double min_dt = 0.05;
};

class AncestralSeries {
 public:
  AncestralSeries(double t, double theta, SeriesPolicy policy = {})
      : t_(t), theta_(theta), policy_(policy) {
    require(std::isfinite(t) && std::isfinite(theta), "series arguments must be finite");
    require(theta > 0.0, "series mutation parameter must be positive");
    require(t >= policy_.min_dt,
            "elapsed time " + std::to_string(t) + " is below the supported minimum " +
                std::to_string(policy_.min_dt) + " for the lineage-count series");
  }

  double t() const { return t_; }
  double theta() const { return theta_; }

  // First j >= 0 from which the term sequence b_{m+j}(m) decreases (and then
  // keeps decreasing indefinitely).
  int decay_onset(int m) {
    require(m >= 0, "lineage count must be nonnegative");
    auto it = onset_.find(m);
    if (it != onset_.end()) return it->second;
    PrecisionGuard guard(policy_.precision_bits);
    ensure_terms(m, 1);
    int j = 0;
    while (true) {
      ensure_terms(m, j + 2);
      const auto& ts = terms_[static_cast<std::size_t>(m)];
      if (ts[static_cast<std::size_t>(j) + 1] < ts[static_cast<std::size_t>(j)]) break;
      ++j;
      require(j < 1000000, "term decay onset not found");
    }
    onset_.emplace(m, j);
    return j;
  }

  // Threshold beyond which every lineage count has immediately decaying
  // terms: inf{ i >= max(1/t - (theta+1)/2, 0) : (theta+2i+1) e^{-(2i+theta)t/2} < 1 }.
  int decay_all_threshold() const {
    const double start = std::max(1.0 / t_ - 0.5 * (theta_ + 1.0), 0.0);
    int i = static_cast<int>(std::ceil(start));
    while (std::log(theta_ + 2.0 * i + 1.0) - 0.5 * (2.0 * i + theta_) * t_ >= 0.0) {
      ++i;
      require(i < 10000000, "decay threshold scan did not terminate");
    }
    return i;
  }

  // Bracket [lower, upper] for q_m using depth-pair index i_m (cuts at term
  // 2 i_m + 1 and 2 i_m); valid once 2 i_m covers the decay onset, which the
  // function enforces by raising the depth to its minimum.
  std::pair<double, double> q_bracket(int m, int depth_pairs) {
    PrecisionGuard guard(policy_.precision_bits);
    const int min_depth = (decay_onset(m) + 1) / 2;
    const int depth = std::max(depth_pairs, min_depth);
    ensure_terms(m, 2 * depth + 2);
    return {to_double(partial_sum(m, 2 * depth + 1)), to_double(partial_sum(m, 2 * depth))};
  }

  // High-precision q_m, refined until the bracket width drops below tol.
  double q(int m, double tol = 1e-13) {
    PrecisionGuard guard(policy_.precision_bits);
    int depth = (decay_onset(m) + 1) / 2;
    for (long round = 0; round < policy_.max_refine; ++round) {
      ensure_terms(m, 2 * depth + 2);
      const BigFloat lo = partial_sum(m, 2 * depth + 1);
      const BigFloat hi = partial_sum(m, 2 * depth);
      if (to_double(hi - lo) < tol) {
        const double value = to_double((lo + hi) / 2);
        return value < 0.0 ? 0.0 : value;
      }
      ++depth;
    }
    throw ConvergenceError("lineage-count series did not reach tolerance at m=" +
                           std::to_string(m));
  }

  // q_0 .. q_{m_max}.
  std::vector<double> pmf(int m_max, double tol = 1e-13) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m_max) + 1);
    for (int m = 0; m <= m_max; ++m) out.push_back(q(m, tol));
    return out;
  }

  // Exact draw of the lineage count with unit reweighting.
  int sample(Rng& rng) { return sample_impl(nullptr, 0.0, rng); }

  // Exact draw from the reweighted law proportional to exp(log_reweight(m)) q_m.
  // log_bound must dominate log_reweight(m) for every m.
  int sample_reweighted(const std::function<double(int)>& log_reweight, double log_bound,
                        Rng& rng) {
    require(static_cast<bool>(log_reweight), "reweight callback missing");
    return sample_impl(&log_reweight, log_bound, rng);
  }

 private:
  // b_{m+j}(m) for j = 0..count-1, extended on demand via the term ratio
  //   b_{i+1}(m)/b_i(m) = [(theta+2i+1)/(theta+2i-1)] [(theta+m+i-1)/(i+1-m)]
  //                       e^{-(2i+theta) t/2},
  // seeded by b_m(m) = Gamma(theta+2m) / (Gamma(theta+m) m!) e^{-m(m+theta-1)t/2}.
  void ensure_terms(int m, int count) {
    auto& ts = terms_[static_cast<std::size_t>(m)];
    auto& ps = prefix_[static_cast<std::size_t>(m)];
    if (ts.empty()) {
      const BigFloat th(theta_);
      const BigFloat lead = boost::math::lgamma(th + 2 * m) - boost::math::lgamma(th + m) -
                            boost::math::lgamma(BigFloat(m + 1)) -
                            BigFloat(0.5 * m * (m + theta_ - 1.0) * t_);
      ts.push_back(exp(lead));
      ps.push_back(ts.back());
    }
    while (static_cast<int>(ts.size()) < count) {
      const int j = static_cast<int>(ts.size()) - 1;
      const int i = m + j;
      BigFloat ratio;
      if (i == 0) {
        // Only reachable for m = 0; the (theta - 1) factors cancel exactly.
        ratio = BigFloat(theta_ + 1.0) * exp(BigFloat(-0.5 * theta_ * t_));
      } else {
        ratio = (BigFloat(theta_ + 2.0 * i + 1.0) / BigFloat(theta_ + 2.0 * i - 1.0)) *
                (BigFloat(theta_ + m + i - 1.0) / BigFloat(i + 1 - m)) *
                exp(BigFloat(-0.5 * (2.0 * i + theta_) * t_));
      }
      ts.push_back(ts.back() * ratio);
      const BigFloat term = ts.back();
      ps.push_back((j + 1) % 2 == 0 ? ps.back() + term : ps.back() - term);
    }
  }

  // sum_{j'=0}^{j} (-1)^{j'} b_{m+j'}(m); requires terms present.
  const BigFloat& partial_sum(int m, int j) {
    ensure_terms(m, j + 1);
    return prefix_[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
  }

  // Bracketing sampler. Maintains, for stages m = 0..M, depth indices i_m
  // and the running weighted partial sums; classifies U against the target
  // cumulative distribution, growing depths and stages until certain.
  int sample_impl(const std::function<double(int)>* log_reweight, double log_bound, Rng& rng) {
    PrecisionGuard guard(policy_.precision_bits);
    const double u = rng.uniform_pos();
    const BigFloat big_u(u);

    std::vector<int> depth;          // i_m per stage
    std::vector<BigFloat> weight;    // reweight factor per stage (scaled)
    std::vector<BigFloat> lo_stage;  // weight_m * S^-(m), current depths
    std::vector<BigFloat> hi_stage;  // weight_m * S^+(m)
    std::vector<BigFloat> lo_unit;   // S^-(m) with unit weights (for the tail bound)
    std::vector<BigFloat> hi_unit;   // S^+(m) with unit weights
    BigFloat cum_lo(0), cum_hi(0), cum_unit_lo(0), cum_unit_hi(0);

    auto stage_bounds = [&](int m) {
      const int d = depth[static_cast<std::size_t>(m)];
      const BigFloat s_lo = partial_sum(m, 2 * d + 1);
      const BigFloat s_hi = partial_sum(m, 2 * d);
      lo_stage[static_cast<std::size_t>(m)] = weight[static_cast<std::size_t>(m)] * s_lo;
      hi_stage[static_cast<std::size_t>(m)] = weight[static_cast<std::size_t>(m)] * s_hi;
      lo_unit[static_cast<std::size_t>(m)] = s_lo;
      hi_unit[static_cast<std::size_t>(m)] = s_hi;
    };

    auto push_stage = [&](int m) {
      depth.push_back((decay_onset(m) + 1) / 2);
      // Reweights are scaled by exp(-log_bound) so every factor is <= 1 and
      // the total-mass upper bound for the tail is simply the unit tail.
      const double lw = log_reweight ? (*log_reweight)(m)-log_bound : 0.0;
      require(lw <= 1e-9, "reweight bound is not an upper bound at m=" + std::to_string(m));
      weight.push_back(exp(BigFloat(lw)));
      lo_stage.emplace_back(0);
      hi_stage.emplace_back(0);
      lo_unit.emplace_back(0);
      hi_unit.emplace_back(0);
      stage_bounds(m);
      cum_lo += lo_stage.back();
      cum_hi += hi_stage.back();
      cum_unit_lo += lo_unit.back();
      cum_unit_hi += hi_unit.back();
    };

    auto refresh = [&] {
      cum_lo = 0;
      cum_hi = 0;
      cum_unit_lo = 0;
      cum_unit_hi = 0;
      for (int m = 0; m < static_cast<int>(depth.size()); ++m) {
        stage_bounds(m);
        cum_lo += lo_stage[static_cast<std::size_t>(m)];
        cum_hi += hi_stage[static_cast<std::size_t>(m)];
        cum_unit_lo += lo_unit[static_cast<std::size_t>(m)];
        cum_unit_hi += hi_unit[static_cast<std::size_t>(m)];
      }
    };

    push_stage(0);
    int m = 0;  // current candidate stage
    BigFloat below_lo(0), below_hi(0);  // cumulative strictly below stage m

    for (long round = 0; round < policy_.max_refine; ++round) {
      // Total-mass bracket. Unit weights sum to exactly one; otherwise the
      // tail beyond the deepest computed stage has unit-weight mass at most
      // 1 - sum_lo(unit) and carries scaled weights <= 1.
      BigFloat z_lo(1), z_hi(1);
      if (log_reweight) {
        BigFloat unit_tail = 1 - cum_unit_lo;
        if (unit_tail < 0) unit_tail = 0;
        z_lo = cum_lo;
        z_hi = cum_hi + unit_tail;
      }

      const BigFloat target_lo = big_u * z_lo;
      const BigFloat target_hi = big_u * z_hi;
      const BigFloat through_lo = below_lo + lo_stage[static_cast<std::size_t>(m)];
      const BigFloat through_hi = below_hi + hi_stage[static_cast<std::size_t>(m)];

      if (through_lo > target_hi) return m;  // certainly cum(m) > U Z
      if (through_hi < target_lo) {          // certainly cum(m) < U Z
        below_lo = through_lo;
        below_hi = through_hi;
        ++m;
        if (m == static_cast<int>(depth.size())) push_stage(m);
        continue;
      }

      // Undecided: either the total-mass tail bound or the bracket widths are
      // the binding slack.  The unit tail 1 - sum S^-(m) splits into true
      // tail mass beyond the deepest stage plus the unit bracket slack
      // sum (S^+ - S^-); only the former shrinks by adding stages, so extend
      // exactly while it dominates and deepen otherwise.  (Unit weights have
      // a zero tail by construction, so they always deepen.)
      if (log_reweight) {
        BigFloat unit_tail = 1 - cum_unit_lo;
        if (unit_tail < 0) unit_tail = 0;
        if (unit_tail > cum_unit_hi - cum_unit_lo) {
          push_stage(static_cast<int>(depth.size()));
        } else {
          for (auto& d : depth) ++d;
        }
      } else {
        for (auto& d : depth) ++d;
      }
      refresh();
      below_lo = 0;
      below_hi = 0;
      for (int s = 0; s < m; ++s) {
        below_lo += lo_stage[static_cast<std::size_t>(s)];
        below_hi += hi_stage[static_cast<std::size_t>(s)];
      }
    }
    throw ConvergenceError("lineage-count sampler exceeded its refinement budget");
  }

  double t_ = 0.0;
  double theta_ = 0.0;
  SeriesPolicy policy_;
  std::map<int, std::vector<BigFloat>> terms_;   // terms_[m][j] = b_{m+j}(m)
  std::map<int, std::vector<BigFloat>> prefix_;  // alternating prefix sums
  std::map<int, int> onset_;
};

}  // namespace dualhmm
