#include <catch2/catch_amalgamated.hpp>

#include "dualhmm/death.hpp"
#include "dualhmm/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <map>

using namespace dualhmm;

namespace {

// Death intensities of the K-type neutral diffusion dual: λ_n = n(θ+n−1)/2.
DeathRateSpec wf_rates(double theta_total) {
  return DeathRateSpec::homogeneous(
      [theta_total](int n) { return n * (theta_total + n - 1.0) / 2.0; });
}

}  // namespace

TEST_CASE("level_coefficient: drop 0 is a bare exponential") {
  auto spec = wf_rates(3.0);
  for (int n : {0, 1, 5, 12}) {
    for (double t : {0.05, 0.7, 3.0}) {
      const double lam = spec.lambda(n);
      CHECK(level_coefficient(n, 0, t, spec, 0.0) ==
            Catch::Approx(std::exp(-lam * t)).epsilon(1e-13));
    }
  }
}

TEST_CASE("level_coefficient: one-particle closed form and MC oracle") {
  // Level 1, drop 1, θ_total = 3, t = 1: the particle dies with probability
  // 1 − exp(−λ₁), λ₁ = 1·(3+1−1)/2 = 1.5.
  auto spec = wf_rates(3.0);
  const double lam1 = 1.5;
  const double c = level_coefficient(1, 1, 1.0, spec, 0.0);
  const double p_death = lam1 * c;  // γ_{1,1} = λ₁
  CHECK(p_death == Catch::Approx(1.0 - std::exp(-1.5)).epsilon(1e-13));

  Rng rng(2024);
  const int n_paths = 1000000;
  int died = 0;
  for (int i = 0; i < n_paths; ++i)
    died += oracle::simulate_death_path(GridIndex{1}, spec.lambda, 1.0, rng)
                    .norm() == 0
                ? 1
                : 0;
  const double mc = static_cast<double>(died) / n_paths;
  const double se = std::sqrt(p_death * (1 - p_death) / n_paths);
  CHECK(std::abs(mc - p_death) < 3 * se + 1e-12);
}

TEST_CASE("level_coefficient: low precision fails where 512-bit passes") {
  // The alternating sums stay representable but cancel harder as the level
  // grows and the window shrinks; at level 60, t = 0.01, 64-bit arithmetic
  // fails the row-sum residual while the 512-bit default passes.
  auto spec = wf_rates(1.5);
  PrecisionPolicy low{64, 64, 1e-10, 1ull << 30};
  DeathKernel low_kernel(spec, 0.01, 0.0, low);
  CHECK_THROWS_AS(low_kernel.prewarm(60), NumericError);

  PrecisionPolicy high{512, 4096, 1e-10, 1ull << 30};
  DeathKernel high_kernel(spec, 0.01, 0.0, high);
  high_kernel.prewarm(60);  // residual must pass
  CHECK(high_kernel.bits_used() == 512);

  // And the doubling retry rescues a low starting precision.
  PrecisionPolicy retry{64, 4096, 1e-10, 1ull << 30};
  DeathKernel retry_kernel(spec, 0.01, 0.0, retry);
  retry_kernel.prewarm(60);
  CHECK(retry_kernel.bits_used() > 64);
  CHECK(retry_kernel.log_level_prob(60, 30) ==
        Catch::Approx(high_kernel.log_level_prob(60, 30)).epsilon(1e-12));
}

TEST_CASE("transition_row: absorbing zero and vanishing time") {
  auto spec = wf_rates(2.0);
  auto row0 = transition_row(GridIndex{0, 0}, 5.0, spec, 0.0);
  CHECK(row0.probs.size() == 1);
  CHECK(row0.probs.at(GridIndex{0, 0}) == Catch::Approx(0.0).margin(1e-15));

  auto row_fast = transition_row(GridIndex{2, 1}, 1e-9, spec, 0.0);
  CHECK(std::exp(row_fast.probs.at(GridIndex{2, 1})) ==
        Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("transition_row: matches uniformization oracle") {
  // Source (2,1) with the neutral-diffusion rates at |α| = 1.5, t = 0.5.
  auto spec = wf_rates(1.5);
  const GridIndex m{2, 1};
  auto row = transition_row(m, 0.5, spec, 0.0);
  auto ctmc = oracle::CtmcOracle::death_process(m, spec.lambda);
  auto oracle_row = ctmc.row(m, 0.5);
  for (std::size_t i = 0; i < ctmc.states.size(); ++i) {
    const double expect = oracle_row[i];
    const double got = std::exp(row.probs.at(ctmc.states[i]));
    CHECK(got == Catch::Approx(expect).epsilon(1e-8));
  }
}

TEST_CASE("transition_row: row stochasticity across levels and times") {
  auto spec = wf_rates(1.5);
  for (double t : {0.01, 0.1, 1.0, 10.0}) {
    DeathKernel kernel(spec, t, 0.0);
    for (auto m : {GridIndex{30}, GridIndex{17, 13}, GridIndex{10, 9, 11}}) {
      auto row = kernel.row(m);
      CHECK(row.probs.log_total() == Catch::Approx(0.0).margin(1e-10));
      // all keys below source
      for (const auto& [k, lw] : row.probs) CHECK(k.leq(m));
    }
  }
}

TEST_CASE("transition_row: monotone absorption in t") {
  auto spec = wf_rates(2.5);
  const GridIndex m{3, 2};
  double prev = -1.0;
  for (double t : {0.05, 0.2, 0.8, 2.0, 8.0}) {
    auto row = transition_row(m, t, spec, 0.0);
    const double p0 = std::exp(row.probs.at(GridIndex{0, 0}));
    CHECK(p0 >= prev);
    prev = p0;
  }
}

TEST_CASE("transition_row: Chapman-Kolmogorov for the homogeneous case") {
  auto spec = wf_rates(1.5);
  const GridIndex m{6, 4};  // ‖m‖ = 10
  const double s = 0.3, t = 0.6;
  DeathKernel ks(spec, s, 0.0), kt(spec, t, 0.0), kst(spec, s + t, 0.0);
  auto direct = kst.row(m);

  LogWeightMap composed;
  auto first = ks.row(m);
  for (const auto& [mid, lw1] : first.probs) {
    auto second = kt.row(mid);
    for (const auto& [dst, lw2] : second.probs)
      composed.accumulate(dst, lw1 + lw2);
  }
  for (const auto& [dst, lw] : direct.probs)
    CHECK(std::exp(composed.at(dst)) ==
          Catch::Approx(std::exp(lw)).margin(1e-8));
}

TEST_CASE("transition_row: coordinate split is exactly hypergeometric") {
  auto spec = wf_rates(3.5);
  const GridIndex m{4, 2, 3};
  auto row = transition_row(m, 0.4, spec, 0.0);
  // For each total drop s, p_{m,m−i} / Σ_{‖j‖=s} p_{m,m−j} = MVH(i; m, s).
  std::map<int, double> level_total;
  for (const auto& [dst, lw] : row.probs) {
    const int s = m.norm() - dst.norm();
    auto [it, ok] = level_total.try_emplace(s, lw);
    if (!ok) it->second = log_add_exp(it->second, lw);
  }
  for (const auto& [dst, lw] : row.probs) {
    const GridIndex i = m.minus(dst);
    const double cond = lw - level_total.at(i.norm());
    CHECK(cond == Catch::Approx(log_mvh(i, m)).margin(1e-12));
  }
}

TEST_CASE("binomial_row: listed cases") {
  auto row0 = binomial_row(0, 0.5);
  CHECK(row0.probs.size() == 1);
  CHECK(row0.probs.at(GridIndex{0}) == Catch::Approx(0.0).margin(1e-15));

  auto row1 = binomial_row(1, 0.25);
  CHECK(std::exp(row1.probs.at(GridIndex{1})) == Catch::Approx(0.25));
  CHECK(std::exp(row1.probs.at(GridIndex{0})) == Catch::Approx(0.75));

  CHECK_THROWS_AS(binomial_row(2, 0.0), ValidationError);
  CHECK_THROWS_AS(binomial_row(2, 1.0), ValidationError);

  // Row sums are exactly 1 up to floating point for a range of m.
  for (int m : {1, 3, 10, 200}) {
    auto row = binomial_row(m, 0.37);
    CHECK(row.probs.log_total() == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("binomial_row: agrees with MC death-process simulation") {
  // Independent unit-rate deaths: survive probability e^{-t}; the count of
  // survivors of m = 3 must be Binomial(3, e^{-t}).
  const double t = 0.9;
  const double p = std::exp(-t);
  auto row = binomial_row(3, p);
  auto unit_rates =
      DeathRateSpec::homogeneous([](int n) { return static_cast<double>(n); });
  Rng rng(555);
  const int n_paths = 400000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < n_paths; ++i) {
    auto end = oracle::simulate_death_path(GridIndex{3}, unit_rates.lambda, t,
                                           rng);
    counts[static_cast<std::size_t>(end.norm())] += 1;
  }
  for (int n = 0; n <= 3; ++n) {
    const double expect = std::exp(row.probs.at(GridIndex{n}));
    const double mc = static_cast<double>(counts[static_cast<std::size_t>(n)]) / n_paths;
    const double se = std::sqrt(expect * (1 - expect) / n_paths);
    CHECK(std::abs(mc - expect) < 3 * se + 1e-12);
  }
}

TEST_CASE("factor cache: size accounting and determinism") {
  auto spec = wf_rates(2.0);
  DeathKernel k0(spec, 0.5, 0.0);
  k0.prewarm(0);
  CHECK(k0.stored_coefficients() == 1);

  DeathKernel k100(spec, 0.5, 0.0);
  k100.prewarm(100);
  CHECK(k100.stored_coefficients() == 5151);

  // Cached and fresh evaluations agree bitwise.
  DeathKernel warm(spec, 0.5, 0.0);
  warm.prewarm(12);
  auto cached = warm.row(GridIndex{7, 5});
  auto fresh = transition_row(GridIndex{7, 5}, 0.5, spec, 0.0);
  for (const auto& [k, lw] : cached.probs) CHECK(lw == fresh.probs.at(k));

  // Memory cap enforcement.
  PrecisionPolicy tiny_cap;
  tiny_cap.cache_max_bytes = 1024;
  DeathKernel capped(spec, 0.5, 0.0, tiny_cap);
  CHECK_THROWS_AS(capped.prewarm(100), ResourceError);
}

TEST_CASE("DeathRateSpec validation") {
  auto bad0 = DeathRateSpec::homogeneous([](int) { return 1.0; });
  CHECK_THROWS_AS(transition_row(GridIndex{1}, 0.5, bad0, 0.0),
                  ValidationError);
  auto nonmono = DeathRateSpec::homogeneous(
      [](int n) { return n == 0 ? 0.0 : 1.0 / n; });
  CHECK_THROWS_AS(transition_row(GridIndex{2}, 0.5, nonmono, 0.0),
                  ValidationError);
}

TEST_CASE("general spectral path reproduces the binomial row") {
  // Unit per-particle rates (λ_n = n) on a transformed clock R give
  // independent thinning: the general alternating-sum machinery must equal
  // Binomial(m, e^{-R}) rows exactly.
  const double r_clock = 1.37;
  DeathRateSpec unit{[](int n) { return static_cast<double>(n); },
                     [r_clock](double t, double) { return r_clock * t; }};
  auto general = transition_row(GridIndex{12}, 1.0, unit, 0.0);
  auto closed = binomial_row(12, std::exp(-r_clock));
  for (const auto& [k, lw] : general.probs)
    CHECK(lw == Catch::Approx(closed.probs.at(k)).margin(1e-11));
}
