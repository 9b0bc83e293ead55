#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <catch2/catch_amalgamated.hpp>

#include "dualhmm/cir.hpp"
#include "dualhmm/engine.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/rng.hpp"
#include "dualhmm/trajectory.hpp"
#include "dualhmm/wf.hpp"

using namespace dualhmm;

namespace {

CirModel bench_model() { return CirModel(from_natural(NaturalCirParams{5.0, 9.6, 8.0}, 1.0)); }

WfModel three_type() {
  WfParams p;
  p.alpha = {1.1, 2.5, 2.1};
  p.emission_total = 3;
  return WfModel(p);
}

ObservationSeries scalar_series(std::vector<double> times, std::vector<std::vector<int>> counts) {
  ObservationSeries s;
  s.times = std::move(times);
  s.observations.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    for (int c : counts[i]) s.observations[i].push_back(GridIndex{c});
  }
  return s;
}

double one_sample_ks(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / n));
    ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return ks;
}

double two_sample_ks(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double ks = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    ks = std::max(ks, std::abs(static_cast<double>(i) / static_cast<double>(a.size()) -
                               static_cast<double>(j) / static_cast<double>(b.size())));
  }
  return ks;
}

// Linear-interpolation CDF lookup on a monotone grid.
double interp_cdf(const std::vector<double>& xs, const std::vector<double>& cdf, double x) {
  if (x <= xs.front()) return 0.0;
  if (x >= xs.back()) return 1.0;
  const auto it = std::upper_bound(xs.begin(), xs.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - xs.begin());
  const double t = (x - xs[hi - 1]) / (xs[hi] - xs[hi - 1]);
  return cdf[hi - 1] + t * (cdf[hi] - cdf[hi - 1]);
}

// Coordinate CDF of a Dirichlet mixture: each component's j-th coordinate is
// Beta(a_j, |a| - a_j).
double wf_coord_cdf(const WfModel& model, const WeightedMixture<NoTheta>& mix, int j, double x) {
  const auto& alpha = model.params().alpha;
  double total_alpha = 0.0;
  for (double a : alpha) total_alpha += a;
  double cdf = 0.0;
  for (const auto& [m, lw] : mix.log_weights) {
    const double aj = alpha[static_cast<std::size_t>(j)] + m[j];
    const double rest = total_alpha + m.norm() - aj;
    cdf += std::exp(lw) * boost::math::ibeta(aj, rest, x);
  }
  return cdf;
}

}  // namespace

TEST_CASE("backward kernel slice masses sum to one") {
  const CirModel model = bench_model();
  for (const double dt : {0.05, 0.7}) {
    const auto series = scalar_series({0.0, dt}, {{2}, {1}});
    const auto fo = run_filter(model, series);
    const auto& fil = fo.filtered[0];
    const auto& pred = fo.predictive[1];

    const double half_delta = 0.5 * model.params().delta;
    const double vartheta = fil.theta;
    const double tp = model.theta_prime(dt);
    const double rate_next = model.params().theta0() + tp;
    const double keep_prob = vartheta / (vartheta + tp);

    for (const double x_next : {0.37, 2.0, 9.3}) {
      const double log_nu = mixture_log_pdf(model, pred, x_next);
      double mass = 0.0;
      for (int k = 0; k < 4000; ++k) {
        const double log_outer = log_gamma_pdf(x_next, half_delta + k, rate_next) - log_nu;
        double log_slice = neg_inf;
        for (const auto& [m, lw] : fil.log_weights) {
          log_slice = log_add_exp(
              log_slice,
              lw + log_negative_binomial_pmf(k, half_delta + static_cast<double>(m.norm()),
                                             keep_prob));
        }
        mass += std::exp(log_outer + log_slice);
      }
      CHECK(std::abs(mass - 1.0) <= 1e-8);
    }
  }
}

TEST_CASE("backward kernel matches the quadrature conditional") {
  const CirModel model = bench_model();
  const double dt = 0.7;
  const auto series = scalar_series({0.0, dt}, {{2}, {1}});
  const auto fo = run_filter(model, series);
  const double x_next = 2.0;

  // Oracle: p(x0 | x1 = x_next, y0) on a sqrt-substituted grid, as filter
  // density times exact transition density, normalized into a CDF.
  const int grid_n = 4000;
  const double u_hi = std::sqrt(40.0);
  std::vector<double> xs(grid_n), pdf(grid_n);
  for (int i = 0; i < grid_n; ++i) {
    const double u = u_hi * (i + 0.5) / grid_n;
    xs[i] = u * u;
    const double ld = mixture_log_pdf(model, fo.filtered[0], xs[i]) +
                      model.log_transition_density(xs[i], x_next, dt);
    pdf[i] = 2.0 * u * std::exp(ld);  // du-weighted integrand
  }
  std::vector<double> cdf(grid_n);
  double acc = 0.0;
  for (int i = 0; i < grid_n; ++i) {
    acc += pdf[i] * (u_hi / grid_n);
    cdf[i] = acc;
  }
  for (double& c : cdf) c /= acc;

  Rng rng(20260815, 11);
  std::vector<double> draws(10000);
  for (double& d : draws) {
    d = cir_backward_step(model, x_next, fo.filtered[0], fo.predictive[1], dt, rng);
  }
  const double ks =
      one_sample_ks(draws, [&](double x) { return interp_cdf(xs, cdf, x); });
  CHECK(ks < 0.02);
}

TEST_CASE("backward kernel decouples over long gaps") {
  const CirModel model = bench_model();
  LogWeightMap w;
  w.insert(GridIndex{1}, std::log(0.3));
  w.insert(GridIndex{4}, std::log(0.7));
  const auto fil = make_mixture(std::move(w), 1.3, 0.0);

  SECTION("tiny but positive innovation rate") {
    const double dt = 5.0;
    const auto pred = predict(model, fil, dt);
    Rng rng(42, 1);
    std::vector<double> a(8000), b(8000);
    for (double& d : a) d = cir_backward_step(model, 1.0, fil, pred, dt, rng);
    for (double& d : b) d = cir_backward_step(model, 40.0, fil, pred, dt, rng);
    CHECK(two_sample_ks(a, b) < 0.02);
  }

  SECTION("innovation rate underflows to zero: exact filter draw") {
    const double dt = 300.0;
    REQUIRE(model.theta_prime(dt) == 0.0);
    const auto pred = predict(model, fil, dt);
    Rng rng(43, 1);
    std::vector<double> draws(8000);
    for (double& d : draws) d = cir_backward_step(model, 2.0, fil, pred, dt, rng);
    const double ks = one_sample_ks(
        draws, [&](double x) { return mixture_cdf_1d(model, fil, x); });
    CHECK(ks < 0.02);
  }
}

TEST_CASE("joint trajectories reproduce the marginal smoothing laws") {
  const CirModel model = bench_model();
  const auto series = scalar_series({0.0, 0.5, 1.2}, {{2}, {1, 3}, {0}});
  const auto fo = run_filter(model, series);
  const auto smoothed = run_smoother(model, series);

  const int n = 10000;
  const auto trajs = sample_joint_cir(model, fo, n, 777);
  REQUIRE(trajs.size() == static_cast<std::size_t>(n));

  for (std::size_t i = 0; i < series.times.size(); ++i) {
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      REQUIRE(trajs[static_cast<std::size_t>(j)].times[i] == series.times[i]);
      vals[static_cast<std::size_t>(j)] = trajs[static_cast<std::size_t>(j)].states[i][0];
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (n - 1);
    const double target = mixture_mean(model, smoothed[i])[0];
    CHECK(std::abs(mean - target) <= 3.0 * std::sqrt(var / n));

    const double ks = one_sample_ks(
        vals, [&](double x) { return mixture_cdf_1d(model, smoothed[i], x); });
    CHECK(ks < 0.05);
  }
}

TEST_CASE("trajectory draws are reproducible and stream-indexed") {
  const CirModel model = bench_model();
  const auto series = scalar_series({0.0, 0.5}, {{2}, {1}});
  const auto fo = run_filter(model, series);

  CHECK(sample_joint_cir(model, fo, 0, 5).empty());

  const auto a = sample_joint_cir(model, fo, 5, 99);
  const auto b = sample_joint_cir(model, fo, 5, 99);
  const auto c = sample_joint_cir(model, fo, 10, 99);
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(a[j].states == b[j].states);
    CHECK(a[j].states == c[j].states);  // draw j is independent of the batch size
  }
  const auto d = sample_joint_cir(model, fo, 5, 100);
  CHECK(a[0].states != d[0].states);
}

TEST_CASE("wright-fisher joint trajectories reproduce the smoothing laws") {
  const WfModel model = three_type();
  ObservationSeries series;
  series.times = {0.0, 0.3};
  series.observations = {{GridIndex{2, 1, 0}, GridIndex{0, 2, 1}}, {GridIndex{1, 1, 1}}};
  const auto ctgs = cost_to_go_recursion(model, series);
  const auto smoothed = run_smoother(model, series);

  const int n = 4000;
  const auto trajs = sample_joint_wf_many(model, series, ctgs, n, 314);
  REQUIRE(trajs.size() == static_cast<std::size_t>(n));

  for (std::size_t i = 0; i < series.times.size(); ++i) {
    const auto target = mixture_mean(model, smoothed[i]);
    for (int j = 0; j < 3; ++j) {
      std::vector<double> vals(static_cast<std::size_t>(n));
      for (int t = 0; t < n; ++t) {
        vals[static_cast<std::size_t>(t)] =
            trajs[static_cast<std::size_t>(t)].states[i][static_cast<std::size_t>(j)];
      }
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= (n - 1);
      CHECK(std::abs(mean - target[static_cast<std::size_t>(j)]) <=
            3.0 * std::sqrt(var / n));

      const double ks = one_sample_ks(
          vals, [&](double x) { return wf_coord_cdf(model, smoothed[i], j, x); });
      CHECK(ks < 0.05);
    }
  }

  const auto again = sample_joint_wf_many(model, series, ctgs, 3, 314);
  for (std::size_t j = 0; j < again.size(); ++j) {
    CHECK(again[j].states == trajs[j].states);
  }
}

TEST_CASE("single-time wright-fisher trajectories follow the posterior") {
  const WfModel model = three_type();
  ObservationSeries series;
  series.times = {0.0};
  series.observations = {{GridIndex{2, 1, 0}, GridIndex{1, 0, 2}}};

  const int n = 20000;
  const auto trajs = sample_joint_wf_many(model, series, {}, n, 2718);
  // Posterior is Dirichlet(alpha + summed counts): alpha + (3, 1, 2).
  const std::vector<double> a = {1.1 + 3, 2.5 + 1, 2.1 + 2};
  const double total = a[0] + a[1] + a[2];
  for (int j = 0; j < 3; ++j) {
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) {
      vals[static_cast<std::size_t>(t)] =
          trajs[static_cast<std::size_t>(t)].states[0][static_cast<std::size_t>(j)];
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    const double aj = a[static_cast<std::size_t>(j)];
    const double target = aj / total;
    const double sd = std::sqrt(aj * (total - aj) / (total * total * (total + 1.0)));
    CHECK(std::abs(mean - target) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
    const double ks = one_sample_ks(vals, [&](double x) {
      return boost::math::ibeta(aj, total - aj, x);
    });
    CHECK(ks < 0.02);
  }
}

TEST_CASE("trajectory sampling validates its inputs") {
  const CirModel model = bench_model();
  const auto series = scalar_series({0.0, 0.5}, {{2}, {1}});
  const auto fo = run_filter(model, series);
  Rng step_rng(1, 2);
  CHECK_THROWS_AS(sample_joint_cir(model, fo, -1, 1), ValidationError);
  CHECK_THROWS_AS(
      cir_backward_step(model, 0.0, fo.filtered[0], fo.predictive[1], 0.5, step_rng),
      ValidationError);
  CHECK_THROWS_AS(
      cir_backward_step(model, 1.0, fo.filtered[0], fo.predictive[1], 0.0, step_rng),
      ValidationError);

  const WfModel wf = three_type();
  ObservationSeries ws;
  ws.times = {0.0, 0.3};
  ws.observations = {{GridIndex{2, 1, 0}}, {GridIndex{1, 1, 1}}};
  Rng rng(1, 1);
  CHECK_THROWS_AS(sample_joint_wf(wf, ws, {}, rng), ValidationError);
}

TEST_CASE("forward simulation produces matched paths and observations") {
  const CirModel model = bench_model();
  Rng rng(5, 5);
  auto [series, traj] =
      simulate_series(model, {0.0, 0.25, 0.5, 1.0}, {3}, rng, std::optional<double>(3.0));
  series.validate();
  REQUIRE(series.size() == 4);
  REQUIRE(traj.states.size() == 4);
  CHECK(traj.states[0][0] == 3.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(series.observations[i].size() == 3);
    CHECK(traj.states[i][0] > 0.0);
  }

  Rng rng2(5, 5);
  auto [series2, traj2] =
      simulate_series(model, {0.0, 0.25, 0.5, 1.0}, {3}, rng2, std::optional<double>(3.0));
  CHECK(traj2.states == traj.states);
  CHECK(series2.observations[3][2] == series.observations[3][2]);

  const WfModel wf = three_type();
  Rng wrng(6, 6);
  auto [wser, wtraj] = simulate_series(wf, {0.0, 0.4}, {2, 5}, wrng);
  REQUIRE(wser.size() == 2);
  CHECK(wser.observations[0].size() == 2);
  CHECK(wser.observations[1].size() == 5);
  for (const auto& x : wtraj.states) {
    double s = 0.0;
    for (double v : x) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }

  CHECK_THROWS_AS(simulate_series(model, {0.0, 0.5}, {1, 2, 3}, rng), ValidationError);
  CHECK_THROWS_AS(simulate_series(model, {0.5, 0.5}, {1}, rng), ValidationError);
}
