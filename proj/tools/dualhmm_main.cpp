// Command-line front end: simulation, exact filtering/smoothing/likelihood,
// joint-trajectory sampling, posterior MCMC, a bootstrap particle-filter
// baseline, and a benchmark harness that emits figure-ready CSV data.
//
// Every command is driven by a JSON config file; --seed and --out override
// the config. Exit codes: 0 success, 2 config/validation error, 1 runtime
// error.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <memory>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "dualhmm/cir.hpp"
#include "dualhmm/engine.hpp"
#include "dualhmm/io.hpp"
#include "dualhmm/mcmc.hpp"
#include "dualhmm/metrics.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/particle.hpp"
#include "dualhmm/trajectory.hpp"
#include "dualhmm/wf.hpp"

namespace fs = std::filesystem;
using dualhmm::io::json;
using namespace dualhmm;

namespace {

// ---------------------------------------------------------------------------
// Config parsing (schema-checked JSON; unknown keys rejected)
// ---------------------------------------------------------------------------

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& ctx) {
  require(j.is_object(), ctx + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const auto& a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    require(ok, ctx + ": unknown key '" + key + "'");
  }
}

const json& get_req(const json& j, const std::string& key, const std::string& ctx) {
  require(j.contains(key), ctx + ": missing required key '" + key + "'");
  return j.at(key);
}

double get_num(const json& j, const std::string& key, const std::string& ctx) {
  const json& v = get_req(j, key, ctx);
  require(v.is_number(), ctx + "." + key + ": expected a number");
  return v.get<double>();
}

double get_num_or(const json& j, const std::string& key, double fallback,
                  const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_number(), ctx + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

long get_int(const json& j, const std::string& key, const std::string& ctx) {
  const json& v = get_req(j, key, ctx);
  require(v.is_number_integer(), ctx + "." + key + ": expected an integer");
  return v.get<long>();
}

long get_int_or(const json& j, const std::string& key, long fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_number_integer(), ctx + "." + key + ": expected an integer");
  return j.at(key).get<long>();
}

bool get_bool_or(const json& j, const std::string& key, bool fallback, const std::string& ctx) {
  if (!j.contains(key)) return fallback;
  require(j.at(key).is_boolean(), ctx + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

std::vector<double> get_num_array(const json& j, const std::string& key,
                                  const std::string& ctx) {
  const json& v = get_req(j, key, ctx);
  require(v.is_array(), ctx + "." + key + ": expected an array");
  std::vector<double> out;
  for (const json& e : v) {
    require(e.is_number(), ctx + "." + key + ": expected numeric entries");
    out.push_back(e.get<double>());
  }
  return out;
}

PruneRule parse_prune(const json& j, const std::string& ctx) {
  check_keys(j, {"rule", "number", "mass", "threshold", "relative"}, ctx);
  const json& rule_j = get_req(j, "rule", ctx);
  require(rule_j.is_string(), ctx + ".rule: expected a string");
  const std::string rule = rule_j.get<std::string>();
  if (rule == "off") return PruneRule::off();
  if (rule == "fixed_number") {
    return PruneRule::fixed_number(static_cast<int>(get_int(j, "number", ctx)));
  }
  if (rule == "fixed_mass") return PruneRule::fixed_mass(get_num(j, "mass", ctx));
  if (rule == "fixed_threshold") {
    return PruneRule::fixed_threshold(get_num(j, "threshold", ctx),
                                      get_bool_or(j, "relative", true, ctx));
  }
  throw ValidationError(ctx + ".rule: unknown rule '" + rule + "'");
}

std::string prune_label(const PruneRule& rule) {
  switch (rule.kind) {
    case PruneRule::Kind::Off:
      return "off";
    case PruneRule::Kind::FixedNumber:
      return "fixed_number:" + std::to_string(rule.number);
    case PruneRule::Kind::FixedMass:
      return "fixed_mass:" + io::format_double(rule.mass);
    case PruneRule::Kind::FixedThreshold:
      return "fixed_threshold:" + io::format_double(rule.threshold);
  }
  return "?";
}

PriorSpec parse_prior(const json& j, const std::string& ctx) {
  check_keys(j, {"type", "rate", "loc", "scale"}, ctx);
  const json& type_j = get_req(j, "type", ctx);
  require(type_j.is_string(), ctx + ".type: expected a string");
  const std::string type = type_j.get<std::string>();
  if (type == "exponential") return PriorSpec::exponential(get_num(j, "rate", ctx));
  if (type == "half_normal") {
    return PriorSpec::half_normal(get_num(j, "loc", ctx), get_num(j, "scale", ctx));
  }
  throw ValidationError(ctx + ".type: unknown prior '" + type + "'");
}

struct RunConfig {
  json root;
  fs::path config_dir;
  std::unique_ptr<CirModel> cir;  // exactly one of cir/wf is set
  std::unique_ptr<WfModel> wf;
  std::optional<std::string> observations;  // resolved path
  PruneRule prune = PruneRule::off();
  std::uint64_t seed = 1;
  fs::path out_dir = "out";
  SeriesPolicy series_policy;
  PrecisionPolicy precision_policy;

  bool is_cir() const { return cir != nullptr; }
};

RunConfig parse_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                       std::optional<std::string> out_override) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  check_keys(root,
             {"model", "observations", "prune", "seed", "out", "precision", "simulate",
              "sample_traj", "mcmc", "pf", "benchmark"},
             "config");

  RunConfig cfg;
  cfg.config_dir = fs::path(path).parent_path();

  if (root.contains("precision")) {
    const json& p = root.at("precision");
    check_keys(p,
               {"precision_bits", "precision_max_bits", "row_sum_tol", "wf_min_dt",
                "series_max_refine"},
               "config.precision");
    cfg.series_policy.precision_bits =
        static_cast<unsigned>(get_int_or(p, "precision_bits", 512, "config.precision"));
    cfg.precision_policy.bits = cfg.series_policy.precision_bits;
    cfg.precision_policy.max_bits =
        static_cast<unsigned>(get_int_or(p, "precision_max_bits", 4096, "config.precision"));
    cfg.precision_policy.row_sum_tol =
        get_num_or(p, "row_sum_tol", 1e-10, "config.precision");
    cfg.series_policy.min_dt = get_num_or(p, "wf_min_dt", 0.05, "config.precision");
    cfg.series_policy.max_refine = get_int_or(p, "series_max_refine", 1000000,
                                              "config.precision");
  }

  const json& model_j = get_req(root, "model", "config");
  require(model_j.is_object(), "config.model: expected an object");
  const json& type_j = get_req(model_j, "type", "config.model");
  require(type_j.is_string(), "config.model.type: expected a string");
  const std::string type = type_j.get<std::string>();
  if (type == "cir") {
    check_keys(model_j, {"type", "a", "b", "s", "emission_rate"}, "config.model");
    NaturalCirParams nat{get_num(model_j, "a", "config.model"),
                         get_num(model_j, "b", "config.model"),
                         get_num(model_j, "s", "config.model")};
    const double rate = get_num_or(model_j, "emission_rate", 1.0, "config.model");
    cfg.cir = std::make_unique<CirModel>(from_natural(nat, rate));
  } else if (type == "wf") {
    check_keys(model_j, {"type", "alpha", "emission_total"}, "config.model");
    WfParams params;
    params.alpha = get_num_array(model_j, "alpha", "config.model");
    params.emission_total =
        static_cast<int>(get_int_or(model_j, "emission_total", 1, "config.model"));
    cfg.wf = std::make_unique<WfModel>(std::move(params), cfg.series_policy,
                                       cfg.precision_policy);
  } else {
    throw ValidationError("config.model.type: unknown model '" + type + "'");
  }

  if (root.contains("observations")) {
    const json& obs = root.at("observations");
    require(obs.is_string(), "config.observations: expected a path string");
    fs::path p(obs.get<std::string>());
    if (p.is_relative()) p = cfg.config_dir / p;
    cfg.observations = p.string();
  }
  if (root.contains("prune")) cfg.prune = parse_prune(root.at("prune"), "config.prune");
  if (root.contains("seed")) {
    const long s = get_int(root, "seed", "config");
    require(s >= 0, "config.seed: must be nonnegative");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  if (root.contains("out")) {
    const json& o = root.at("out");
    require(o.is_string(), "config.out: expected a path string");
    fs::path p(o.get<std::string>());
    if (p.is_relative()) p = cfg.config_dir / p;
    cfg.out_dir = p;
  }
  if (seed_override) cfg.seed = *seed_override;
  if (out_override) cfg.out_dir = fs::path(*out_override);
  cfg.root = std::move(root);
  return cfg;
}

const json& section(const RunConfig& cfg, const std::string& name) {
  require(cfg.root.contains(name), "config: command requires a '" + name + "' section");
  return cfg.root.at(name);
}

ObservationSeries load_series(const RunConfig& cfg) {
  require(cfg.observations.has_value(), "config: command requires an 'observations' path");
  return io::read_observation_series(*cfg.observations);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  return (cfg.out_dir / name).string();
}

void write_run_info(const RunConfig& cfg, const std::string& command) {
  json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["model"] = cfg.is_cir() ? "cir" : "wf";
  j["prune"] = prune_label(cfg.prune);
  io::write_json(out_path(cfg, "run_info.json"), j);
}

// ---------------------------------------------------------------------------
// Credible bands
// ---------------------------------------------------------------------------

// Coordinate-wise posterior CDF for the simplex model: each mixture component
// Dirichlet(alpha + m) has Beta(alpha_j + m_j, |alpha| + |m| - alpha_j - m_j)
// coordinate marginals.
double wf_coord_cdf(const WfModel& model, const WeightedMixture<NoTheta>& mix, int j,
                    double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const auto& alpha = model.params().alpha;
  const double total = model.params().total();
  double acc = 0.0;
  for (const auto& [m, lw] : mix.log_weights) {
    const double a = alpha[static_cast<std::size_t>(j)] + m[j];
    const double b = total + m.norm() - a;
    acc += std::exp(lw) * boost::math::ibeta(a, b, x);
  }
  return acc;
}

double wf_coord_quantile(const WfModel& model, const WeightedMixture<NoTheta>& mix, int j,
                         double q) {
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (wf_coord_cdf(model, mix, j, mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

template <class Model>
void write_bands_csv(const std::string& path, const Model& model,
                     const std::vector<WeightedMixture<typename Model::Theta>>& mixtures) {
  std::ofstream out = io::open_output(path);
  out << "time,coord,mean,lo,hi\n";
  for (const auto& mix : mixtures) {
    const std::vector<double> mean = mixture_mean(model, mix);
    for (int j = 0; j < model.dim(); ++j) {
      double lo, hi;
      if constexpr (std::is_same_v<Model, CirModel>) {
        lo = mixture_quantile_1d(model, mix, 0.025);
        hi = mixture_quantile_1d(model, mix, 0.975);
      } else {
        lo = wf_coord_quantile(model, mix, j, 0.025);
        hi = wf_coord_quantile(model, mix, j, 0.975);
      }
      out << io::format_double(mix.time) << ',' << (j + 1) << ','
          << io::format_double(mean[static_cast<std::size_t>(j)]) << ','
          << io::format_double(lo) << ',' << io::format_double(hi) << "\n";
    }
  }
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

// A filter output representing no data: the stationary prior at time zero.
template <class Model>
FilterOutput<typename Model::Theta> prior_only(const Model& model) {
  LogWeightMap prior;
  prior.insert(GridIndex::zeros(model.dim()), 0.0);
  FilterOutput<typename Model::Theta> out;
  out.predictive.push_back(make_mixture(prior, model.theta_ref(), 0.0));
  out.filtered = out.predictive;
  return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

template <class Model>
int cmd_simulate(const RunConfig& cfg, const Model& model) {
  const json& sim = section(cfg, "simulate");
  check_keys(sim, {"n_times", "dt", "t0", "obs_per_time", "start"}, "config.simulate");
  const long n_times = get_int(sim, "n_times", "config.simulate");
  require(n_times >= 1, "config.simulate.n_times: must be at least 1");
  const double dt = get_num(sim, "dt", "config.simulate");
  require(dt > 0.0, "config.simulate.dt: must be positive");
  const double t0 = get_num_or(sim, "t0", 0.0, "config.simulate");

  std::vector<int> counts;
  const json& obs_j = get_req(sim, "obs_per_time", "config.simulate");
  if (obs_j.is_number_integer()) {
    counts.push_back(obs_j.get<int>());
  } else if (obs_j.is_array()) {
    for (const json& e : obs_j) {
      require(e.is_number_integer(), "config.simulate.obs_per_time: expected integers");
      counts.push_back(e.get<int>());
    }
  } else {
    throw ValidationError("config.simulate.obs_per_time: expected an integer or array");
  }

  std::optional<typename Model::Point> start;
  if (sim.contains("start")) {
    if constexpr (std::is_same_v<Model, CirModel>) {
      require(sim.at("start").is_number(), "config.simulate.start: expected a number");
      start = sim.at("start").get<double>();
    } else {
      start = get_num_array(sim, "start", "config.simulate");
    }
  }

  std::vector<double> times(static_cast<std::size_t>(n_times));
  for (long i = 0; i < n_times; ++i) times[static_cast<std::size_t>(i)] = t0 + dt * i;

  Rng rng(cfg.seed, 1);
  auto [series, traj] = simulate_series(model, times, counts, rng, start);
  io::write_observation_series(out_path(cfg, "observations.csv"), series);
  io::write_trajectories(out_path(cfg, "latent.csv"), {traj});
  write_run_info(cfg, "simulate");
  return 0;
}

template <class Model>
int cmd_filter(const RunConfig& cfg, const Model& model) {
  const ObservationSeries series = load_series(cfg);
  const auto filter =
      series.times.empty() ? prior_only(model) : run_filter(model, series, cfg.prune);
  io::write_mixtures_json(out_path(cfg, "predictive.json"), filter.predictive, cfg.seed);
  io::write_mixtures_json(out_path(cfg, "filtered.json"), filter.filtered, cfg.seed);
  write_bands_csv(out_path(cfg, "bands_filtered.csv"), model, filter.filtered);
  io::write_json(out_path(cfg, "loglik.json"), io::likelihood_to_json(filter, cfg.seed));
  write_run_info(cfg, "filter");
  return 0;
}

template <class Model>
int cmd_smooth(const RunConfig& cfg, const Model& model) {
  const ObservationSeries series = load_series(cfg);
  if (series.times.empty()) {
    const auto filter = prior_only(model);
    io::write_mixtures_json(out_path(cfg, "smoothed.json"), filter.filtered, cfg.seed);
    write_bands_csv(out_path(cfg, "bands_smoothed.csv"), model, filter.filtered);
    io::write_json(out_path(cfg, "loglik.json"), io::likelihood_to_json(filter, cfg.seed));
    write_run_info(cfg, "smooth");
    return 0;
  }
  const auto filter = run_filter(model, series, cfg.prune);
  const auto smoothed = run_smoother(model, series, cfg.prune);
  io::write_mixtures_json(out_path(cfg, "smoothed.json"), smoothed, cfg.seed);
  write_bands_csv(out_path(cfg, "bands_smoothed.csv"), model, smoothed);
  io::write_json(out_path(cfg, "loglik.json"), io::likelihood_to_json(filter, cfg.seed));
  write_run_info(cfg, "smooth");
  return 0;
}

template <class Model>
int cmd_likelihood(const RunConfig& cfg, const Model& model) {
  const ObservationSeries series = load_series(cfg);
  const auto filter =
      series.times.empty() ? prior_only(model) : run_filter(model, series, cfg.prune);
  io::write_json(out_path(cfg, "loglik.json"), io::likelihood_to_json(filter, cfg.seed));
  write_run_info(cfg, "likelihood");
  return 0;
}

template <class Model>
int cmd_sample_traj(const RunConfig& cfg, const Model& model) {
  const json& st = section(cfg, "sample_traj");
  check_keys(st, {"n_traj"}, "config.sample_traj");
  const long n_traj = get_int(st, "n_traj", "config.sample_traj");
  require(n_traj >= 1, "config.sample_traj.n_traj: must be at least 1");
  const ObservationSeries series = load_series(cfg);
  require(!series.times.empty(), "trajectory sampling requires observations");

  std::vector<Trajectory> trajs;
  if constexpr (std::is_same_v<Model, CirModel>) {
    const auto filter = run_filter(model, series, cfg.prune);
    trajs = sample_joint_cir(model, filter, static_cast<int>(n_traj), cfg.seed);
  } else {
    PruneRule backward = cfg.prune;
    if (backward.kind == PruneRule::Kind::FixedThreshold) backward.relative = true;
    const auto ctgs = series.size() >= 2
                          ? cost_to_go_recursion(model, series, backward)
                          : std::vector<CostToGo<NoTheta>>{};
    trajs = sample_joint_wf_many(model, series, ctgs, static_cast<int>(n_traj), cfg.seed);
  }
  io::write_trajectories(out_path(cfg, "trajectories.csv"), trajs);
  write_run_info(cfg, "sample-traj");
  return 0;
}

ChainConfig parse_chain_config(const RunConfig& cfg, const json& m, const std::string& ctx) {
  ChainConfig cc;
  cc.n_iter = static_cast<int>(get_int_or(m, "n_iter", 5000, ctx));
  cc.n_chains = static_cast<int>(get_int_or(m, "n_chains", 3, ctx));
  cc.pilot = static_cast<int>(get_int_or(m, "pilot", 2000, ctx));
  cc.adapt = get_bool_or(m, "adapt", true, ctx);
  cc.init = get_num_array(m, "init", ctx);
  cc.proposal_scale = get_num_array(m, "proposal_scale", ctx);
  cc.init_jitter_sd = get_num_or(m, "init_jitter_sd", 0.2, ctx);
  const json& priors_j = get_req(m, "priors", ctx);
  require(priors_j.is_array(), ctx + ".priors: expected an array");
  for (std::size_t i = 0; i < priors_j.size(); ++i) {
    cc.priors.push_back(
        parse_prior(priors_j.at(i), ctx + ".priors[" + std::to_string(i) + "]"));
  }
  cc.prune = cfg.prune;
  cc.seed = cfg.seed;
  cc.validate();
  return cc;
}

template <class Model>
int cmd_mcmc(const RunConfig& cfg, const Model& model) {
  const json& m = section(cfg, "mcmc");
  check_keys(m,
             {"n_iter", "n_chains", "pilot", "adapt", "init", "proposal_scale",
              "init_jitter_sd", "priors", "joint", "traj_thin"},
             "config.mcmc");
  const bool joint = get_bool_or(m, "joint", false, "config.mcmc");
  const long traj_thin = get_int_or(m, "traj_thin", 100, "config.mcmc");
  require(traj_thin >= 1, "config.mcmc.traj_thin: must be at least 1");
  const ChainConfig cc = parse_chain_config(cfg, m, "config.mcmc");
  const ObservationSeries series = load_series(cfg);

  ChainOutput chains;
  if constexpr (std::is_same_v<Model, CirModel>) {
    if (joint) {
      const GibbsOutput gibbs = gibbs_joint_cir(series, cc, model.params().lambda);
      chains = gibbs.chains;
      std::vector<Trajectory> trajs;
      for (std::size_t c = 0; c < gibbs.trajectories.size(); ++c) {
        for (std::size_t i = 0; i < gibbs.trajectories[c].size();
             i += static_cast<std::size_t>(traj_thin)) {
          Trajectory tr;
          tr.times = series.times;
          for (double x : gibbs.trajectories[c][i]) tr.states.push_back({x});
          tr.seed = cfg.seed;
          tr.stream = c + 1;
          trajs.push_back(std::move(tr));
        }
      }
      io::write_trajectories(out_path(cfg, "trajectories.csv"), trajs);
    } else {
      chains = rwmh_cir(series, cc, model.params().lambda);
    }
  } else {
    require(!joint, "config.mcmc.joint: the joint sampler supports the scalar model only");
    chains = rwmh_wf(series, cc, model.params().emission_total, model.series_policy());
  }
  io::write_chain_csv(out_path(cfg, "chain.csv"), chains);
  io::write_json(out_path(cfg, "diagnostics.json"), io::diagnostics_to_json(chains, cfg.seed));
  write_run_info(cfg, "mcmc");
  return 0;
}

template <class Model>
int cmd_pf(const RunConfig& cfg, const Model& model) {
  const json& p = section(cfg, "pf");
  check_keys(p, {"pf_particles", "pf_ess_frac", "kde_bandwidth"}, "config.pf");
  const long n = get_int(p, "pf_particles", "config.pf");
  const double ess_frac = get_num_or(p, "pf_ess_frac", 0.5, "config.pf");
  const ObservationSeries series = load_series(cfg);
  require(!series.times.empty(), "the particle filter requires observations");

  Rng rng(cfg.seed, 1);
  const auto pf = bootstrap_pf(model, series, static_cast<int>(n), rng, ess_frac);

  json lj;
  lj["seed"] = cfg.seed;
  lj["log_likelihood"] = pf.log_likelihood;
  lj["n_particles"] = n;
  lj["resample_times"] = pf.resample_times;
  io::write_json(out_path(cfg, "pf_loglik.json"), lj);

  std::ofstream out = io::open_output(out_path(cfg, "pf_clouds.csv"));
  out << "time,ess,resampled";
  for (int j = 1; j <= model.dim(); ++j) out << ",mean" << j;
  out << "\n";
  for (const auto& cloud : pf.clouds) {
    std::vector<double> mean(static_cast<std::size_t>(model.dim()), 0.0);
    for (std::size_t i = 0; i < cloud.states.size(); ++i) {
      const double w = std::exp(cloud.log_weights[i]);
      if constexpr (std::is_same_v<Model, CirModel>) {
        mean[0] += w * cloud.states[i];
      } else {
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += w * cloud.states[i][j];
      }
    }
    out << io::format_double(cloud.time) << ',' << io::format_double(cloud.ess) << ','
        << (cloud.resampled ? 1 : 0);
    for (double v : mean) out << ',' << io::format_double(v);
    out << "\n";
  }
  require(static_cast<bool>(out), "failed writing 'pf_clouds.csv'");

  // For the scalar model, a gamma-kernel density estimate of the final cloud.
  if constexpr (std::is_same_v<Model, CirModel>) {
    std::optional<double> bandwidth;
    if (p.contains("kde_bandwidth")) {
      require(p.at("kde_bandwidth").is_number(), "config.pf.kde_bandwidth: expected a number");
      bandwidth = p.at("kde_bandwidth").get<double>();
    }
    Rng kde_rng(cfg.seed, 2);
    const std::vector<double> sample = cloud_to_sample(pf.clouds.back(), kde_rng);
    const GammaMixture kde = gamma_kde(sample, bandwidth);
    json kj;
    kj["seed"] = cfg.seed;
    kj["time"] = pf.clouds.back().time;
    kj["shapes"] = kde.shapes;
    kj["rates"] = kde.rates;
    kj["weights"] = kde.weights;
    io::write_json(out_path(cfg, "pf_density.json"), kj);
  }
  write_run_info(cfg, "pf");
  return 0;
}

// ---------------------------------------------------------------------------
// Benchmark harness
// ---------------------------------------------------------------------------

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Smallest number of components holding at least `mass` of the total weight.
template <class Theta>
std::size_t components_for_mass(const WeightedMixture<Theta>& mix, double mass) {
  std::vector<double> w;
  w.reserve(mix.log_weights.size());
  for (const auto& [m, lw] : mix.log_weights) w.push_back(std::exp(lw));
  std::sort(w.begin(), w.end(), std::greater<>());
  double acc = 0.0;
  std::size_t count = 0;
  for (double v : w) {
    acc += v;
    ++count;
    if (acc >= mass) break;
  }
  return count;
}

template <class Model>
int cmd_benchmark(const RunConfig& cfg, const Model& model) {
  const json& b = section(cfg, "benchmark");
  check_keys(b, {"strategies", "pf_particles", "pf_reps", "pf_ess_frac"}, "config.benchmark");
  const json& strat_j = get_req(b, "strategies", "config.benchmark");
  require(strat_j.is_array() && !strat_j.empty(),
          "config.benchmark.strategies: need a nonempty array of pruning rules");
  std::vector<PruneRule> strategies;
  for (std::size_t i = 0; i < strat_j.size(); ++i) {
    strategies.push_back(parse_prune(strat_j.at(i),
                                     "config.benchmark.strategies[" + std::to_string(i) + "]"));
  }
  std::vector<long> pf_grid;
  if (b.contains("pf_particles")) {
    for (const json& e : b.at("pf_particles")) {
      require(e.is_number_integer(), "config.benchmark.pf_particles: expected integers");
      pf_grid.push_back(e.get<long>());
    }
  }
  const long pf_reps = get_int_or(b, "pf_reps", 20, "config.benchmark");
  const double ess_frac = get_num_or(b, "pf_ess_frac", 0.5, "config.benchmark");
  const ObservationSeries series = load_series(cfg);
  require(!series.times.empty(), "the benchmark requires observations");

  // --- exact reference pass (timed) ---------------------------------------
  const auto t_exact = std::chrono::steady_clock::now();
  const auto exact = run_filter(model, series, PruneRule::off());
  const double exact_seconds = seconds_since(t_exact);
  const auto exact_smoothed = run_smoother(model, series, PruneRule::off());

  // --- component counts vs the closed-form support law --------------------
  {
    std::ofstream out = io::open_output(out_path(cfg, "components.csv"));
    out << "time,predictive_full,law_full,predictive_95,filtered_full,filtered_95\n";
    std::vector<long> cumulative(static_cast<std::size_t>(model.dim()), 0);
    for (std::size_t i = 0; i < series.size(); ++i) {
      // Predictive support: counts observed strictly before time i.
      long law = 1;
      for (long c : cumulative) law *= c + 1;
      for (const GridIndex& y : series.observations[i]) {
        for (int j = 0; j < y.dim(); ++j) cumulative[static_cast<std::size_t>(j)] += y[j];
      }
      out << io::format_double(series.times[i]) << ',' << exact.predictive[i].indices.size()
          << ',' << law << ',' << components_for_mass(exact.predictive[i], 0.95) << ','
          << exact.filtered[i].indices.size() << ','
          << components_for_mass(exact.filtered[i], 0.95) << "\n";
    }
    require(static_cast<bool>(out), "failed writing 'components.csv'");
  }

  // --- likelihood error vs runtime per strategy, with a PF baseline --------
  struct StrategyRow {
    std::string label;
    double seconds = 0.0;
    double rmse = 0.0;
  };
  std::vector<StrategyRow> prune_rows, pf_rows;
  std::vector<std::pair<double, double>> fixed_mass_errors;  // (rho, |error|)
  for (const PruneRule& rule : strategies) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = run_filter(model, series, rule);
    StrategyRow row;
    row.seconds = seconds_since(t0);
    row.label = prune_label(rule);
    row.rmse = std::abs(run.log_likelihood - exact.log_likelihood);
    if (rule.kind == PruneRule::Kind::FixedMass) {
      fixed_mass_errors.emplace_back(rule.mass, row.rmse);
    }
    prune_rows.push_back(std::move(row));
  }
  for (const long n : pf_grid) {
    require(n >= 1, "config.benchmark.pf_particles: must be positive");
    double sq_sum = 0.0;
    double seconds = 0.0;
    for (long r = 0; r < pf_reps; ++r) {
      Rng rng(cfg.seed, 100 + static_cast<std::uint64_t>(r));
      const auto t0 = std::chrono::steady_clock::now();
      const auto pf = bootstrap_pf(model, series, static_cast<int>(n), rng, ess_frac);
      seconds += seconds_since(t0);
      const double err = pf.log_likelihood - exact.log_likelihood;
      sq_sum += err * err;
    }
    StrategyRow row;
    row.label = "pf:" + std::to_string(n);
    row.seconds = seconds / static_cast<double>(pf_reps);
    row.rmse = std::sqrt(sq_sum / static_cast<double>(pf_reps));
    pf_rows.push_back(std::move(row));
  }
  {
    std::ofstream out = io::open_output(out_path(cfg, "strategies.csv"));
    out << "strategy,kind,runtime_seconds,relative_runtime,loglik_rmse\n";
    out << "exact,exact," << io::format_double(exact_seconds) << ",1,0\n";
    for (const auto& row : prune_rows) {
      out << row.label << ",prune," << io::format_double(row.seconds) << ','
          << io::format_double(row.seconds / exact_seconds) << ','
          << io::format_double(row.rmse) << "\n";
    }
    for (const auto& row : pf_rows) {
      out << row.label << ",pf," << io::format_double(row.seconds) << ','
          << io::format_double(row.seconds / exact_seconds) << ','
          << io::format_double(row.rmse) << "\n";
    }
    require(static_cast<bool>(out), "failed writing 'strategies.csv'");
  }

  // --- smoothing accuracy (max L2 over time) vs runtime per strategy -------
  {
    std::ofstream out = io::open_output(out_path(cfg, "l2_runtime.csv"));
    out << "strategy,runtime_seconds,max_l2\n";
    for (const PruneRule& rule : strategies) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto smoothed = run_smoother(model, series, rule);
      const double seconds = seconds_since(t0);
      double max_l2 = 0.0;
      if constexpr (std::is_same_v<Model, CirModel>) {
        std::vector<GammaMixture> a, e;
        for (std::size_t i = 0; i < smoothed.size(); ++i) {
          a.push_back(to_gamma_mixture(model, smoothed[i]));
          e.push_back(to_gamma_mixture(model, exact_smoothed[i]));
        }
        max_l2 = max_l2_over_time(a, e);
      } else {
        std::vector<DirichletMixture> a, e;
        for (std::size_t i = 0; i < smoothed.size(); ++i) {
          a.push_back(to_dirichlet_mixture(model, smoothed[i]));
          e.push_back(to_dirichlet_mixture(model, exact_smoothed[i]));
        }
        max_l2 = max_l2_over_time(a, e);
      }
      out << prune_label(rule) << ',' << io::format_double(seconds) << ','
          << io::format_double(max_l2) << "\n";
    }
    require(static_cast<bool>(out), "failed writing 'l2_runtime.csv'");
  }

  // --- machine-readable pass/fail ------------------------------------------
  json criteria;
  {
    bool support_law = true;
    std::vector<long> cumulative(static_cast<std::size_t>(model.dim()), 0);
    for (std::size_t i = 0; i < series.size(); ++i) {
      long law = 1;
      for (long c : cumulative) law *= c + 1;
      if (static_cast<long>(exact.predictive[i].indices.size()) != law) support_law = false;
      for (const GridIndex& y : series.observations[i]) {
        for (int j = 0; j < y.dim(); ++j) cumulative[static_cast<std::size_t>(j)] += y[j];
      }
    }
    criteria["support_law_exact"] = support_law;

    const auto& last = exact.filtered.back();
    const double ratio = static_cast<double>(components_for_mass(last, 0.95)) /
                         static_cast<double>(last.indices.size());
    criteria["final_95_ratio"] = ratio;
    criteria["mass_concentration"] = ratio < 0.10;

    bool pareto = !prune_rows.empty();
    for (const auto& pr : prune_rows) {
      for (const auto& pf : pf_rows) {
        if (!(pr.rmse < pf.rmse && pr.seconds < pf.seconds)) pareto = false;
      }
    }
    criteria["pareto_dominance"] = pf_rows.empty() ? json() : json(pareto);

    std::sort(fixed_mass_errors.begin(), fixed_mass_errors.end());
    json fm = json::array();
    bool decreasing = true;
    for (std::size_t i = 0; i < fixed_mass_errors.size(); ++i) {
      fm.push_back({{"mass", fixed_mass_errors[i].first},
                    {"abs_error", fixed_mass_errors[i].second}});
      if (i > 0 && fixed_mass_errors[i].second > fixed_mass_errors[i - 1].second) {
        decreasing = false;
      }
    }
    criteria["fixed_mass_errors"] = std::move(fm);
    if (!fixed_mass_errors.empty()) {
      criteria["fixed_mass_decreasing"] = decreasing;
      criteria["fixed_mass_final_below_1e6"] = fixed_mass_errors.back().second < 1e-6;
    }
  }
  io::write_json(out_path(cfg, "criteria.json"), criteria);
  write_run_info(cfg, "benchmark");
  return 0;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

int dispatch(const std::string& command, const RunConfig& cfg) {
  const auto run = [&](const auto& model) -> int {
    if (command == "simulate") return cmd_simulate(cfg, model);
    if (command == "filter") return cmd_filter(cfg, model);
    if (command == "smooth") return cmd_smooth(cfg, model);
    if (command == "likelihood") return cmd_likelihood(cfg, model);
    if (command == "sample-traj") return cmd_sample_traj(cfg, model);
    if (command == "mcmc") return cmd_mcmc(cfg, model);
    if (command == "pf") return cmd_pf(cfg, model);
    if (command == "benchmark") return cmd_benchmark(cfg, model);
    throw ValidationError("unknown command '" + command + "'");
  };
  return cfg.is_cir() ? run(*cfg.cir) : run(*cfg.wf);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact filtering, smoothing and inference for dual-process HMMs"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;

  const std::vector<std::string> commands = {"simulate", "filter",      "smooth",
                                             "likelihood", "sample-traj", "mcmc",
                                             "pf",       "benchmark"};
  for (const auto& name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed_override = s; }, "override the config seed");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& o) { out_override = o; },
        "override the output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = parse_config(config_path, seed_override, out_override);
    return dispatch(app.get_subcommands().front()->get_name(), cfg);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
