#pragma once

// File formats: observation/trajectory/chain CSV and mixture/diagnostics
// JSON. Doubles are written in shortest round-trip form so that re-running a
// command reproduces its output files byte for byte and JSON mixture dumps
// survive a load/dump cycle unchanged.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dualhmm/common.hpp"
#include "dualhmm/mcmc.hpp"
#include "dualhmm/model.hpp"
#include "dualhmm/particle.hpp"
#include "dualhmm/trajectory.hpp"

namespace dualhmm::io {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Formatting / parsing primitives
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  require(res.ec == std::errc(), "failed to format a floating-point value");
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ValidationError(where + ": expected a number, got '" + text + "'");
  }
  return v;
}

inline long parse_int(const std::string& text, const std::string& where) {
  long v = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ValidationError(where + ": expected an integer, got '" + text + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "' for reading");
  return in;
}

// ---------------------------------------------------------------------------
// Observation series CSV: header time,y1[,y2,...,yK]
// ---------------------------------------------------------------------------

// Reads a count-observation file. Rows sharing a timestamp form one
// collection-time group; rows must be sorted by time. A header-only file
// yields an empty series (no collection times).
inline ObservationSeries read_observation_series(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), path + ": missing header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  require(header.size() >= 2, path + ":1: header must be time,y1[,y2,...]");
  require(header[0] == "time", path + ":1: first column must be 'time'");
  for (std::size_t j = 1; j < header.size(); ++j) {
    require(header[j] == "y" + std::to_string(j),
            path + ":1: column " + std::to_string(j + 1) + " must be 'y" + std::to_string(j) +
                "'");
  }
  const std::size_t dim = header.size() - 1;

  ObservationSeries series;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto fields = split_csv_line(line);
    require(fields.size() == dim + 1,
            where + ": expected " + std::to_string(dim + 1) + " fields, got " +
                std::to_string(fields.size()));
    const double t = parse_double(fields[0], where);
    require(std::isfinite(t), where + ": time must be finite");
    std::vector<int> counts(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const long c = parse_int(fields[j + 1], where);
      require(c >= 0, where + ": counts must be nonnegative");
      counts[j] = static_cast<int>(c);
    }
    if (!series.times.empty()) {
      require(t >= series.times.back(), where + ": times must be nondecreasing");
    }
    if (series.times.empty() || t > series.times.back()) {
      series.times.push_back(t);
      series.observations.emplace_back();
    }
    series.observations.back().push_back(GridIndex(std::move(counts)));
  }
  if (!series.times.empty()) series.validate();
  return series;
}

inline void write_observation_series(const std::string& path, const ObservationSeries& series) {
  std::ofstream out = open_output(path);
  int dim = 1;
  for (const auto& group : series.observations) {
    if (!group.empty()) {
      dim = group.front().dim();
      break;
    }
  }
  out << "time";
  for (int j = 1; j <= dim; ++j) out << ",y" << j;
  out << "\n";
  for (std::size_t i = 0; i < series.times.size(); ++i) {
    for (const GridIndex& y : series.observations[i]) {
      out << format_double(series.times[i]);
      for (int j = 0; j < y.dim(); ++j) out << ',' << y[j];
      out << "\n";
    }
  }
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Trajectory CSV: header traj_id,time,x1[,...,xK]
// ---------------------------------------------------------------------------

inline void write_trajectories(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::ofstream out = open_output(path);
  int dim = 1;
  for (const auto& tr : trajs) {
    if (!tr.states.empty()) {
      dim = static_cast<int>(tr.states.front().size());
      break;
    }
  }
  out << "traj_id,time";
  for (int j = 1; j <= dim; ++j) out << ",x" << j;
  out << "\n";
  for (std::size_t id = 0; id < trajs.size(); ++id) {
    const Trajectory& tr = trajs[id];
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      out << id << ',' << format_double(tr.times[i]);
      for (double x : tr.states[i]) out << ',' << format_double(x);
      out << "\n";
    }
  }
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

inline std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::ifstream in = open_input(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), path + ": missing header line");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  require(header.size() >= 3 && header[0] == "traj_id" && header[1] == "time",
          path + ":1: header must be traj_id,time,x1[,...]");
  const std::size_t dim = header.size() - 2;

  std::vector<Trajectory> trajs;
  long line_no = 1;
  long current_id = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto fields = split_csv_line(line);
    require(fields.size() == dim + 2, where + ": wrong field count");
    const long id = parse_int(fields[0], where);
    if (id != current_id) {
      require(id == current_id + 1, where + ": trajectory ids must be consecutive from 0");
      current_id = id;
      trajs.emplace_back();
    }
    trajs.back().times.push_back(parse_double(fields[1], where));
    std::vector<double> state(dim);
    for (std::size_t j = 0; j < dim; ++j) state[j] = parse_double(fields[j + 2], where);
    trajs.back().states.push_back(std::move(state));
  }
  return trajs;
}

// ---------------------------------------------------------------------------
// Mixture JSON dumps
// ---------------------------------------------------------------------------

// A dumped mixture is {"time": t, ["theta": θ,] "components": [{"m": [...],
// "log_w": w}, ...]} with components in lexicographic index order. Weights
// are stored as exact shortest-round-trip doubles, so load followed by dump
// is the identity on files this library wrote.
namespace detail {

inline json theta_to_json(double theta) { return json(theta); }
inline json theta_to_json(const NoTheta&) { return json(); }

inline void theta_from_json(const json& j, double& theta) { theta = j.get<double>(); }
inline void theta_from_json(const json&, NoTheta&) {}

}  // namespace detail

template <class Theta>
json mixture_to_json(const WeightedMixture<Theta>& mix) {
  json j;
  j["time"] = mix.time;
  const json theta = detail::theta_to_json(mix.theta);
  if (!theta.is_null()) j["theta"] = theta;
  json comps = json::array();
  for (const auto& [m, lw] : mix.log_weights) {
    json c;
    c["m"] = m.coords();
    c["log_w"] = lw;
    comps.push_back(std::move(c));
  }
  j["components"] = std::move(comps);
  return j;
}

template <class Theta>
WeightedMixture<Theta> mixture_from_json(const json& j) {
  require(j.is_object() && j.contains("time") && j.contains("components"),
          "mixture JSON needs 'time' and 'components'");
  WeightedMixture<Theta> mix;
  mix.time = j.at("time").get<double>();
  if (j.contains("theta")) {
    detail::theta_from_json(j.at("theta"), mix.theta);
  }
  LogWeightMap weights;
  std::vector<GridIndex> members;
  for (const json& c : j.at("components")) {
    require(c.contains("m") && c.contains("log_w"), "mixture component needs 'm' and 'log_w'");
    GridIndex m(c.at("m").get<std::vector<int>>());
    weights.insert(m, c.at("log_w").get<double>());
    members.push_back(std::move(m));
  }
  mix.indices = IndexSet(std::move(members));
  mix.log_weights = std::move(weights);
  return mix;
}

template <class Theta>
void write_mixtures_json(const std::string& path,
                         const std::vector<WeightedMixture<Theta>>& mixtures,
                         std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  json arr = json::array();
  for (const auto& mix : mixtures) arr.push_back(mixture_to_json(mix));
  j["mixtures"] = std::move(arr);
  std::ofstream out = open_output(path);
  out << j.dump(2) << "\n";
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

template <class Theta>
std::vector<WeightedMixture<Theta>> read_mixtures_json(const std::string& path) {
  std::ifstream in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  require(j.contains("mixtures") && j.at("mixtures").is_array(),
          path + ": missing 'mixtures' array");
  std::vector<WeightedMixture<Theta>> out;
  for (const json& m : j.at("mixtures")) out.push_back(mixture_from_json<Theta>(m));
  return out;
}

// ---------------------------------------------------------------------------
// Chain CSV: header chain,iter,param1,...,log_post
// ---------------------------------------------------------------------------

inline void write_chain_csv(const std::string& path, const ChainOutput& out_chains) {
  std::ofstream out = open_output(path);
  std::size_t dim = 0;
  for (const auto& chain : out_chains.draws) {
    if (!chain.empty()) {
      dim = chain.front().size();
      break;
    }
  }
  out << "chain,iter";
  for (std::size_t j = 1; j <= dim; ++j) out << ",param" << j;
  out << ",log_post\n";
  for (std::size_t c = 0; c < out_chains.draws.size(); ++c) {
    for (std::size_t i = 0; i < out_chains.draws[c].size(); ++i) {
      out << c << ',' << i;
      for (double v : out_chains.draws[c][i]) out << ',' << format_double(v);
      out << ',' << format_double(out_chains.log_post[c][i]) << "\n";
    }
  }
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

inline json diagnostics_to_json(const ChainOutput& out, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["acceptance_rate"] = out.acceptance_rate;
  j["acceptance_per_chain"] = out.acceptance_per_chain;
  j["rhat"] = out.rhat;
  j["rejected_failures"] = out.rejected_failures;
  std::size_t total = 0;
  for (const auto& chain : out.draws) total += chain.size();
  json ess = json::array();
  for (const auto& acf_p : out.acf) ess.push_back(ess_from_acf(acf_p, total));
  j["ess"] = std::move(ess);
  return j;
}

// ---------------------------------------------------------------------------
// Log-likelihood JSON
// ---------------------------------------------------------------------------

template <class Theta>
json likelihood_to_json(const FilterOutput<Theta>& filter, std::uint64_t seed) {
  json j;
  j["seed"] = seed;
  j["log_likelihood"] = filter.log_likelihood;
  json marginals = json::array();
  json discarded = json::array();
  json times = json::array();
  for (std::size_t i = 0; i < filter.log_marginals.size(); ++i) {
    times.push_back(filter.filtered[i].time);
    marginals.push_back(filter.log_marginals[i]);
    // Linear scale: -inf (nothing pruned) would not survive JSON.
    discarded.push_back(std::exp(filter.discarded_log_mass[i]));
  }
  j["times"] = std::move(times);
  j["log_marginals"] = std::move(marginals);
  j["discarded_mass"] = std::move(discarded);
  return j;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out = open_output(path);
  out << j.dump(2) << "\n";
  require(static_cast<bool>(out), "failed writing '" + path + "'");
}

}  // namespace dualhmm::io
