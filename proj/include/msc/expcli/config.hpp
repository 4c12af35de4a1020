#pragma once

// Experiment configuration and its `key = value` file form.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include "msc/climb.hpp"

namespace msc::expcli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ConfigError("invalid number for " + std::string(what) + ": '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint(std::string_view s, std::string_view what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ConfigError("invalid integer for " + std::string(what) + ": '" + std::string(s) + "'");
  return v;
}

inline bool parse_bool(std::string_view s, std::string_view what) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("invalid boolean for " + std::string(what) + ": '" + std::string(s) + "'");
}

/**
 * Step-size rule written as "rm:a,b,gamma" or "adam:lr,beta1,beta2,eps".
 * Trailing values may be omitted and take the defaults; "rm" alone is valid.
 */
inline Schedule parse_schedule(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string_view kind = spec.substr(0, colon);
  std::vector<double> v;
  if (colon != std::string_view::npos) {
    std::string_view rest = spec.substr(colon + 1);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      v.push_back(parse_double(rest.substr(0, comma), "schedule"));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  if (kind == "rm") {
    if (v.size() > 3) throw ConfigError("rm schedule takes at most 3 values");
    RobbinsMonro rm;
    if (v.size() > 0) rm.a = v[0];
    if (v.size() > 1) rm.b = v[1];
    if (v.size() > 2) rm.gamma = v[2];
    if (!(rm.a > 0.0) || !(rm.b >= 0.0) || !(rm.gamma > 0.5 && rm.gamma <= 1.0))
      throw ConfigError("rm schedule needs a > 0, b >= 0, 0.5 < gamma <= 1");
    return rm;
  }
  if (kind == "adam") {
    if (v.size() > 4) throw ConfigError("adam schedule takes at most 4 values");
    Adam ad;
    if (v.size() > 0) ad.lr = v[0];
    if (v.size() > 1) ad.beta1 = v[1];
    if (v.size() > 2) ad.beta2 = v[2];
    if (v.size() > 3) ad.eps = v[3];
    if (!(ad.lr > 0.0) || !(ad.beta1 >= 0.0 && ad.beta1 < 1.0) ||
        !(ad.beta2 >= 0.0 && ad.beta2 < 1.0) || !(ad.eps > 0.0))
      throw ConfigError("adam schedule needs lr > 0, betas in [0, 1), eps > 0");
    return ad;
  }
  throw ConfigError("unknown schedule '" + std::string(spec) + "' (expected rm:... or adam:...)");
}

inline std::string schedule_to_string(const Schedule& s) {
  if (const auto* rm = std::get_if<RobbinsMonro>(&s.spec()))
    return "rm:" + format_double(rm->a) + "," + format_double(rm->b) + "," + format_double(rm->gamma);
  const Adam& ad = std::get<Adam>(s.spec());
  return "adam:" + format_double(ad.lr) + "," + format_double(ad.beta1) + "," +
         format_double(ad.beta2) + "," + format_double(ad.eps);
}

/**
 * Everything that determines an experiment's output. Fields irrelevant to a
 * given experiment are ignored by it but still round-trip.
 */
struct ExperimentConfig {
  std::string experiment = "skewnormal";  // skewnormal | probit | stochvol | subsetavg | kernelcheck
  std::string estimator = "msc-cis";      // msc-cis | msc-csmc | snis | smc | subset-avg
  std::uint64_t samples = 2;
  std::string schedule = "rm:0.5,10,0.7";
  std::string theta_schedule = "adam:0.01,0.9,0.999,1e-08";  // stochvol model parameters
  std::uint64_t iterations = 100000;
  std::uint64_t replications = 1;
  std::uint64_t seed = 0;
  std::string dataset;                    // probit only
  std::string out = "results";
  std::uint64_t workers = 1;
  bool rao_blackwell = false;
  std::string proposal = "adaptive";      // adaptive | prior (msc-cis on static targets)
  double tail_fraction = 0.5;
  std::uint64_t thin = 0;                 // 0: every iteration, or 1-in-10 when iterations > 10^4
  std::uint64_t subset_size = 2;          // subsetavg m
  std::uint64_t data_seed = 0;            // simulated data (subsetavg, stochvol)
  std::uint64_t series_length = 200;      // stochvol T
  std::uint64_t eval_samples = 10000;     // stochvol evidence particles
  std::uint64_t burn_in = 1000;           // kernelcheck
  std::string target = "all";             // kernelcheck: conjugate | lgssm | all

  bool operator==(const ExperimentConfig&) const = default;

  std::uint64_t effective_thin() const {
    if (thin > 0) return thin;
    return iterations > 10000 ? 10 : 1;
  }

  void validate() const {
    static const std::vector<std::string> experiments{"skewnormal", "probit", "stochvol",
                                                      "subsetavg", "kernelcheck"};
    static const std::vector<std::string> estimators{"msc-cis", "msc-csmc", "snis", "smc",
                                                     "subset-avg"};
    if (std::find(experiments.begin(), experiments.end(), experiment) == experiments.end())
      throw ConfigError("unknown experiment '" + experiment + "'");
    if (std::find(estimators.begin(), estimators.end(), estimator) == estimators.end())
      throw ConfigError("unknown estimator '" + estimator + "'");
    if (samples < 1) throw ConfigError("samples must be at least 1");
    if (iterations < 1) throw ConfigError("iterations must be at least 1");
    if (replications < 1) throw ConfigError("replications must be at least 1");
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
      throw ConfigError("tail_fraction must lie in (0, 1]");
    if (proposal != "adaptive" && proposal != "prior")
      throw ConfigError("proposal must be 'adaptive' or 'prior'");
    if (target != "conjugate" && target != "lgssm" && target != "all")
      throw ConfigError("target must be 'conjugate', 'lgssm' or 'all'");
    parse_schedule(schedule);
    parse_schedule(theta_schedule);
  }

  std::vector<std::pair<std::string, std::string>> to_pairs() const {
    return {
        {"experiment", experiment},
        {"estimator", estimator},
        {"samples", std::to_string(samples)},
        {"schedule", schedule},
        {"theta_schedule", theta_schedule},
        {"iterations", std::to_string(iterations)},
        {"replications", std::to_string(replications)},
        {"seed", std::to_string(seed)},
        {"dataset", dataset},
        {"out", out},
        {"workers", std::to_string(workers)},
        {"rao_blackwell", rao_blackwell ? "true" : "false"},
        {"proposal", proposal},
        {"tail_fraction", format_double(tail_fraction)},
        {"thin", std::to_string(thin)},
        {"subset_size", std::to_string(subset_size)},
        {"data_seed", std::to_string(data_seed)},
        {"series_length", std::to_string(series_length)},
        {"eval_samples", std::to_string(eval_samples)},
        {"burn_in", std::to_string(burn_in)},
        {"target", target},
    };
  }

  /// Sets one field from its file form.
  void set(std::string_view key, std::string_view value) {
    const std::string v(value);
    if (key == "experiment") experiment = v;
    else if (key == "estimator") estimator = v;
    else if (key == "samples") samples = parse_uint(value, key);
    else if (key == "schedule") schedule = v;
    else if (key == "theta_schedule") theta_schedule = v;
    else if (key == "iterations") iterations = parse_uint(value, key);
    else if (key == "replications") replications = parse_uint(value, key);
    else if (key == "seed") seed = parse_uint(value, key);
    else if (key == "dataset") dataset = v;
    else if (key == "out") out = v;
    else if (key == "workers") workers = parse_uint(value, key);
    else if (key == "rao_blackwell") rao_blackwell = parse_bool(value, key);
    else if (key == "proposal") proposal = v;
    else if (key == "tail_fraction") tail_fraction = parse_double(value, key);
    else if (key == "thin") thin = parse_uint(value, key);
    else if (key == "subset_size") subset_size = parse_uint(value, key);
    else if (key == "data_seed") data_seed = parse_uint(value, key);
    else if (key == "series_length") series_length = parse_uint(value, key);
    else if (key == "eval_samples") eval_samples = parse_uint(value, key);
    else if (key == "burn_in") burn_in = parse_uint(value, key);
    else if (key == "target") target = v;
    else throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
};

inline std::string config_to_string(const ExperimentConfig& c) {
  std::string s;
  for (const auto& [k, v] : c.to_pairs()) s += k + " = " + v + "\n";
  return s;
}

namespace detail {

inline std::string_view strip(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Applies `key = value` lines from `text` on top of `base`. `#` starts a comment.
inline ExperimentConfig apply_config_text(ExperimentConfig base, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view l(line);
    if (const auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = detail::strip(l);
    if (l.empty()) continue;
    const auto eq = l.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = detail::strip(l.substr(0, eq));
    const auto value = detail::strip(l.substr(eq + 1));
    try {
      base.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

inline ExperimentConfig parse_config(std::string_view text) {
  return apply_config_text(ExperimentConfig{}, text);
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_config_text(std::move(base), ss.str());
}

}  // namespace msc::expcli
