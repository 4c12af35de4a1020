#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
// failure (including a failed invariance check).

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msc/expcli/config.hpp"
#include "msc/expcli/experiments.hpp"

namespace msc::expcli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

namespace detail {

/// Flag values for one subcommand; only flags given on the command line are applied.
struct FlagValues {
  std::uint64_t seed = 0, iters = 0, samples = 0, replications = 0, workers = 0, m = 0, thin = 0,
                data_seed = 0, burn_in = 0, eval_samples = 0, series_length = 0;
  double tail = 0.0;
  std::string estimator, schedule, theta_schedule, dataset, out, config, target, proposal;
  bool rao_blackwell = false;
  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> setters;
};

template <class T>
void bind_flag(CLI::App* sub, FlagValues& f, const std::string& name, T& slot,
               const std::string& help, std::string key) {
  CLI::Option* opt = sub->add_option(name, slot, help);
  f.setters.emplace_back(opt, [&slot, key](ExperimentConfig& c) {
    if constexpr (std::is_same_v<T, std::string>) c.set(key, slot);
    else if constexpr (std::is_same_v<T, double>) c.set(key, format_double(slot));
    else c.set(key, std::to_string(slot));
  });
}

inline void add_common_flags(CLI::App* sub, FlagValues& f) {
  bind_flag(sub, f, "--seed", f.seed, "master seed", "seed");
  bind_flag(sub, f, "--iters", f.iters, "optimisation iterations K (kernel steps for kernelcheck)",
            "iterations");
  bind_flag(sub, f, "--samples", f.samples, "particles per iteration S", "samples");
  bind_flag(sub, f, "--estimator", f.estimator, "msc-cis | msc-csmc | snis | smc | subset-avg",
            "estimator");
  bind_flag(sub, f, "--schedule", f.schedule, "step sizes: rm:a,b,gamma or adam:lr,b1,b2,eps",
            "schedule");
  bind_flag(sub, f, "--replications", f.replications, "independent runs (probit: data splits)",
            "replications");
  bind_flag(sub, f, "--dataset", f.dataset, "CSV dataset (probit)", "dataset");
  bind_flag(sub, f, "--out", f.out, "output directory", "out");
  bind_flag(sub, f, "--workers", f.workers, "worker threads for replications", "workers");
  bind_flag(sub, f, "--thin", f.thin, "keep every n-th trace row (0: automatic)", "thin");
  bind_flag(sub, f, "--tail", f.tail, "fraction of iterations averaged for the reported iterate",
            "tail_fraction");
  bind_flag(sub, f, "--data-seed", f.data_seed, "seed of simulated data", "data_seed");
  sub->add_option("--config", f.config, "key = value file; its entries override flags");
}

}  // namespace detail

/// Parses argv, runs the chosen experiment and returns the process exit code.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Markovian score climbing experiments"};
  app.require_subcommand(1);

  const std::vector<std::string> names{"skewnormal", "probit", "stochvol", "subsetavg",
                                       "kernelcheck"};
  const std::vector<std::string> descriptions{
      "skew-normal toy: MSC versus SNIS against the moment-matched optimum",
      "Bayesian probit regression on a CSV dataset over repeated train/test splits",
      "stochastic volatility: joint twisting and ML parameter learning on simulated data",
      "subset-average likelihood fixed point on the conjugate Gaussian model",
      "invariance checks of the CIS and CSMC kernels against exact oracles"};
  std::vector<detail::FlagValues> flags(names.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descriptions[i]);
    detail::FlagValues& f = flags[i];
    detail::add_common_flags(sub, f);
    CLI::Option* rb = sub->add_flag("--rao-blackwell", f.rao_blackwell,
                                    "weight the score over all particles (msc-cis)");
    f.setters.emplace_back(rb, [&f](ExperimentConfig& c) { c.rao_blackwell = f.rao_blackwell; });
    if (names[i] == "probit")
      detail::bind_flag(sub, f, "--proposal", f.proposal, "adaptive | prior", "proposal");
    if (names[i] == "subsetavg")
      detail::bind_flag(sub, f, "--m", f.m, "subset size", "subset_size");
    if (names[i] == "stochvol") {
      detail::bind_flag(sub, f, "--theta-schedule", f.theta_schedule,
                        "step sizes for model parameters", "theta_schedule");
      detail::bind_flag(sub, f, "--series-length", f.series_length, "simulated series length T",
                        "series_length");
      detail::bind_flag(sub, f, "--eval-samples", f.eval_samples,
                        "particles for log-evidence evaluation", "eval_samples");
    }
    if (names[i] == "kernelcheck") {
      detail::bind_flag(sub, f, "--target", f.target, "conjugate | lgssm | all", "target");
      detail::bind_flag(sub, f, "--burn-in", f.burn_in, "discarded kernel steps", "burn_in");
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::size_t which = 0;
  while (!subs[which]->parsed()) ++which;
  const detail::FlagValues& f = flags[which];

  ExperimentConfig cfg;
  try {
    cfg = default_config(names[which]);
    for (const auto& [opt, apply] : f.setters)
      if (opt->count() > 0) apply(cfg);
    if (!f.config.empty()) cfg = load_config_file(f.config, cfg);
    if (cfg.experiment != names[which])
      throw ConfigError("config file sets experiment '" + cfg.experiment +
                        "' but the subcommand is '" + names[which] + "'");
    if (cfg.experiment == "probit" && cfg.dataset.empty())
      throw ConfigError("probit requires --dataset <path to CSV>");
    cfg.validate();
  } catch (const std::exception& e) {
    err << "usage error: " << e.what() << "\n" << subs[which]->help();
    return kExitUsage;
  }

  try {
    const ExperimentResult res = run_experiment(cfg);
    if (!res.report.empty()) out << res.report;
    if (res.failed_replications > 0)
      err << "warning: " << res.failed_replications << " replication(s) failed; see "
          << res.summary_path.string() << "\n";
    out << "summary: " << res.summary_path.string() << "\n";
    if (cfg.experiment != "kernelcheck") out << "trace: " << res.trace_path.string() << "\n";
    if (!res.checks_passed) {
      err << "invariance check failed\n";
      return kExitRuntime;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace msc::expcli
