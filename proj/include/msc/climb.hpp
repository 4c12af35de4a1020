#pragma once

// Stochastic approximation loops: Markovian score climbing on static targets
// (CIS kernel), score climbing with maximum likelihood on SSMs (CSMC kernel),
// and the fresh-sample baselines (SNIS, SMC, subset-average likelihood).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "msc/families.hpp"
#include "msc/gradients.hpp"
#include "msc/kernels.hpp"
#include "msc/models.hpp"
#include "msc/numkit.hpp"

namespace msc {

/// Error raised inside an optimisation loop, tagged with the iteration index.
class RunError : public std::runtime_error {
 public:
  RunError(const std::string& what, long iteration)
      : std::runtime_error("iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

/// eps_k = a / (k + b)^gamma
struct RobbinsMonro {
  double a = 0.5;
  double b = 10.0;
  double gamma = 0.7;
};

struct Adam {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Step-size rule with its internal state. Each call to step() advances k by one.
class Schedule {
 public:
  Schedule(RobbinsMonro rm) : spec_(rm) {}
  Schedule(Adam adam) : spec_(adam) {}

  long iteration() const noexcept { return k_; }
  const std::variant<RobbinsMonro, Adam>& spec() const noexcept { return spec_; }

  std::vector<double> step(std::span<const double> g) {
    ++k_;
    for (double v : g)
      if (!std::isfinite(v)) throw RunError("non-finite gradient", k_);
    std::vector<double> inc(g.size());
    if (const auto* rm = std::get_if<RobbinsMonro>(&spec_)) {
      const double eps = rm->a / std::pow(static_cast<double>(k_) + rm->b, rm->gamma);
      for (std::size_t i = 0; i < g.size(); ++i) inc[i] = eps * g[i];
      return inc;
    }
    const Adam& ad = std::get<Adam>(spec_);
    if (m_.empty()) {
      m_.assign(g.size(), 0.0);
      v_.assign(g.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(ad.beta1, static_cast<double>(k_));
    const double c2 = 1.0 - std::pow(ad.beta2, static_cast<double>(k_));
    for (std::size_t i = 0; i < g.size(); ++i) {
      m_[i] = ad.beta1 * m_[i] + (1.0 - ad.beta1) * g[i];
      v_[i] = ad.beta2 * v_[i] + (1.0 - ad.beta2) * g[i] * g[i];
      inc[i] = ad.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + ad.eps);
    }
    return inc;
  }

 private:
  std::variant<RobbinsMonro, Adam> spec_;
  long k_ = 0;
  std::vector<double> m_, v_;
};

inline std::vector<double> schedule_step(Schedule& schedule, std::span<const double> gradient) {
  return schedule.step(gradient);
}

/// Per-iteration trace entry.
struct RunRecord {
  long iteration = 0;
  std::vector<double> lambda;
  std::vector<double> theta;
  std::vector<double> sample;  // retained conditional sample (empty for fresh-sample loops)
  double grad_norm = 0.0;
  double ess = 1.0;
  double max_weight = 1.0;
  bool sticky = false;
};

struct TraceOptions {
  bool enabled = false;
  std::size_t thin = 1;  // keep every thin-th iteration
};

struct RunResult {
  std::vector<double> lambda;      // final iterate
  std::vector<double> lambda_avg;  // average over the tail of the run
  std::vector<double> theta;
  std::vector<double> theta_avg;
  std::vector<double> last_sample;
  std::size_t sticky_iterations = 0;
  std::vector<RunRecord> records;
};

namespace detail {

inline double norm2(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

inline void add_to(std::vector<double>& x, std::span<const double> inc) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += inc[i];
}

/// Running mean over iterations k > K * (1 - tail_fraction).
class TailAverage {
 public:
  TailAverage(std::size_t iterations, double tail_fraction)
      : start_(static_cast<std::size_t>(
            std::floor(static_cast<double>(iterations) * (1.0 - tail_fraction)))) {}
  void add(std::size_t k, std::span<const double> x) {
    if (k <= start_) return;
    if (sum_.empty()) sum_.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) sum_[i] += x[i];
    ++count_;
  }
  std::vector<double> mean(std::span<const double> fallback) const {
    if (count_ == 0) return {fallback.begin(), fallback.end()};
    std::vector<double> m(sum_);
    for (double& v : m) v /= static_cast<double>(count_);
    return m;
  }

 private:
  std::size_t start_;
  std::size_t count_ = 0;
  std::vector<double> sum_;
};

inline bool keep_record(const TraceOptions& trace, std::size_t k) {
  return trace.enabled && (trace.thin <= 1 || k % trace.thin == 0);
}

}  // namespace detail

struct MscOptions {
  std::size_t samples = 2;
  std::size_t iterations = 1000;
  bool rao_blackwell = false;
  // CIS proposal; the current q(.; lambda) when empty, otherwise this fixed law (e.g. the prior).
  std::optional<DiagGaussianParams> fixed_proposal;
  double tail_fraction = 0.5;
  TraceOptions trace;
};

/**
 * Markovian score climbing with the CIS kernel.
 *
 * The chain is never restarted: each iteration moves the retained sample with
 * one CIS step targeting p(z | x), then adds a step along the score of q at
 * that sample. z0 defaults to a draw from q(.; lambda0).
 */
template <StaticTarget Target>
RunResult msc_run(const Target& target, DiagGaussianParams lambda0, Schedule schedule,
                  const MscOptions& opt, RngStream& rng,
                  std::optional<std::vector<double>> z0 = std::nullopt) {
  DiagGaussianParams q = std::move(lambda0);
  std::vector<double> z = z0 ? *z0 : q.sample(rng);
  if (z.size() != target.dim()) throw std::invalid_argument("msc_run: z0 dimension mismatch");
  double log_target = target.log_joint(z);

  RunResult out;
  detail::TailAverage avg(opt.iterations, opt.tail_fraction);
  for (std::size_t k = 1; k <= opt.iterations; ++k) {
    try {
      const DiagGaussianParams& proposal = opt.fixed_proposal ? *opt.fixed_proposal : q;
      CisResult step = cis_step(target, proposal, z, opt.samples, rng, log_target);
      z = std::move(step.z);
      log_target = step.log_target;
      if (step.system.sticky) ++out.sticky_iterations;

      GradEstimate g = opt.rao_blackwell ? rao_blackwell_gradient(q, step.system)
                                         : msc_score_gradient(q, z);
      const std::vector<double> inc = schedule.step(g.value);
      std::vector<double> next(q.flat().begin(), q.flat().end());
      detail::add_to(next, inc);
      q = DiagGaussianParams::from_flat(std::move(next));
      avg.add(k, q.flat());

      if (detail::keep_record(opt.trace, k))
        out.records.push_back({static_cast<long>(k), {q.flat().begin(), q.flat().end()}, {}, z,
                               detail::norm2(g.value), effective_sample_size(step.system.weights),
                               g.max_weight, step.system.sticky});
    } catch (const RunError&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(e.what(), static_cast<long>(k));
    }
  }
  out.lambda.assign(q.flat().begin(), q.flat().end());
  out.lambda_avg = avg.mean(out.lambda);
  out.last_sample = std::move(z);
  return out;
}

struct SgdOptions {
  std::size_t samples = 2;
  std::size_t iterations = 1000;
  double tail_fraction = 0.5;
  TraceOptions trace;
};

namespace detail {

/// SGD on lambda driven by an estimator that draws fresh samples every call.
template <class Estimator>
RunResult fresh_sample_sgd(DiagGaussianParams q, Schedule schedule, const SgdOptions& opt,
                           Estimator&& estimate) {
  RunResult out;
  TailAverage avg(opt.iterations, opt.tail_fraction);
  for (std::size_t k = 1; k <= opt.iterations; ++k) {
    try {
      GradEstimate g = estimate(q);
      const std::vector<double> inc = schedule.step(g.value);
      std::vector<double> next(q.flat().begin(), q.flat().end());
      add_to(next, inc);
      q = DiagGaussianParams::from_flat(std::move(next));
      avg.add(k, q.flat());
      if (keep_record(opt.trace, k))
        out.records.push_back({static_cast<long>(k), {q.flat().begin(), q.flat().end()}, {}, {},
                               norm2(g.value), g.ess, g.max_weight, false});
    } catch (const RunError&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(e.what(), static_cast<long>(k));
    }
  }
  out.lambda.assign(q.flat().begin(), q.flat().end());
  out.lambda_avg = avg.mean(out.lambda);
  return out;
}

}  // namespace detail

/// SGD with the self-normalised IS gradient (fresh samples, no retained chain).
template <StaticTarget Target>
RunResult snis_sgd_run(const Target& target, DiagGaussianParams lambda0, Schedule schedule,
                       const SgdOptions& opt, RngStream& rng) {
  return detail::fresh_sample_sgd(std::move(lambda0), std::move(schedule), opt,
                                  [&](const DiagGaussianParams& q) {
                                    return snis_gradient(target, q, opt.samples, rng);
                                  });
}

/// SGD with the subset-average-likelihood gradient on minibatches of size m.
template <FactorizedTarget Target>
RunResult subset_avg_sgd_run(const Target& target, DiagGaussianParams lambda0, Schedule schedule,
                             const SgdOptions& opt, std::size_t m, RngStream& rng,
                             double log_scale = 0.0) {
  return detail::fresh_sample_sgd(std::move(lambda0), std::move(schedule), opt,
                                  [&](const DiagGaussianParams& q) {
                                    return subset_avg_gradient(target, q, opt.samples, m, rng,
                                                               log_scale);
                                  });
}

struct MscMlOptions {
  std::size_t samples = 10;
  std::size_t iterations = 1000;
  double tail_fraction = 0.5;
  AncestorRule ancestor_rule = AncestorRule::kTargetConsistent;
  TraceOptions trace;
};

/**
 * Score climbing with maximum likelihood on a Gaussian SSM.
 *
 * One CSMC sweep per iteration at (theta_{k-1}, lambda_{k-1}); its retained
 * trajectory feeds both the twisted-proposal score (lambda step) and the
 * Fisher-identity gradient (theta step). traj0 defaults to a trajectory drawn
 * from an unconditional twisted SMC sweep.
 */
template <GaussianSsm Model>
RunResult msc_ml_run(const Model& ssm, TwistingParams lambda0, std::vector<double> theta0,
                     Schedule lambda_schedule, Schedule theta_schedule, const MscMlOptions& opt,
                     RngStream& rng, std::optional<std::vector<double>> traj0 = std::nullopt) {
  if (theta0.size() != ssm.num_params())
    throw std::invalid_argument("msc_ml_run: theta dimension mismatch");
  TwistingParams twist = std::move(lambda0);
  std::vector<double> theta = std::move(theta0);
  std::vector<double> traj =
      traj0 ? *traj0 : smc_sample_trajectory(ssm, theta, twist, std::max<std::size_t>(opt.samples, 2), rng);

  RunResult out;
  detail::TailAverage lambda_avg(opt.iterations, opt.tail_fraction);
  detail::TailAverage theta_avg(opt.iterations, opt.tail_fraction);
  for (std::size_t k = 1; k <= opt.iterations; ++k) {
    try {
      CsmcResult step = csmc_step(ssm, theta, twist, traj, opt.samples, rng, opt.ancestor_rule);
      traj = std::move(step.trajectory);
      if (step.system.sticky) ++out.sticky_iterations;

      const std::vector<double> s = twisted_score(ssm, theta, twist, traj);
      const GradEstimate g_theta = fisher_gradient(ssm, theta, traj);

      std::vector<double> next(twist.flat().begin(), twist.flat().end());
      detail::add_to(next, lambda_schedule.step(s));
      twist = TwistingParams::from_flat(std::move(next));
      detail::add_to(theta, theta_schedule.step(g_theta.value));

      lambda_avg.add(k, twist.flat());
      theta_avg.add(k, theta);
      if (detail::keep_record(opt.trace, k))
        out.records.push_back({static_cast<long>(k), {twist.flat().begin(), twist.flat().end()},
                               theta, traj, detail::norm2(g_theta.value),
                               effective_sample_size(step.system.weights),
                               *std::max_element(step.system.weights.begin(),
                                                 step.system.weights.end()),
                               step.system.sticky});
    } catch (const RunError&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(e.what(), static_cast<long>(k));
    }
  }
  out.lambda.assign(twist.flat().begin(), twist.flat().end());
  out.lambda_avg = lambda_avg.mean(out.lambda);
  out.theta = std::move(theta);
  out.theta_avg = theta_avg.mean(out.theta);
  out.last_sample = std::move(traj);
  return out;
}

/**
 * SMC-based baseline on an SSM: each iteration runs a fresh unconditional
 * twisted SMC sweep and weights every surviving trajectory by its final
 * normalised weight, for both the lambda and theta gradients.
 */
template <GaussianSsm Model>
RunResult smc_ml_run(const Model& ssm, TwistingParams lambda0, std::vector<double> theta0,
                     Schedule lambda_schedule, Schedule theta_schedule, const MscMlOptions& opt,
                     RngStream& rng) {
  TwistingParams twist = std::move(lambda0);
  std::vector<double> theta = std::move(theta0);
  RunResult out;
  detail::TailAverage lambda_avg(opt.iterations, opt.tail_fraction);
  detail::TailAverage theta_avg(opt.iterations, opt.tail_fraction);
  for (std::size_t k = 1; k <= opt.iterations; ++k) {
    try {
      SmcSweep sweep = detail::smc_sweep(ssm, theta, twist, opt.samples, rng, nullptr,
                                         AncestorRule::kTargetConsistent);
      std::vector<double> s(twist.flat().size(), 0.0), g(theta.size(), 0.0);
      for (std::size_t i = 0; i < opt.samples; ++i) {
        const double w = sweep.final_weights[i];
        if (w == 0.0) continue;
        const std::vector<double> traj = sweep.genealogy.trace(i);
        detail::axpy(w, twisted_score(ssm, theta, twist, traj), s);
        detail::axpy(w, ssm.grad_theta_log_joint(traj, theta), g);
      }
      std::vector<double> next(twist.flat().begin(), twist.flat().end());
      detail::add_to(next, lambda_schedule.step(s));
      twist = TwistingParams::from_flat(std::move(next));
      detail::add_to(theta, theta_schedule.step(g));
      lambda_avg.add(k, twist.flat());
      theta_avg.add(k, theta);
      if (detail::keep_record(opt.trace, k))
        out.records.push_back({static_cast<long>(k), {twist.flat().begin(), twist.flat().end()},
                               theta, {}, detail::norm2(g),
                               effective_sample_size(sweep.final_weights),
                               *std::max_element(sweep.final_weights.begin(),
                                                 sweep.final_weights.end()),
                               false});
    } catch (const RunError&) {
      throw;
    } catch (const std::exception& e) {
      throw RunError(e.what(), static_cast<long>(k));
    }
  }
  out.lambda.assign(twist.flat().begin(), twist.flat().end());
  out.lambda_avg = lambda_avg.mean(out.lambda);
  out.theta = std::move(theta);
  out.theta_avg = theta_avg.mean(out.theta);
  return out;
}

}  // namespace msc
