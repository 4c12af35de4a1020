#pragma once

// Posterior-invariant Markov kernels: conditional importance sampling for
// static targets and conditional SMC with ancestor sampling for SSMs.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msc/families.hpp"
#include "msc/models.hpp"
#include "msc/numkit.hpp"
#include "msc/ssm.hpp"

namespace msc {

/**
 * Weighted particles produced by one kernel sweep. Index 0 always holds the
 * conditional sample the kernel was started from.
 */
struct ParticleSystem {
  std::vector<std::vector<double>> particles;
  std::vector<double> log_weights;
  std::vector<double> weights;  // normalised
  std::size_t selected = 0;
  // Every weight except the conditional one underflowed; the kernel stayed put.
  bool sticky = false;
};

inline std::vector<std::size_t> multinomial_resample(std::span<const double> weights,
                                                     std::size_t count, RngStream& rng) {
  const CategoricalSampler draw(weights);
  std::vector<std::size_t> idx(count);
  for (auto& a : idx) a = draw(rng);
  return idx;
}

namespace detail {

inline bool only_first_finite(std::span<const double> log_w) {
  if (log_w.empty() || log_w[0] == kNegInf) return false;
  for (std::size_t i = 1; i < log_w.size(); ++i)
    if (log_w[i] != kNegInf) return false;
  return log_w.size() > 1;
}

}  // namespace detail

struct CisResult {
  std::vector<double> z;
  double log_target = 0.0;  // log p(z, x) of the returned sample
  ParticleSystem system;
  std::vector<double> log_targets;  // log p(z^i, x) for every particle
};

/**
 * One conditional importance sampling step.
 *
 * Particle 0 is z_cond, particles 1..S-1 are drawn from the proposal, every
 * particle is weighted by p(z, x) / q(z), and the new state is picked with
 * probability proportional to the weights. Pass `cond_log_target` when
 * log p(z_cond, x) is already known to skip its re-evaluation.
 */
template <StaticTarget Target>
CisResult cis_step(const Target& target, const DiagGaussianParams& proposal,
                   std::span<const double> z_cond, std::size_t S, RngStream& rng,
                   std::optional<double> cond_log_target = std::nullopt) {
  if (S < 1) throw std::invalid_argument("cis_step: S must be at least 1");
  if (z_cond.size() != target.dim()) throw std::invalid_argument("cis_step: dimension mismatch");

  CisResult out;
  ParticleSystem& sys = out.system;
  sys.particles.reserve(S);
  sys.particles.emplace_back(z_cond.begin(), z_cond.end());
  for (std::size_t i = 1; i < S; ++i) sys.particles.push_back(proposal.sample(rng));

  out.log_targets.resize(S);
  sys.log_weights.resize(S);
  for (std::size_t i = 0; i < S; ++i) {
    out.log_targets[i] = (i == 0 && cond_log_target) ? *cond_log_target
                                                     : target.log_joint(sys.particles[i]);
    sys.log_weights[i] = out.log_targets[i] - proposal.log_pdf(sys.particles[i]);
  }
  sys.weights = normalize_log_weights(sys.log_weights);
  sys.sticky = detail::only_first_finite(sys.log_weights);
  sys.selected = S == 1 ? 0 : categorical_sample(sys.weights, rng);
  out.z = sys.particles[sys.selected];
  out.log_target = out.log_targets[sys.selected];
  return out;
}

// ---------------------------------------------------------------------------
// Conditional SMC

/// Particle genealogy of an SMC sweep: states[t][i] and ancestors[t-1][i].
struct Genealogy {
  std::vector<std::vector<double>> states;
  std::vector<std::vector<std::size_t>> ancestors;

  std::size_t length() const { return states.size(); }

  /// Trajectory ending in particle i at the final step.
  std::vector<double> trace(std::size_t i) const {
    const std::size_t T = states.size();
    std::vector<double> traj(T);
    for (std::size_t t = T; t-- > 0;) {
      traj[t] = states[t][i];
      if (t > 0) i = ancestors[t - 1][i];
    }
    return traj;
  }
};

/**
 * Ancestor-sampling rule for the pinned particle.
 *
 * kTargetConsistent weights candidate j by w_{t-1}^j p(z'_t | z^j) p(x_{t-1} | z^j) / psi_{t-1}(z^j),
 * the factor that keeps the kernel invariant for the lookahead weights used
 * here. kProposalOnly uses w_{t-1}^j q(z'_t | z^j) and is kept for comparison.
 */
enum class AncestorRule { kTargetConsistent, kProposalOnly };

/**
 * Log incremental weight at step t for a particle at z whose parent is z_prev.
 *
 *   t = 0:      p(z_0) psi_0(z_0) / q_0(z_0)
 *   0 < t < T-1: p(z_t|z_{t-1}) p(x_{t-1}|z_{t-1}) / q_t(z_t|z_{t-1}) * psi_t(z_t) / psi_{t-1}(z_{t-1})
 *   t = T-1:    psi_t(z_t) in the numerator is replaced by p(x_t|z_t)
 * With T = 1 the first step is also the last and uses p(x_0|z_0) instead of psi_0.
 */
template <GaussianSsm Model>
double csmc_log_weight(const Model& ssm, std::span<const double> theta,
                       const TwistingParams& twist, std::size_t t, double z, double z_prev) {
  const std::size_t T = ssm.length();
  const bool last = t + 1 == T;
  const Gaussian1 q = twisted_proposal(ssm, theta, twist, t, z_prev);
  double lw = -normal_log_pdf_var(z, q.mean, q.var);
  if (t == 0) {
    const Gaussian1 p0 = ssm.prior(theta);
    lw += normal_log_pdf_var(z, p0.mean, p0.var);
  } else {
    const Gaussian1 tr = ssm.transition(t, z_prev, theta);
    lw += normal_log_pdf_var(z, tr.mean, tr.var) + ssm.log_obs(t - 1, z_prev, theta) -
          twist.log_potential(t - 1, z_prev);
  }
  lw += last ? ssm.log_obs(t, z, theta) : twist.log_potential(t, z);
  return lw;
}

struct SmcSweep {
  Genealogy genealogy;
  std::vector<double> final_log_weights;
  std::vector<double> final_weights;
  double log_evidence = 0.0;  // sum_t log mean_i w_t^i
  bool sticky = false;
};

namespace detail {

inline std::vector<double> normalize_at_step(std::span<const double> log_w, std::size_t t) {
  try {
    return normalize_log_weights(log_w);
  } catch (const DegenerateWeightsError&) {
    throw DegenerateWeightsError("SMC weights degenerate at step " + std::to_string(t),
                                 static_cast<long>(t));
  }
}

/// Twisted SMC sweep; pins particle 0 to `cond` when given (conditional SMC).
template <GaussianSsm Model>
SmcSweep smc_sweep(const Model& ssm, std::span<const double> theta, const TwistingParams& twist,
                   std::size_t S, RngStream& rng, const std::vector<double>* cond,
                   AncestorRule rule) {
  const std::size_t T = ssm.length();
  if (T == 0) throw std::invalid_argument("smc_sweep: empty series");
  if (twist.length() != T) throw std::invalid_argument("smc_sweep: twisting length mismatch");
  if (cond && cond->size() != T)
    throw std::invalid_argument("smc_sweep: conditional trajectory length mismatch");

  SmcSweep out;
  Genealogy& g = out.genealogy;
  g.states.assign(T, std::vector<double>(S));
  g.ancestors.assign(T - 1, std::vector<std::size_t>(S));
  std::vector<double> log_w(S), w;
  const std::size_t first_free = cond ? 1 : 0;

  const Gaussian1 q0 = twisted_proposal(ssm, theta, twist, 0, 0.0);
  const double sd0 = std::sqrt(q0.var);
  if (cond) g.states[0][0] = (*cond)[0];
  for (std::size_t i = first_free; i < S; ++i) g.states[0][i] = q0.mean + sd0 * rng.normal();
  for (std::size_t i = 0; i < S; ++i)
    log_w[i] = csmc_log_weight(ssm, theta, twist, 0, g.states[0][i], 0.0);
  out.log_evidence += log_mean_exp(log_w);

  std::vector<double> as_logits(cond ? S : 0);
  for (std::size_t t = 1; t < T; ++t) {
    w = normalize_at_step(log_w, t - 1);
    auto& anc = g.ancestors[t - 1];
    const auto& prev = g.states[t - 1];
    auto& cur = g.states[t];
    const CategoricalSampler draw_ancestor(w);
    for (std::size_t i = first_free; i < S; ++i) {
      anc[i] = draw_ancestor(rng);
      const Gaussian1 q = twisted_proposal(ssm, theta, twist, t, prev[anc[i]]);
      cur[i] = q.mean + std::sqrt(q.var) * rng.normal();
    }
    if (cond) {
      const double z_pin = (*cond)[t];
      for (std::size_t j = 0; j < S; ++j) {
        if (w[j] == 0.0) {
          as_logits[j] = kNegInf;
          continue;
        }
        double l = std::log(w[j]);
        if (rule == AncestorRule::kTargetConsistent) {
          const Gaussian1 tr = ssm.transition(t, prev[j], theta);
          l += normal_log_pdf_var(z_pin, tr.mean, tr.var) + ssm.log_obs(t - 1, prev[j], theta) -
               twist.log_potential(t - 1, prev[j]);
        } else {
          const Gaussian1 q = twisted_proposal(ssm, theta, twist, t, prev[j]);
          l += normal_log_pdf_var(z_pin, q.mean, q.var);
        }
        as_logits[j] = l;
      }
      anc[0] = categorical_sample(normalize_at_step(as_logits, t), rng);
      cur[0] = z_pin;
    }
    for (std::size_t i = 0; i < S; ++i)
      log_w[i] = csmc_log_weight(ssm, theta, twist, t, cur[i], prev[anc[i]]);
    out.log_evidence += log_mean_exp(log_w);
  }

  out.final_weights = normalize_at_step(log_w, T - 1);
  out.final_log_weights = std::move(log_w);
  out.sticky = cond && only_first_finite(out.final_log_weights);
  return out;
}

}  // namespace detail

struct CsmcResult {
  std::vector<double> trajectory;
  ParticleSystem system;  // final-step weights over complete trajectories
  Genealogy genealogy;
};

/**
 * One conditional SMC step with ancestor sampling and twisted proposals.
 * Returns the new conditional trajectory drawn from the final weights.
 */
template <GaussianSsm Model>
CsmcResult csmc_step(const Model& ssm, std::span<const double> theta, const TwistingParams& twist,
                     const std::vector<double>& traj_cond, std::size_t S, RngStream& rng,
                     AncestorRule rule = AncestorRule::kTargetConsistent) {
  if (S < 1) throw std::invalid_argument("csmc_step: S must be at least 1");
  SmcSweep sweep = detail::smc_sweep(ssm, theta, twist, S, rng, &traj_cond, rule);

  CsmcResult out;
  ParticleSystem& sys = out.system;
  sys.particles.reserve(S);
  for (std::size_t i = 0; i < S; ++i) sys.particles.push_back(sweep.genealogy.trace(i));
  sys.log_weights = std::move(sweep.final_log_weights);
  sys.weights = std::move(sweep.final_weights);
  sys.sticky = sweep.sticky;
  sys.selected = S == 1 ? 0 : categorical_sample(sys.weights, rng);
  out.trajectory = sys.particles[sys.selected];
  out.genealogy = std::move(sweep.genealogy);
  return out;
}

/// Unconditional twisted SMC sweep; returns the log of the evidence estimate.
template <GaussianSsm Model>
double smc_marginal_likelihood(const Model& ssm, std::span<const double> theta,
                               const TwistingParams& twist, std::size_t S, RngStream& rng) {
  if (S < 2) throw std::invalid_argument("smc_marginal_likelihood: S must be at least 2");
  return detail::smc_sweep(ssm, theta, twist, S, rng, nullptr, AncestorRule::kTargetConsistent)
      .log_evidence;
}

/// Unconditional sweep followed by one trajectory draw; used to seed a CSMC chain.
template <GaussianSsm Model>
std::vector<double> smc_sample_trajectory(const Model& ssm, std::span<const double> theta,
                                          const TwistingParams& twist, std::size_t S,
                                          RngStream& rng) {
  SmcSweep sweep =
      detail::smc_sweep(ssm, theta, twist, S, rng, nullptr, AncestorRule::kTargetConsistent);
  return sweep.genealogy.trace(categorical_sample(sweep.final_weights, rng));
}

}  // namespace msc
