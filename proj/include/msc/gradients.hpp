#pragma once

// Gradient estimators. Every estimator returns an ascent direction: on -L_KL
// for variational parameters, on log p(x; theta) for model parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "msc/families.hpp"
#include "msc/kernels.hpp"
#include "msc/models.hpp"
#include "msc/numkit.hpp"

namespace msc {

struct GradEstimate {
  std::vector<double> value;
  double ess = 1.0;         // effective sample size of the weights used
  double max_weight = 1.0;  // largest normalised weight
};

namespace detail {

inline void axpy(double a, std::span<const double> x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline GradEstimate weighted_scores(const DiagGaussianParams& family,
                                    const std::vector<std::vector<double>>& particles,
                                    std::span<const double> weights) {
  GradEstimate g;
  g.value.assign(family.flat().size(), 0.0);
  for (std::size_t i = 0; i < particles.size(); ++i)
    if (weights[i] > 0.0) axpy(weights[i], family.score(particles[i]), g.value);
  g.ess = effective_sample_size(weights);
  g.max_weight = *std::max_element(weights.begin(), weights.end());
  return g;
}

}  // namespace detail

/// Score of q at the kernel's retained sample.
inline GradEstimate msc_score_gradient(const DiagGaussianParams& family,
                                       std::span<const double> z_retained) {
  return {family.score(z_retained), 1.0, 1.0};
}

/// sum_i wbar_i s(z^i) over every particle of a kernel sweep.
inline GradEstimate rao_blackwell_gradient(const DiagGaussianParams& family,
                                           const ParticleSystem& system) {
  if (system.particles.empty()) throw std::invalid_argument("rao_blackwell_gradient: no particles");
  const std::vector<double> w = normalize_log_weights(system.log_weights);
  return detail::weighted_scores(family, system.particles, w);
}

/**
 * Self-normalised importance sampling estimate with fresh draws from q.
 * Biased for finite S; the bias shrinks as S grows.
 */
template <StaticTarget Target>
GradEstimate snis_gradient(const Target& target, const DiagGaussianParams& family, std::size_t S,
                           RngStream& rng) {
  if (S < 1) throw std::invalid_argument("snis_gradient: S must be at least 1");
  std::vector<std::vector<double>> z(S);
  std::vector<double> log_w(S);
  for (std::size_t i = 0; i < S; ++i) {
    z[i] = family.sample(rng);
    log_w[i] = target.log_joint(z[i]) - family.log_pdf(z[i]);
  }
  return detail::weighted_scores(family, z, normalize_log_weights(log_w));
}

/// Fisher-identity gradient: grad_theta log p(z, x; theta) at a posterior draw.
template <GaussianSsm Model>
GradEstimate fisher_gradient(const Model& ssm, std::span<const double> theta,
                             std::span<const double> trajectory) {
  if (trajectory.size() != ssm.length())
    throw std::invalid_argument("fisher_gradient: trajectory length mismatch");
  return {ssm.grad_theta_log_joint(trajectory, theta), 1.0, 1.0};
}

/**
 * Subset-average-likelihood estimate
 *   (1/S) sum_s p(z^s) p(x_M | z^s)^{n/m} / q(z^s) * s(z^s),  z^s ~ q
 * with one minibatch M of size m drawn without replacement per call.
 * The weights are divided by exp(log_scale); a constant scale does not move
 * the fixed point but keeps the step sizes in a sane range.
 */
template <FactorizedTarget Target>
GradEstimate subset_avg_gradient(const Target& target, const DiagGaussianParams& family,
                                 std::size_t S, std::size_t m, RngStream& rng,
                                 double log_scale = 0.0) {
  const std::size_t n = target.num_points();
  if (m < 1 || m > n) throw std::invalid_argument("subset_avg_gradient: need 1 <= m <= n");
  if (S < 1) throw std::invalid_argument("subset_avg_gradient: S must be at least 1");

  std::vector<std::size_t> all(n), batch;
  std::iota(all.begin(), all.end(), std::size_t{0});
  batch.reserve(m);
  std::sample(all.begin(), all.end(), std::back_inserter(batch), m, rng);
  const double power = static_cast<double>(n) / static_cast<double>(m);

  GradEstimate g;
  g.value.assign(family.flat().size(), 0.0);
  std::vector<double> log_w(S);
  for (std::size_t s = 0; s < S; ++s) {
    const std::vector<double> z = family.sample(rng);
    double ll = 0.0;
    for (std::size_t j : batch) ll += target.log_lik_point(j, z);
    log_w[s] = target.log_prior(z) + power * ll - family.log_pdf(z) - log_scale;
    detail::axpy(std::exp(log_w[s]) / static_cast<double>(S), family.score(z), g.value);
  }
  const std::vector<double> w = normalize_log_weights(log_w);
  g.ess = effective_sample_size(w);
  g.max_weight = *std::max_element(w.begin(), w.end());
  return g;
}

/// Number of size-m subsets of n items, as a double.
inline double binomial_count(std::size_t n, std::size_t m) {
  double c = 1.0;
  for (std::size_t i = 1; i <= m; ++i)
    c = c * static_cast<double>(n - m + i) / static_cast<double>(i);
  return c;
}

/**
 * Exact moments of the perturbed posterior
 *   ptilde(z) ∝ p(z) sum_M p(x_M | z)^{n/m}
 * for the conjugate Gaussian model, by enumerating every size-m subset.
 * Each subset contributes a Gaussian in z with a closed-form normaliser.
 */
inline Gaussian1 perturbed_posterior_oracle(const ConjugateGaussianTarget& target, std::size_t m) {
  const std::size_t n = target.num_points();
  if (m < 1 || m > n) throw std::invalid_argument("perturbed_posterior_oracle: need 1 <= m <= n");
  if (binomial_count(n, m) > 1e4)
    throw std::invalid_argument("perturbed_posterior_oracle: too many subsets to enumerate");

  const double k = static_cast<double>(n) / static_cast<double>(m);
  const double p0 = target.prior_var(), r = target.noise_var();
  const auto x = target.data();

  std::vector<double> log_mass, means, vars;
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    double sx = 0.0, sxx = 0.0;
    for (std::size_t j : idx) {
      sx += x[j];
      sxx += x[j] * x[j];
    }
    // log integrand = -A z^2 / 2 + B z + C
    const double A = 1.0 / p0 + k * static_cast<double>(m) / r;
    const double B = k * sx / r;
    const double C = -0.5 * std::log(2.0 * std::numbers::pi * p0) -
                     0.5 * k * static_cast<double>(m) * std::log(2.0 * std::numbers::pi * r) -
                     0.5 * k * sxx / r;
    log_mass.push_back(C + 0.5 * B * B / A + 0.5 * std::log(2.0 * std::numbers::pi / A));
    means.push_back(B / A);
    vars.push_back(1.0 / A);

    // next combination in lexicographic order
    std::size_t i = m;
    while (i > 0 && idx[i - 1] == n - m + i - 1) --i;
    if (i == 0) break;
    ++idx[i - 1];
    for (std::size_t j = i; j < m; ++j) idx[j] = idx[j - 1] + 1;
  }

  const std::vector<double> w = normalize_log_weights(log_mass);
  double mean = 0.0, second = 0.0;
  for (std::size_t c = 0; c < w.size(); ++c) {
    mean += w[c] * means[c];
    second += w[c] * (vars[c] + means[c] * means[c]);
  }
  return {mean, second - mean * mean};
}

}  // namespace msc
