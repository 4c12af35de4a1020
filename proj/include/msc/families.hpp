#pragma once

// Variational families: a diagonal Gaussian for static targets and the
// twisted Gaussian proposal used on state-space models.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "msc/numkit.hpp"
#include "msc/ssm.hpp"

namespace msc {

/**
 * Diagonal Gaussian q(z) = N(mu, diag(sigma^2)).
 *
 * Parameters live in one flat vector [mu_0..mu_{d-1}, log_sigma_0..log_sigma_{d-1}]
 * so optimisers can treat them as an opaque point in R^{2d}. Scores use the
 * same layout.
 */
class DiagGaussianParams {
 public:
  DiagGaussianParams() = default;
  explicit DiagGaussianParams(std::size_t dim) : values_(2 * dim, 0.0) {}
  DiagGaussianParams(std::span<const double> mu, std::span<const double> log_sigma) {
    if (mu.size() != log_sigma.size())
      throw std::invalid_argument("DiagGaussianParams: mu and log_sigma differ in length");
    values_.assign(mu.begin(), mu.end());
    values_.insert(values_.end(), log_sigma.begin(), log_sigma.end());
  }
  static DiagGaussianParams from_flat(std::vector<double> flat) {
    if (flat.size() % 2 != 0) throw std::invalid_argument("DiagGaussianParams: odd flat length");
    DiagGaussianParams p;
    p.values_ = std::move(flat);
    return p;
  }

  std::size_t dim() const noexcept { return values_.size() / 2; }

  std::span<double> mu() { return {values_.data(), dim()}; }
  std::span<const double> mu() const { return {values_.data(), dim()}; }
  std::span<double> log_sigma() { return {values_.data() + dim(), dim()}; }
  std::span<const double> log_sigma() const { return {values_.data() + dim(), dim()}; }
  double sigma(std::size_t i) const { return std::exp(values_[dim() + i]); }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }

  std::vector<double> sample(RngStream& rng) const {
    std::vector<double> z(dim());
    for (std::size_t i = 0; i < dim(); ++i) z[i] = values_[i] + sigma(i) * rng.normal();
    return z;
  }

  double log_pdf(std::span<const double> z) const {
    check_dim(z);
    double lp = 0.0;
    for (std::size_t i = 0; i < dim(); ++i) {
      const double ls = values_[dim() + i];
      const double u = (z[i] - values_[i]) * std::exp(-ls);
      lp += -kHalfLog2Pi - ls - 0.5 * u * u;
    }
    return lp;
  }

  /// d/dmu = (z - mu)/sigma^2, d/dlog_sigma = (z - mu)^2/sigma^2 - 1.
  std::vector<double> score(std::span<const double> z) const {
    check_dim(z);
    std::vector<double> g(values_.size());
    for (std::size_t i = 0; i < dim(); ++i) {
      const double inv_var = std::exp(-2.0 * values_[dim() + i]);
      const double d = z[i] - values_[i];
      g[i] = d * inv_var;
      g[dim() + i] = d * d * inv_var - 1.0;
    }
    return g;
  }

  bool operator==(const DiagGaussianParams&) const = default;

 private:
  void check_dim(std::span<const double> z) const {
    if (z.size() != dim()) throw std::invalid_argument("DiagGaussianParams: dimension mismatch");
  }

  std::vector<double> values_;
};

inline std::vector<double> diag_gaussian_sample(const DiagGaussianParams& q, RngStream& rng) {
  return q.sample(rng);
}
inline double diag_gaussian_log_pdf(const DiagGaussianParams& q, std::span<const double> z) {
  return q.log_pdf(z);
}
inline std::vector<double> diag_gaussian_score(const DiagGaussianParams& q,
                                               std::span<const double> z) {
  return q.score(z);
}

/**
 * Normalised product N(z; base_mean, base_var) * exp(-lambda z^2 / 2 + nu z).
 * Precision adds: 1/var = 1/base_var + lambda.
 */
inline Gaussian1 twisted_gaussian_compose(double base_mean, double base_var, double nu,
                                          double lambda) {
  const double var = 1.0 / (1.0 / base_var + lambda);
  return {(base_mean / base_var + nu) * var, var};
}

/**
 * Twisting potentials psi_t(z) = exp(-Lambda_t z^2 / 2 + nu_t z), t = 0..T-1.
 *
 * Flat layout [nu_0..nu_{T-1}, rho_0..rho_{T-1}] with Lambda_t = exp(rho_t).
 */
class TwistingParams {
 public:
  TwistingParams() = default;
  explicit TwistingParams(std::size_t length, double nu = 0.0, double rho = -30.0)
      : values_(2 * length, nu) {
    for (std::size_t t = 0; t < length; ++t) values_[length + t] = rho;
  }
  static TwistingParams from_flat(std::vector<double> flat) {
    if (flat.size() % 2 != 0) throw std::invalid_argument("TwistingParams: odd flat length");
    TwistingParams p;
    p.values_ = std::move(flat);
    return p;
  }

  std::size_t length() const noexcept { return values_.size() / 2; }
  double nu(std::size_t t) const { return values_[t]; }
  double rho(std::size_t t) const { return values_[length() + t]; }
  double precision(std::size_t t) const { return std::exp(rho(t)); }

  double log_potential(std::size_t t, double z) const {
    return -0.5 * precision(t) * z * z + nu(t) * z;
  }

  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }

 private:
  std::vector<double> values_;
};

/// Proposal law of state t given state t-1 (ignored at t = 0).
template <GaussianSsm Model>
Gaussian1 twisted_proposal(const Model& ssm, std::span<const double> theta,
                           const TwistingParams& twist, std::size_t t, double z_prev) {
  const Gaussian1 base = t == 0 ? ssm.prior(theta) : ssm.transition(t, z_prev, theta);
  return twisted_gaussian_compose(base.mean, base.var, twist.nu(t), twist.precision(t));
}

/// log q(z_{0:T-1}; lambda) under the twisted proposal.
template <GaussianSsm Model>
double twisted_log_pdf(const Model& ssm, std::span<const double> theta,
                       const TwistingParams& twist, std::span<const double> traj) {
  if (traj.size() != twist.length())
    throw std::invalid_argument("twisted_log_pdf: trajectory length mismatch");
  double lp = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const Gaussian1 g = twisted_proposal(ssm, theta, twist, t, t ? traj[t - 1] : 0.0);
    lp += normal_log_pdf_var(traj[t], g.mean, g.var);
  }
  return lp;
}

/**
 * Score of the twisted proposal with respect to (nu_t, rho_t).
 *
 * With proposal moments (m, v) at step t:
 *   d/dnu_t     = z_t - m
 *   d/dLambda_t = (v + m^2 - z_t^2) / 2,  then times Lambda_t for rho_t.
 */
template <GaussianSsm Model>
std::vector<double> twisted_score(const Model& ssm, std::span<const double> theta,
                                  const TwistingParams& twist, std::span<const double> traj) {
  const std::size_t T = twist.length();
  if (traj.size() != T) throw std::invalid_argument("twisted_score: trajectory length mismatch");
  std::vector<double> g(2 * T);
  for (std::size_t t = 0; t < T; ++t) {
    const Gaussian1 q = twisted_proposal(ssm, theta, twist, t, t ? traj[t - 1] : 0.0);
    const double z = traj[t];
    g[t] = z - q.mean;
    g[T + t] = 0.5 * (q.var + q.mean * q.mean - z * z) * twist.precision(t);
  }
  return g;
}

}  // namespace msc
