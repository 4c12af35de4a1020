#pragma once

// Target distributions and their exact oracles.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "msc/families.hpp"
#include "msc/numkit.hpp"
#include "msc/ssm.hpp"

namespace msc {

/// Unnormalised log p(z, x) over a fixed-dimension latent z.
template <class T>
concept StaticTarget = requires(const T& t, std::span<const double> z) {
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.log_joint(z) } -> std::convertible_to<double>;
};

/// Static target whose likelihood is a product over data points.
template <class T>
concept FactorizedTarget = StaticTarget<T> && requires(const T& t, std::span<const double> z,
                                                       std::size_t i) {
  { t.num_points() } -> std::convertible_to<std::size_t>;
  { t.log_prior(z) } -> std::convertible_to<double>;
  { t.log_lik_point(i, z) } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Skew normal

class SkewNormalTarget {
 public:
  SkewNormalTarget(double xi, double omega, double alpha) : xi_(xi), omega_(omega), alpha_(alpha) {
    if (!(omega > 0.0)) throw std::invalid_argument("SkewNormalTarget: omega must be positive");
  }

  std::size_t dim() const { return 1; }
  double log_joint(std::span<const double> z) const {
    return skew_normal_log_pdf(z[0], xi_, omega_, alpha_);
  }

  double delta() const { return alpha_ / std::sqrt(1.0 + alpha_ * alpha_); }
  double mean() const { return xi_ + omega_ * delta() * std::sqrt(2.0 / std::numbers::pi); }
  double sd() const {
    const double d = delta();
    return omega_ * std::sqrt(1.0 - 2.0 * d * d / std::numbers::pi);
  }

  double xi() const { return xi_; }
  double omega() const { return omega_; }
  double alpha() const { return alpha_; }

 private:
  double xi_, omega_, alpha_;
};

inline SkewNormalTarget skew_normal_target(double xi, double omega, double alpha) {
  return {xi, omega, alpha};
}

// ---------------------------------------------------------------------------
// Scalar mean with Gaussian prior and Gaussian noise: z ~ N(0, prior_var),
// x_i ~ N(z, noise_var).

class ConjugateGaussianTarget {
 public:
  ConjugateGaussianTarget(double prior_var, double noise_var, std::vector<double> data)
      : prior_var_(prior_var), noise_var_(noise_var), data_(std::move(data)) {
    if (!(prior_var > 0.0) || !(noise_var > 0.0))
      throw std::invalid_argument("ConjugateGaussianTarget: variances must be positive");
  }

  std::size_t dim() const { return 1; }
  std::size_t num_points() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  double prior_var() const { return prior_var_; }
  double noise_var() const { return noise_var_; }

  double log_prior(std::span<const double> z) const {
    return normal_log_pdf_var(z[0], 0.0, prior_var_);
  }
  double log_lik_point(std::size_t i, std::span<const double> z) const {
    return normal_log_pdf_var(data_[i], z[0], noise_var_);
  }
  double log_joint(std::span<const double> z) const {
    double lp = log_prior(z);
    for (std::size_t i = 0; i < data_.size(); ++i) lp += log_lik_point(i, z);
    return lp;
  }

  double posterior_var() const {
    return 1.0 / (1.0 / prior_var_ + static_cast<double>(data_.size()) / noise_var_);
  }
  double posterior_mean() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s / noise_var_ * posterior_var();
  }

 private:
  double prior_var_, noise_var_;
  std::vector<double> data_;
};

inline ConjugateGaussianTarget conjugate_gaussian_target(double prior_var, double noise_var,
                                                         std::vector<double> data) {
  return {prior_var, noise_var, std::move(data)};
}

// ---------------------------------------------------------------------------
// Bayesian probit regression

/// Row-major design matrix (intercept column included) and binary labels.
struct ProbitData {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> X;
  std::vector<int> y;

  std::span<const double> row(std::size_t i) const { return {X.data() + i * d, d}; }

  void validate() const {
    if (X.size() != n * d || y.size() != n)
      throw std::invalid_argument("ProbitData: inconsistent sizes");
    for (int v : y)
      if (v != 0 && v != 1) throw std::invalid_argument("ProbitData: labels must be 0 or 1");
    for (double v : X)
      if (std::isnan(v)) throw std::invalid_argument("ProbitData: NaN feature");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Standard normal prior on z plus the probit likelihood.
inline double probit_log_joint(const ProbitData& data, std::span<const double> z) {
  if (z.size() != data.d) throw std::invalid_argument("probit_log_joint: dimension mismatch");
  double lp = 0.0;
  for (double v : z) lp += -kHalfLog2Pi - 0.5 * v * v;
  for (std::size_t i = 0; i < data.n; ++i) {
    const double a = dot(data.row(i), z);
    lp += std_normal_log_cdf(data.y[i] ? a : -a);
  }
  return lp;
}

class ProbitTarget {
 public:
  explicit ProbitTarget(ProbitData data) : data_(std::move(data)) { data_.validate(); }

  std::size_t dim() const { return data_.d; }
  std::size_t num_points() const { return data_.n; }
  const ProbitData& data() const { return data_; }

  double log_joint(std::span<const double> z) const { return probit_log_joint(data_, z); }
  double log_prior(std::span<const double> z) const {
    double lp = 0.0;
    for (double v : z) lp += -kHalfLog2Pi - 0.5 * v * v;
    return lp;
  }
  double log_lik_point(std::size_t i, std::span<const double> z) const {
    const double a = dot(data_.row(i), z);
    return std_normal_log_cdf(data_.y[i] ? a : -a);
  }

 private:
  ProbitData data_;
};

/// P(y = 1 | x_new) integrated against q: Phi(x'mu / sqrt(1 + sum x_d^2 sigma_d^2)).
inline double probit_predict(const DiagGaussianParams& q, std::span<const double> x_new) {
  if (x_new.size() != q.dim()) throw std::invalid_argument("probit_predict: dimension mismatch");
  double m = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    m += x_new[i] * q.mu()[i];
    const double sd = q.sigma(i);
    s2 += x_new[i] * x_new[i] * sd * sd;
  }
  return std_normal_cdf(m / std::sqrt(1.0 + s2));
}

/// Fraction of rows whose predicted label (prob >= 0.5 -> 1) differs from y.
inline double probit_test_error(const DiagGaussianParams& q, const ProbitData& data) {
  if (data.n == 0) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.n; ++i) {
    const int label = probit_predict(q, data.row(i)) >= 0.5 ? 1 : 0;
    if (label != data.y[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.n);
}

// ---------------------------------------------------------------------------
// State-space models

/// log p(z, x; theta) assembled term by term from the model's parts.
template <GaussianSsm Model>
double ssm_log_joint(const Model& m, std::span<const double> traj, std::span<const double> theta) {
  const Gaussian1 p0 = m.prior(theta);
  double lp = normal_log_pdf_var(traj[0], p0.mean, p0.var);
  for (std::size_t t = 1; t < traj.size(); ++t) {
    const Gaussian1 tr = m.transition(t, traj[t - 1], theta);
    lp += normal_log_pdf_var(traj[t], tr.mean, tr.var);
  }
  for (std::size_t t = 0; t < traj.size(); ++t) lp += m.log_obs(t, traj[t], theta);
  return lp;
}

/**
 * Scalar linear-Gaussian SSM
 *   z_0 ~ N(0, prior_var), z_t = a z_{t-1} + N(0, q), x_t = c z_t + N(0, r)
 * with theta = (a, log q, log r); c and prior_var are fixed.
 */
class LinearGaussianSsm {
 public:
  LinearGaussianSsm(std::vector<double> data, double obs_coef, double prior_var)
      : x_(std::move(data)), c_(obs_coef), prior_var_(prior_var) {
    if (!(prior_var > 0.0)) throw std::invalid_argument("LinearGaussianSsm: prior_var must be > 0");
  }

  static std::vector<double> make_theta(double a, double trans_var, double obs_var) {
    if (!(trans_var > 0.0) || !(obs_var > 0.0))
      throw std::invalid_argument("LinearGaussianSsm: variances must be positive");
    return {a, std::log(trans_var), std::log(obs_var)};
  }

  std::size_t length() const { return x_.size(); }
  std::size_t num_params() const { return 3; }
  std::span<const double> data() const { return x_; }
  double obs_coef() const { return c_; }
  double prior_var() const { return prior_var_; }

  Gaussian1 prior(std::span<const double>) const { return {0.0, prior_var_}; }
  Gaussian1 transition(std::size_t, double z_prev, std::span<const double> theta) const {
    return {theta[0] * z_prev, std::exp(theta[1])};
  }
  double log_obs(std::size_t t, double z, std::span<const double> theta) const {
    return normal_log_pdf_var(x_[t], c_ * z, std::exp(theta[2]));
  }

  double log_joint(std::span<const double> traj, std::span<const double> theta) const {
    const double q = std::exp(theta[1]), r = std::exp(theta[2]);
    double lp = normal_log_pdf_var(traj[0], 0.0, prior_var_);
    for (std::size_t t = 1; t < traj.size(); ++t)
      lp += normal_log_pdf_var(traj[t], theta[0] * traj[t - 1], q);
    for (std::size_t t = 0; t < traj.size(); ++t) lp += normal_log_pdf_var(x_[t], c_ * traj[t], r);
    return lp;
  }

  std::vector<double> grad_theta_log_joint(std::span<const double> traj,
                                           std::span<const double> theta) const {
    const double a = theta[0], q = std::exp(theta[1]), r = std::exp(theta[2]);
    std::vector<double> g(3, 0.0);
    for (std::size_t t = 1; t < traj.size(); ++t) {
      const double res = traj[t] - a * traj[t - 1];
      g[0] += res * traj[t - 1] / q;
      g[1] += -0.5 + 0.5 * res * res / q;
    }
    for (std::size_t t = 0; t < traj.size(); ++t) {
      const double res = x_[t] - c_ * traj[t];
      g[2] += -0.5 + 0.5 * res * res / r;
    }
    return g;
  }

  double kalman_log_likelihood(std::span<const double> theta) const {
    return run_filter(theta).log_likelihood;
  }

  /// Marginal smoothing distributions p(z_t | x_{0:T-1}) via Rauch-Tung-Striebel.
  std::vector<Gaussian1> kalman_smoother_moments(std::span<const double> theta) const {
    const Filtered f = run_filter(theta);
    const std::size_t T = x_.size();
    const double a = theta[0];
    std::vector<Gaussian1> s(T);
    s[T - 1] = f.filtered[T - 1];
    for (std::size_t t = T - 1; t-- > 0;) {
      const Gaussian1& pred = f.predicted[t + 1];
      const double gain = f.filtered[t].var * a / pred.var;
      s[t].mean = f.filtered[t].mean + gain * (s[t + 1].mean - pred.mean);
      s[t].var = f.filtered[t].var + gain * gain * (s[t + 1].var - pred.var);
    }
    return s;
  }

  /// Draws (z, x) from the model with the given theta.
  static std::pair<std::vector<double>, std::vector<double>> simulate(
      std::span<const double> theta, double obs_coef, double prior_var, std::size_t T,
      RngStream& rng) {
    std::vector<double> z(T), x(T);
    const double q = std::exp(theta[1]), r = std::exp(theta[2]);
    for (std::size_t t = 0; t < T; ++t) {
      z[t] = t == 0 ? rng.normal(0.0, std::sqrt(prior_var))
                    : rng.normal(theta[0] * z[t - 1], std::sqrt(q));
      x[t] = rng.normal(obs_coef * z[t], std::sqrt(r));
    }
    return {std::move(z), std::move(x)};
  }

 private:
  struct Filtered {
    std::vector<Gaussian1> predicted, filtered;
    double log_likelihood = 0.0;
  };

  Filtered run_filter(std::span<const double> theta) const {
    const std::size_t T = x_.size();
    const double a = theta[0], q = std::exp(theta[1]), r = std::exp(theta[2]);
    Filtered f;
    f.predicted.resize(T);
    f.filtered.resize(T);
    Gaussian1 pred{0.0, prior_var_};
    for (std::size_t t = 0; t < T; ++t) {
      f.predicted[t] = pred;
      const double s = c_ * c_ * pred.var + r;
      const double innov = x_[t] - c_ * pred.mean;
      f.log_likelihood += normal_log_pdf_var(x_[t], c_ * pred.mean, s);
      const double gain = pred.var * c_ / s;
      f.filtered[t] = {pred.mean + gain * innov, (1.0 - gain * c_) * pred.var};
      pred = {a * f.filtered[t].mean, a * a * f.filtered[t].var + q};
    }
    return f;
  }

  std::vector<double> x_;
  double c_, prior_var_;
};

/// Stochastic volatility parameters in constrained coordinates.
struct SvParams {
  double sigma2 = 0.1;
  double phi = 0.9;
  double mu = 0.0;
  double beta = 1.0;

  void validate() const {
    if (!(sigma2 > 0.0) || !(phi > -1.0 && phi < 1.0) || !std::isfinite(mu) || !(beta > 0.0))
      throw std::invalid_argument("SvParams: parameters violate constraints");
  }
  /// (log sigma2, atanh phi, mu, log beta)
  std::vector<double> unconstrained() const {
    validate();
    return {std::log(sigma2), std::atanh(phi), mu, std::log(beta)};
  }
  static SvParams constrained(std::span<const double> u) {
    return {std::exp(u[0]), std::tanh(u[1]), u[2], std::exp(u[3])};
  }
};

/**
 * Stochastic volatility model
 *   z_0 ~ N(0, sigma2 / (1 - phi^2))
 *   z_t ~ N(mu + phi (z_{t-1} - mu), sigma2)
 *   x_t ~ N(0, beta exp(z_t))
 * with theta = SvParams::unconstrained().
 */
class StochVolSsm {
 public:
  explicit StochVolSsm(std::vector<double> data) : x_(std::move(data)) {}

  std::size_t length() const { return x_.size(); }
  std::size_t num_params() const { return 4; }
  std::span<const double> data() const { return x_; }

  Gaussian1 prior(std::span<const double> theta) const {
    const double phi = std::tanh(theta[1]);
    return {0.0, std::exp(theta[0]) / (1.0 - phi * phi)};
  }
  Gaussian1 transition(std::size_t, double z_prev, std::span<const double> theta) const {
    const double phi = std::tanh(theta[1]);
    return {theta[2] + phi * (z_prev - theta[2]), std::exp(theta[0])};
  }
  double log_obs(std::size_t t, double z, std::span<const double> theta) const {
    // N(x; 0, beta e^z), written out to avoid exp overflow in the variance.
    const double log_var = theta[3] + z;
    return -kHalfLog2Pi - 0.5 * log_var - 0.5 * x_[t] * x_[t] * std::exp(-log_var);
  }

  double log_joint(std::span<const double> traj, std::span<const double> theta) const {
    const double s2 = std::exp(theta[0]), phi = std::tanh(theta[1]), mu = theta[2];
    double lp = normal_log_pdf_var(traj[0], 0.0, s2 / (1.0 - phi * phi));
    for (std::size_t t = 1; t < traj.size(); ++t)
      lp += normal_log_pdf_var(traj[t], mu + phi * (traj[t - 1] - mu), s2);
    for (std::size_t t = 0; t < traj.size(); ++t) lp += log_obs(t, traj[t], theta);
    return lp;
  }

  /// Gradient in (log sigma2, atanh phi, mu, log beta).
  std::vector<double> grad_theta_log_joint(std::span<const double> traj,
                                           std::span<const double> theta) const {
    const double s2 = std::exp(theta[0]), phi = std::tanh(theta[1]), mu = theta[2];
    const double one_m_phi2 = 1.0 - phi * phi;
    const double p0 = s2 / one_m_phi2;
    double d_ls2 = 0.0, d_phi = 0.0, d_mu = 0.0, d_lbeta = 0.0;

    // prior: d log N(z0; 0, P) / d log P = -1/2 + z0^2 / (2P); log P = log s2 - log(1 - phi^2)
    const double prior_term = -0.5 + 0.5 * traj[0] * traj[0] / p0;
    d_ls2 += prior_term;
    d_phi += prior_term * 2.0 * phi / one_m_phi2;

    for (std::size_t t = 1; t < traj.size(); ++t) {
      const double lag = traj[t - 1] - mu;
      const double res = traj[t] - mu - phi * lag;
      d_ls2 += -0.5 + 0.5 * res * res / s2;
      d_phi += res * lag / s2;
      d_mu += res * (1.0 - phi) / s2;
    }
    for (std::size_t t = 0; t < traj.size(); ++t)
      d_lbeta += -0.5 + 0.5 * x_[t] * x_[t] * std::exp(-theta[3] - traj[t]);

    // chain rule phi = tanh(eta)
    return {d_ls2, d_phi * one_m_phi2, d_mu, d_lbeta};
  }

 private:
  std::vector<double> x_;
};

inline StochVolSsm sv_spec(const SvParams& params, std::vector<double> data) {
  params.validate();
  return StochVolSsm(std::move(data));
}

/// Ancestral simulation of (z, x). `initial_state` overrides the draw of z_0.
inline std::pair<std::vector<double>, std::vector<double>> sv_simulate(
    const SvParams& p, std::size_t T, RngStream& rng,
    std::optional<double> initial_state = std::nullopt) {
  p.validate();
  std::vector<double> z(T), x(T);
  const double sd = std::sqrt(p.sigma2);
  for (std::size_t t = 0; t < T; ++t) {
    if (t == 0)
      z[t] = initial_state ? *initial_state : rng.normal(0.0, sd / std::sqrt(1.0 - p.phi * p.phi));
    else
      z[t] = p.mu + p.phi * (z[t - 1] - p.mu) + sd * rng.normal();
    x[t] = std::sqrt(p.beta) * std::exp(0.5 * z[t]) * rng.normal();
  }
  return {std::move(z), std::move(x)};
}

}  // namespace msc
