#pragma once

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

namespace msc {

/// Scalar Gaussian described by mean and variance.
struct Gaussian1 {
  double mean = 0.0;
  double var = 1.0;
};

/**
 * State-space model with a Gaussian initial law and Gaussian transitions.
 *
 * Time is 0-based in code: state 0 is the first latent state. Parameters are
 * passed in unconstrained coordinates and grad_theta_log_joint returns the
 * gradient in those same coordinates.
 */
template <class M>
concept GaussianSsm = requires(const M& m, std::span<const double> theta, std::size_t t, double z,
                               std::span<const double> traj) {
  { m.length() } -> std::convertible_to<std::size_t>;
  { m.num_params() } -> std::convertible_to<std::size_t>;
  { m.prior(theta) } -> std::same_as<Gaussian1>;
  { m.transition(t, z, theta) } -> std::same_as<Gaussian1>;
  { m.log_obs(t, z, theta) } -> std::convertible_to<double>;
  { m.grad_theta_log_joint(traj, theta) } -> std::same_as<std::vector<double>>;
};

}  // namespace msc
