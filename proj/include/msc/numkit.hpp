#pragma once

// Random streams, log-domain helpers and the handful of scalar densities the
// models need.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msc {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Raised when every importance weight is zero (all log-weights are -inf).
class DegenerateWeightsError : public std::runtime_error {
 public:
  explicit DegenerateWeightsError(const std::string& what, long step = -1)
      : std::runtime_error(what), step_(step) {}
  /// Time step (SMC) at which the degeneracy happened, -1 when not applicable.
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/**
 * Seedable random stream.
 *
 * A stream is identified by (seed, stream_id). Both words are mixed into the
 * engine state through std::seed_seq, so the same pair always reproduces the
 * same draws and distinct stream ids give unrelated sequences. Satisfies
 * UniformRandomBitGenerator so it plugs into <random> distributions.
 */
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x6d73635fu};
    engine_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Child stream sharing the seed; used to hand disjoint streams to sub-tasks.
  RngStream substream(std::uint64_t id) const {
    return RngStream(seed_, stream_id_ * 0x9e3779b97f4a7c15ull + id + 1);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  double normal(double mean, double sd) { return mean + sd * normal(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// log(sum(exp(v))). Returns -inf iff every entry is -inf.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (m == kNegInf) return kNegInf;
  if (m == std::numeric_limits<double>::infinity()) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

/// log of the arithmetic mean of exp(v).
inline double log_mean_exp(std::span<const double> v) {
  return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

/// exp(w) / sum(exp(w)), computed after shifting by the maximum.
inline std::vector<double> normalize_log_weights(std::span<const double> w) {
  if (w.empty()) throw std::invalid_argument("normalize_log_weights: empty input");
  const double m = *std::max_element(w.begin(), w.end());
  if (m == kNegInf) throw DegenerateWeightsError("normalize_log_weights: all weights are zero");
  if (std::isnan(m) || std::isinf(m))
    throw std::invalid_argument("normalize_log_weights: non-finite maximum log-weight");
  std::vector<double> p(w.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    p[i] = std::exp(w[i] - m);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

/// Effective sample size 1 / sum(p_i^2) of a probability vector.
inline double effective_sample_size(std::span<const double> p) {
  double s = 0.0;
  for (double x : p) s += x * x;
  return 1.0 / s;
}

/// Draws index j with probability p[j] from one uniform and a cumulative scan.
inline std::size_t categorical_sample(std::span<const double> p, RngStream& rng) {
  if (p.empty()) throw std::invalid_argument("categorical_sample: empty probability vector");
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument("categorical_sample: negative or NaN probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("categorical_sample: probabilities do not sum to one");
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) last_positive = j;
    cum += p[j];
    if (u < cum) return j;
  }
  return last_positive;
}

/**
 * Repeated draws from one categorical law: validates and accumulates once,
 * then each draw is a binary search. Consumes one uniform per draw and picks
 * the same index as categorical_sample for the same uniform.
 */
class CategoricalSampler {
 public:
  explicit CategoricalSampler(std::span<const double> p) : cum_(p.size()) {
    if (p.empty()) throw std::invalid_argument("categorical_sample: empty probability vector");
    double total = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!(p[j] >= 0.0)) throw std::invalid_argument("categorical_sample: negative or NaN probability");
      total += p[j];
      cum_[j] = total;
      if (p[j] > 0.0) last_positive_ = j;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("categorical_sample: probabilities do not sum to one");
  }

  std::size_t operator()(RngStream& rng) const {
    const double u = rng.uniform() * cum_.back();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    return it == cum_.end() ? last_positive_ : static_cast<std::size_t>(it - cum_.begin());
  }

 private:
  std::vector<double> cum_;
  std::size_t last_positive_ = 0;
};

inline double normal_log_pdf(double z, double mean, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("normal_log_pdf: sd must be positive");
  const double u = (z - mean) / sd;
  return -kHalfLog2Pi - std::log(sd) - 0.5 * u * u;
}

/// Same density parameterised by variance; avoids a sqrt in the SSM inner loops.
inline double normal_log_pdf_var(double z, double mean, double var) {
  if (!(var > 0.0)) throw std::invalid_argument("normal_log_pdf_var: variance must be positive");
  const double d = z - mean;
  return -kHalfLog2Pi - 0.5 * std::log(var) - 0.5 * d * d / var;
}

/**
 * log Phi(x) for the standard normal CDF.
 *
 * Positive arguments go through log1p of the upper tail. Negative arguments
 * use erfc directly, which keeps full relative precision until it underflows
 * near x = -37; below that the asymptotic Mills-ratio series takes over.
 */
inline double std_normal_log_cdf(double x) {
  if (std::isnan(x)) return x;
  if (x == std::numeric_limits<double>::infinity()) return 0.0;
  if (x == kNegInf) return kNegInf;
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  if (x > 0.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > -37.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  // Phi(x) ~ phi(x)/|x| * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)
  const double r = 1.0 / (x * x);
  const double series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)));
  return -0.5 * x * x - std::log(-x) - kHalfLog2Pi + std::log(series);
}

inline double std_normal_cdf(double x) {
  return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

inline double skew_normal_log_pdf(double z, double xi, double omega, double alpha) {
  if (!(omega > 0.0)) throw std::invalid_argument("skew_normal_log_pdf: omega must be positive");
  const double u = (z - xi) / omega;
  return std::numbers::ln2 - std::log(omega) - kHalfLog2Pi - 0.5 * u * u +
         std_normal_log_cdf(alpha * u);
}

}  // namespace msc
