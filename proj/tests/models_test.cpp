#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <vector>

#include "msc/models.hpp"
#include "msc/stats.hpp"
#include "oracles.hpp"

using namespace msc;

namespace {

ProbitData random_probit(std::size_t n, std::size_t d, RngStream& rng) {
  ProbitData data{n, d, std::vector<double>(n * d), std::vector<int>(n)};
  for (auto& v : data.X) v = rng.normal();
  for (auto& y : data.y) y = rng.uniform() < 0.5;
  return data;
}

std::vector<double> random_vec(std::size_t n, RngStream& rng, double sd = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

}  // namespace

TEST(SkewNormalTarget, MomentMatchedOptimum) {
  const SkewNormalTarget t = skew_normal_target(0.5, 2.0, 5.0);
  EXPECT_NEAR(t.mean(), oracle::kSkewMean, 1e-14);
  EXPECT_NEAR(t.sd(), oracle::kSkewSd, 1e-14);
  EXPECT_EQ(t.dim(), 1u);
}

TEST(SkewNormalTarget, MomentsAgreeWithQuadrature) {
  const SkewNormalTarget t(0.5, 2.0, 5.0);
  const auto p = [&](double z) { return std::exp(t.log_joint(std::vector<double>{z})); };
  const double m = oracle::integrate([&](double z) { return z * p(z); }, -40.0, 40.0);
  const double v =
      oracle::integrate([&](double z) { return (z - m) * (z - m) * p(z); }, -40.0, 40.0);
  EXPECT_NEAR(m, t.mean(), 1e-10);
  EXPECT_NEAR(std::sqrt(v), t.sd(), 1e-10);
}

TEST(SkewNormalTarget, ZeroShapeIsGaussian) {
  const SkewNormalTarget t(1.0, 3.0, 0.0);
  EXPECT_DOUBLE_EQ(t.mean(), 1.0);
  EXPECT_DOUBLE_EQ(t.sd(), 3.0);
  EXPECT_THROW(SkewNormalTarget(0.0, -1.0, 1.0), std::invalid_argument);
}

TEST(SkewNormalTarget, FiniteAcrossWideRange) {
  const SkewNormalTarget t(0.5, 2.0, 5.0);
  for (double z = -50.0; z <= 50.0; z += 0.25)
    ASSERT_TRUE(std::isfinite(t.log_joint(std::vector<double>{z}))) << z;
}

TEST(ConjugateGaussianTarget, NoDataGivesPrior) {
  const auto t = conjugate_gaussian_target(2.5, 1.0, {});
  EXPECT_DOUBLE_EQ(t.posterior_mean(), 0.0);
  EXPECT_DOUBLE_EQ(t.posterior_var(), 2.5);
}

TEST(ConjugateGaussianTarget, SinglePointUpdate) {
  const auto t = conjugate_gaussian_target(1.0, 1.0, {1.0});
  EXPECT_DOUBLE_EQ(t.posterior_mean(), 0.5);
  EXPECT_DOUBLE_EQ(t.posterior_var(), 0.5);
}

TEST(ConjugateGaussianTarget, PosteriorMatchesGridNormalisation) {
  RngStream rng(1);
  const auto t = conjugate_gaussian_target(1.3, 0.8, random_vec(10, rng));
  const auto p = [&](double z) { return std::exp(t.log_joint(std::vector<double>{z})); };
  const double Z = oracle::integrate(p, -15.0, 15.0);
  const double m = oracle::integrate([&](double z) { return z * p(z); }, -15.0, 15.0) / Z;
  const double v =
      oracle::integrate([&](double z) { return (z - m) * (z - m) * p(z); }, -15.0, 15.0) / Z;
  EXPECT_LT(oracle::rel_err(m, t.posterior_mean()), 1e-6);
  EXPECT_LT(oracle::rel_err(v, t.posterior_var()), 1e-6);
}

TEST(ProbitLogJoint, OriginGivesPriorPlusHalfLikelihood) {
  RngStream rng(2);
  const ProbitData data = random_probit(30, 4, rng);
  const std::vector<double> z(4, 0.0);
  EXPECT_NEAR(probit_log_joint(data, z), -4.0 * kHalfLog2Pi + 30.0 * std::log(0.5), 1e-12);
}

TEST(ProbitLogJoint, LabelAndFeatureFlipSymmetry) {
  RngStream rng(3);
  ProbitData data = random_probit(40, 3, rng);
  ProbitData flipped = data;
  for (auto& v : flipped.X) v = -v;
  for (auto& y : flipped.y) y = 1 - y;
  for (int i = 0; i < 20; ++i) {
    const auto z = random_vec(3, rng, 2.0);
    EXPECT_NEAR(probit_log_joint(data, z), probit_log_joint(flipped, z), 1e-12);
  }
}

TEST(ProbitLogJoint, SinglePointLikelihood) {
  const ProbitData data{1, 1, {2.0}, {1}};
  const std::vector<double> z{1.0};
  const double lik = probit_log_joint(data, z) - normal_log_pdf(1.0, 0.0, 1.0);
  EXPECT_LT(oracle::rel_err(lik, oracle::kLogPhi2), 1e-13);
}

TEST(ProbitLogJoint, DimensionMismatchThrows) {
  const ProbitData data{1, 2, {1.0, 1.0}, {1}};
  EXPECT_THROW(probit_log_joint(data, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(ProbitLogJoint, ConcaveAlongRandomSegments) {
  RngStream rng(4);
  const ProbitData data = random_probit(50, 4, rng);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_vec(4, rng, 3.0), b = random_vec(4, rng, 3.0);
    std::vector<double> mid(4);
    for (int d = 0; d < 4; ++d) mid[d] = 0.5 * (a[d] + b[d]);
    const double lhs = probit_log_joint(data, mid);
    const double rhs = 0.5 * (probit_log_joint(data, a) + probit_log_joint(data, b));
    ASSERT_GE(lhs, rhs - 1e-9 * std::abs(rhs)) << "segment " << i;
  }
}

TEST(ProbitData, ValidationRejectsBadInput) {
  EXPECT_THROW((ProbitData{1, 1, {1.0}, {2}}).validate(), std::invalid_argument);
  EXPECT_THROW((ProbitData{2, 1, {1.0}, {1, 0}}).validate(), std::invalid_argument);
  EXPECT_THROW((ProbitData{1, 1, {std::nan("")}, {1}}).validate(), std::invalid_argument);
}

TEST(ProbitPredict, ZeroMeanGivesHalf) {
  RngStream rng(5);
  DiagGaussianParams q(std::vector<double>{0.0, 0.0, 0.0}, random_vec(3, rng));
  for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(probit_predict(q, random_vec(3, rng, 3.0)), 0.5);
}

TEST(ProbitPredict, VanishingScaleGivesPlugIn) {
  const DiagGaussianParams q(std::vector<double>{0.7, -0.2}, std::vector<double>{-30.0, -30.0});
  const std::vector<double> x{1.1, 2.0};
  EXPECT_NEAR(probit_predict(q, x), std_normal_cdf(0.7 * 1.1 - 0.2 * 2.0), 1e-14);
}

TEST(ProbitPredict, MatchesMonteCarloAverage) {
  RngStream rng(6);
  const DiagGaussianParams q(random_vec(3, rng, 0.5), random_vec(3, rng, 0.3));
  const auto x = random_vec(3, rng);
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = std_normal_cdf(dot(x, q.sample(rng)));
    s += v;
    s2 += v * v;
  }
  const double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
  EXPECT_LT(std::abs(probit_predict(q, x) - m), 3.0 * se);
}

TEST(ProbitTestError, TiesPredictLabelOne) {
  const DiagGaussianParams q(1);
  const ProbitData data{2, 1, {1.0, -1.0}, {1, 0}};
  EXPECT_DOUBLE_EQ(probit_test_error(q, data), 0.5);
}

TEST(Lgssm, SingleStepIsConjugateUpdate) {
  const auto theta = LinearGaussianSsm::make_theta(0.9, 0.3, 1.0);
  const LinearGaussianSsm m(std::vector<double>{1.4}, 1.0, 1.0);
  const auto s = m.kalman_smoother_moments(theta);
  const auto c = conjugate_gaussian_target(1.0, 1.0, {1.4});
  EXPECT_NEAR(s[0].mean, c.posterior_mean(), 1e-15);
  EXPECT_NEAR(s[0].var, c.posterior_var(), 1e-15);
}

TEST(Lgssm, ZeroTransitionDecouplesSteps) {
  RngStream rng(7);
  const auto x = random_vec(6, rng);
  const double q = 0.8, r = 0.5, c = 1.3;
  const auto theta = LinearGaussianSsm::make_theta(0.0, q, r);
  const LinearGaussianSsm m(x, c, q);  // prior variance equal to q so every step is identical
  const auto s = m.kalman_smoother_moments(theta);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double prec = 1.0 / q + c * c / r;
    EXPECT_NEAR(s[t].var, 1.0 / prec, 1e-14);
    EXPECT_NEAR(s[t].mean, c * x[t] / r / prec, 1e-14);
  }
}

TEST(Lgssm, SmootherMatchesDenseConditioning) {
  RngStream rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const double a = rng.normal(0.0, 0.7), q = 0.2 + rng.uniform(), r = 0.2 + rng.uniform();
    const double c = 0.5 + rng.uniform(), p0 = 0.5 + rng.uniform();
    const auto x = random_vec(5, rng, 1.5);
    const LinearGaussianSsm m(x, c, p0);
    const auto theta = LinearGaussianSsm::make_theta(a, q, r);
    const auto s = m.kalman_smoother_moments(theta);
    const auto [dm, dv] = oracle::lgssm_dense_posterior(x, a, q, c, r, p0);
    for (std::size_t t = 0; t < 5; ++t) {
      EXPECT_LT(oracle::rel_err(s[t].mean, dm[t], 1e-6), 1e-8) << "rep " << rep << " t " << t;
      EXPECT_LT(oracle::rel_err(s[t].var, dv[t]), 1e-8) << "rep " << rep << " t " << t;
    }
    EXPECT_LT(oracle::rel_err(m.kalman_log_likelihood(theta),
                              oracle::lgssm_dense_log_likelihood(x, a, q, c, r, p0)),
              1e-10);
  }
}

TEST(Lgssm, LogLikelihoodDeterministicUnderPermutationRoundTrip) {
  RngStream rng(9);
  const auto x = random_vec(20, rng);
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted(x.size()), back(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) permuted[i] = x[perm[i]];
  for (std::size_t i = 0; i < x.size(); ++i) back[perm[i]] = permuted[i];
  const auto theta = LinearGaussianSsm::make_theta(0.6, 0.4, 0.7);
  EXPECT_EQ(LinearGaussianSsm(x, 1.0, 1.0).kalman_log_likelihood(theta),
            LinearGaussianSsm(back, 1.0, 1.0).kalman_log_likelihood(theta));
}

TEST(Lgssm, LogJointAssembledFromPartsMatchesSinglePass) {
  RngStream rng(10);
  const LinearGaussianSsm m(random_vec(8, rng), 1.2, 0.9);
  const auto theta = LinearGaussianSsm::make_theta(0.5, 0.6, 0.3);
  for (int i = 0; i < 20; ++i) {
    const auto z = random_vec(8, rng);
    EXPECT_NEAR(ssm_log_joint(m, z, theta), m.log_joint(z, theta), 1e-11);
  }
}

TEST(Lgssm, GradientMatchesFiniteDifferences) {
  RngStream rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t T = 1 + rep % 7;
    const LinearGaussianSsm m(random_vec(T, rng), 0.5 + rng.uniform(), 0.5 + rng.uniform());
    const std::vector<double> theta{rng.normal(0.0, 0.6), rng.normal(0.0, 0.5),
                                    rng.normal(0.0, 0.5)};
    const auto z = random_vec(T, rng);
    const auto g = m.grad_theta_log_joint(z, theta);
    const auto f = [&](std::span<const double> th) { return m.log_joint(z, th); };
    for (std::size_t i = 0; i < 3; ++i) {
      const double fd = oracle::richardson_difference(f, theta, i, 1e-3);
      ASSERT_LT(oracle::rel_err(g[i], fd, 1e-3), 1e-5) << "rep " << rep << " coord " << i;
    }
  }
}

TEST(SvParams, ConstrainedRoundTrip) {
  RngStream rng(12);
  for (int i = 0; i < 1000; ++i) {
    const SvParams p{std::exp(rng.normal()), std::tanh(rng.normal()), rng.normal(),
                     std::exp(rng.normal())};
    const SvParams back = SvParams::constrained(p.unconstrained());
    ASSERT_LT(oracle::rel_err(back.sigma2, p.sigma2), 1e-12);
    ASSERT_LT(std::abs(back.phi - p.phi), 1e-12);
    ASSERT_LT(std::abs(back.mu - p.mu), 1e-12);
    ASSERT_LT(oracle::rel_err(back.beta, p.beta), 1e-12);
  }
}

TEST(SvParams, ConstraintViolationsThrow) {
  EXPECT_THROW(sv_spec({-0.1, 0.5, 0.0, 1.0}, {}), std::invalid_argument);
  EXPECT_THROW(sv_spec({0.1, 1.0, 0.0, 1.0}, {}), std::invalid_argument);
  EXPECT_THROW(sv_spec({0.1, 0.5, 0.0, 0.0}, {}), std::invalid_argument);
  EXPECT_NO_THROW(sv_spec({0.1, 0.5, 0.0, 1.0}, {}));
}

TEST(StochVol, NoMemoryPriorVarianceIsSigma2) {
  const SvParams p{0.37, 0.0, 0.2, 1.0};
  const StochVolSsm m = sv_spec(p, {0.1});
  EXPECT_NEAR(m.prior(p.unconstrained()).var, 0.37, 1e-15);
}

TEST(StochVol, ObservationDensityAtOrigin) {
  const SvParams p{0.1, 0.9, 0.0, 1.0};
  const StochVolSsm m = sv_spec(p, {0.0});
  EXPECT_NEAR(m.log_obs(0, 0.0, p.unconstrained()), -0.9189385332046727, 1e-15);
}

TEST(StochVol, LogJointAssembledFromPartsMatchesSinglePass) {
  RngStream rng(13);
  const StochVolSsm m(random_vec(10, rng));
  const auto theta = SvParams{0.2, 0.8, 0.3, 0.9}.unconstrained();
  for (int i = 0; i < 20; ++i) {
    const auto z = random_vec(10, rng);
    EXPECT_NEAR(ssm_log_joint(m, z, theta), m.log_joint(z, theta), 1e-10);
  }
}

TEST(StochVol, GradientMatchesFiniteDifferences) {
  RngStream rng(14);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t T = 1 + rep % 8;
    const SvParams p{std::exp(rng.normal(-1.5, 0.5)), std::tanh(rng.normal(1.0, 0.5)),
                     rng.normal(0.0, 0.5), std::exp(rng.normal(0.0, 0.3))};
    RngStream sim = rng.substream(static_cast<std::uint64_t>(rep));
    auto [z, x] = sv_simulate(p, T, sim);
    const StochVolSsm m(x);
    const auto theta = p.unconstrained();
    const auto g = m.grad_theta_log_joint(z, theta);
    const auto f = [&](std::span<const double> th) { return m.log_joint(z, th); };
    for (std::size_t i = 0; i < 4; ++i) {
      const double fd = oracle::richardson_difference(f, theta, i, 1e-3);
      ASSERT_LT(oracle::rel_err(g[i], fd, 1e-3), 1e-5) << "rep " << rep << " coord " << i;
    }
  }
}

TEST(SvSimulate, DegenerateNoiseStaysAtMean) {
  RngStream rng(15);
  const auto [z, x] = sv_simulate({1e-300, 0.9, 0.4, 1.0}, 50, rng, 0.4);
  for (double v : z) EXPECT_NEAR(v, 0.4, 1e-12);
}

TEST(SvSimulate, StationaryVariance) {
  RngStream rng(16);
  const SvParams p{0.1, 0.9, 0.0, 0.7};
  const auto [z, x] = sv_simulate(p, 100000, rng);
  const double target = p.sigma2 / (1.0 - p.phi * p.phi);
  EXPECT_LT(std::abs(stats::variance(z) / target - 1.0), 0.05);
}

TEST(SvSimulate, ReproducibleUnderFixedSeed) {
  RngStream a(17), b(17);
  const SvParams p{0.1, 0.9, 0.0, 0.7};
  EXPECT_EQ(sv_simulate(p, 30, a), sv_simulate(p, 30, b));
}
