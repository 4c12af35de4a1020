#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "msc/gradients.hpp"
#include "msc/stats.hpp"
#include "oracles.hpp"

using namespace msc;

namespace {

ConjugateGaussianTarget test_target() {
  return conjugate_gaussian_target(1.0, 1.0, {0.9, 1.7, -0.3, 0.4, 1.1, 0.2, 2.0, 0.8, 0.5, 1.3});
}

DiagGaussianParams gaussian(double mu, double sd) {
  return {std::vector<double>{mu}, std::vector<double>{std::log(sd)}};
}

/// E_p[s(z; q)] for scalar Gaussians p = N(m, v), q = N(mu, sd^2).
std::vector<double> gaussian_cross_score(double m, double v, double mu, double sd) {
  const double d = m - mu;
  return {d / (sd * sd), (v + d * d) / (sd * sd) - 1.0};
}

/// E_p[s(z; q)] for the skew-normal target by quadrature.
std::vector<double> skew_normal_exact_gradient(const SkewNormalTarget& t,
                                               const DiagGaussianParams& q) {
  const auto p = [&](double z) { return std::exp(t.log_joint(std::vector<double>{z})); };
  std::vector<double> g(2);
  for (int c = 0; c < 2; ++c)
    g[c] = oracle::integrate([&](double z) { return p(z) * q.score(std::vector<double>{z})[c]; },
                             -40.0, 40.0);
  return g;
}

/// Maximises the Kalman likelihood by Newton steps with finite-difference derivatives.
std::vector<double> lgssm_mle(const LinearGaussianSsm& m, std::vector<double> theta) {
  const auto f = [&](std::span<const double> th) { return m.kalman_log_likelihood(th); };
  const double h = 1e-4;
  for (int it = 0; it < 100; ++it) {
    Eigen::Vector3d g;
    Eigen::Matrix3d H;
    for (int i = 0; i < 3; ++i) {
      g(i) = oracle::richardson_difference(f, theta, i, h);
      for (int j = 0; j < 3; ++j) {
        auto tp = theta, tm = theta;
        tp[j] += h;
        tm[j] -= h;
        H(i, j) = (oracle::richardson_difference(f, tp, i, h) -
                   oracle::richardson_difference(f, tm, i, h)) / (2 * h);
      }
    }
    const Eigen::Matrix3d Hs = 0.5 * (H + H.transpose());
    const Eigen::Vector3d step = Hs.ldlt().solve(-g);
    for (int i = 0; i < 3; ++i) theta[i] += step(i);
    if (step.norm() < 1e-10) break;
  }
  return theta;
}

}  // namespace

TEST(MscScoreGradient, DelegatesToScore) {
  const DiagGaussianParams q(std::vector<double>{0.3, -1.0}, std::vector<double>{0.1, -0.2});
  const std::vector<double> z{1.2, 0.4};
  EXPECT_EQ(msc_score_gradient(q, z).value, q.score(z));
  const auto at_mean = msc_score_gradient(q, q.mu()).value;
  EXPECT_EQ(at_mean[0], 0.0);
  EXPECT_EQ(at_mean[1], 0.0);
}

TEST(MscScoreGradient, StationaryChainAverageMatchesCrossScore) {
  const auto t = test_target();
  const DiagGaussianParams q = gaussian(0.2, 0.8);
  RngStream rng(1);
  std::vector<double> z{t.posterior_mean()};
  for (int k = 0; k < 1000; ++k) z = cis_step(t, q, z, 5, rng).z;
  const int n = 100000;
  std::vector<std::vector<double>> cols(2, std::vector<double>(n));
  for (int k = 0; k < n; ++k) {
    z = cis_step(t, q, z, 5, rng).z;
    const auto g = msc_score_gradient(q, z).value;
    cols[0][k] = g[0];
    cols[1][k] = g[1];
  }
  const auto exact = gaussian_cross_score(t.posterior_mean(), t.posterior_var(), 0.2, 0.8);
  for (int c = 0; c < 2; ++c)
    EXPECT_LT(std::abs(stats::mean(cols[c]) - exact[c]), 4.0 * stats::batch_means_se(cols[c]))
        << "coord " << c;
}

TEST(RaoBlackwellGradient, SingleParticleEqualsRetainedScore) {
  const auto t = test_target();
  const DiagGaussianParams q = gaussian(0.5, 1.2);
  RngStream rng(2);
  const CisResult r = cis_step(t, q, std::vector<double>{0.4}, 1, rng);
  EXPECT_EQ(rao_blackwell_gradient(q, r.system).value, msc_score_gradient(q, r.z).value);
}

TEST(RaoBlackwellGradient, UniformWeightsGiveArithmeticMean) {
  const DiagGaussianParams q = gaussian(0.1, 0.9);
  ParticleSystem sys;
  sys.particles = {{0.3}, {-1.0}, {2.2}};
  sys.log_weights = {-4.0, -4.0, -4.0};
  const auto g = rao_blackwell_gradient(q, sys).value;
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (const auto& z : sys.particles) mean += q.score(z)[c] / 3.0;
    EXPECT_NEAR(g[c], mean, 1e-14);
  }
}

TEST(RaoBlackwellGradient, DegenerateWeightsThrow) {
  ParticleSystem sys;
  sys.particles = {{0.3}, {1.0}};
  sys.log_weights = {-INFINITY, -INFINITY};
  EXPECT_THROW(rao_blackwell_gradient(gaussian(0.0, 1.0), sys), DegenerateWeightsError);
}

TEST(RaoBlackwellGradient, VarianceNoLargerThanSingleSample) {
  const auto t = test_target();
  const DiagGaussianParams q = gaussian(0.3, 0.9);
  RngStream rng(3);
  std::vector<double> z{t.posterior_mean()};
  for (int k = 0; k < 1000; ++k) z = cis_step(t, q, z, 5, rng).z;
  const int n = 10000;
  std::vector<std::vector<double>> rb(2, std::vector<double>(n)), single(2, std::vector<double>(n));
  for (int k = 0; k < n; ++k) {
    const CisResult r = cis_step(t, q, z, 5, rng);
    z = r.z;
    const auto a = rao_blackwell_gradient(q, r.system).value;
    const auto b = msc_score_gradient(q, z).value;
    for (int c = 0; c < 2; ++c) {
      rb[c][k] = a[c];
      single[c][k] = b[c];
    }
  }
  for (int c = 0; c < 2; ++c)
    EXPECT_LE(stats::variance(rb[c]), stats::variance(single[c])) << "coord " << c;
}

TEST(SnisGradient, SingleSampleIgnoresWeight) {
  const SkewNormalTarget t(0.5, 2.0, 5.0);
  const DiagGaussianParams q = gaussian(2.0, 1.3);
  RngStream a(4), b(4);
  const auto g = snis_gradient(t, q, 1, a);
  EXPECT_EQ(g.value, q.score(q.sample(b)));
}

TEST(SnisGradient, ExactProposalGivesUnweightedMean) {
  const auto t = test_target();
  const DiagGaussianParams q = gaussian(t.posterior_mean(), std::sqrt(t.posterior_var()));
  RngStream a(5), b(5);
  const auto g = snis_gradient(t, q, 7, a);
  std::vector<double> mean(2, 0.0);
  for (int i = 0; i < 7; ++i) {
    const auto s = q.score(q.sample(b));
    mean[0] += s[0] / 7.0;
    mean[1] += s[1] / 7.0;
  }
  EXPECT_NEAR(g.value[0], mean[0], 1e-12);
  EXPECT_NEAR(g.value[1], mean[1], 1e-12);
  EXPECT_NEAR(g.ess, 7.0, 1e-9);
}

TEST(SnisGradient, SmallSampleBiasedAndLargeSampleConsistent) {
  const SkewNormalTarget t(0.5, 2.0, 5.0);
  const DiagGaussianParams q = gaussian(2.06, 1.25);
  const auto exact = skew_normal_exact_gradient(t, q);

  const auto mean_and_se = [&](std::size_t S, int reps, RngStream& rng) {
    std::vector<double> v(reps);
    for (auto& x : v) x = snis_gradient(t, q, S, rng).value[1];
    return std::pair{stats::mean(v), stats::stddev(v) / std::sqrt(static_cast<double>(reps))};
  };
  RngStream small(6), large(7);
  const auto [m2, se2] = mean_and_se(2, 1000000, small);
  EXPECT_GT(std::abs(m2 - exact[1]), 5.0 * se2) << "S = 2 mean " << m2 << " exact " << exact[1];
  const auto [mL, seL] = mean_and_se(10000, 400, large);
  EXPECT_LT(std::abs(mL - exact[1]), 4.0 * seL) << "S = 1e4 mean " << mL << " exact " << exact[1];
}

TEST(FisherGradient, MatchesFiniteDifferences) {
  RngStream rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t T = 2 + rep % 10;
    const SvParams p{std::exp(rng.normal(-1.5, 0.5)), std::tanh(rng.normal(1.0, 0.5)),
                     rng.normal(0.0, 0.5), std::exp(rng.normal(0.0, 0.3))};
    RngStream sim = rng.substream(static_cast<std::uint64_t>(rep));
    auto [z, x] = sv_simulate(p, T, sim);
    const StochVolSsm m(x);
    const auto theta = p.unconstrained();
    const auto g = fisher_gradient(m, theta, z).value;
    const auto f = [&](std::span<const double> th) { return m.log_joint(z, th); };
    for (std::size_t i = 0; i < 4; ++i) {
      const double fd = oracle::richardson_difference(f, theta, i, 1e-3);
      ASSERT_LT(oracle::rel_err(g[i], fd, 1e-3), 1e-5) << "rep " << rep << " coord " << i;
    }
  }
}

TEST(FisherGradient, SingleStepHasNoTransitionTerms) {
  const LinearGaussianSsm lg(std::vector<double>{0.7}, 1.0, 1.0);
  const auto g = fisher_gradient(lg, LinearGaussianSsm::make_theta(0.5, 0.3, 0.8),
                                 std::vector<double>{0.2}).value;
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NE(g[2], 0.0);

  const StochVolSsm sv(std::vector<double>{0.4});
  const auto gs = fisher_gradient(sv, SvParams{0.1, 0.9, 0.3, 0.7}.unconstrained(),
                                  std::vector<double>{0.2}).value;
  EXPECT_EQ(gs[2], 0.0);  // mu enters only through transitions
  EXPECT_THROW(fisher_gradient(sv, SvParams{}.unconstrained(), std::vector<double>{0.1, 0.2}),
               std::invalid_argument);
}

TEST(FisherGradient, PosteriorAverageVanishesAtMaximumLikelihood) {
  RngStream gen(9);
  const auto truth = LinearGaussianSsm::make_theta(0.7, 0.5, 0.3);
  auto [zs, x] = LinearGaussianSsm::simulate(truth, 1.0, 1.0, 30, gen);
  const LinearGaussianSsm m(x, 1.0, 1.0);
  const auto mle = lgssm_mle(m, truth);
  const auto score_fd = [&](std::size_t i) {
    return oracle::richardson_difference(
        [&](std::span<const double> th) { return m.kalman_log_likelihood(th); }, mle, i, 1e-4);
  };
  for (std::size_t i = 0; i < 3; ++i) ASSERT_LT(std::abs(score_fd(i)), 1e-6);

  const auto post = oracle::lgssm_dense_joint_posterior(x, mle[0], std::exp(mle[1]), 1.0,
                                                        std::exp(mle[2]), 1.0);
  const Eigen::MatrixXd L = post.cov.llt().matrixL();
  RngStream rng(10);
  const int n = 100000;
  std::vector<std::vector<double>> cols(3, std::vector<double>(n));
  Eigen::VectorXd e(30);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < 30; ++i) e(i) = rng.normal();
    const Eigen::VectorXd z = post.mean + L * e;
    const auto g = fisher_gradient(m, mle, std::vector<double>(z.data(), z.data() + 30)).value;
    for (int c = 0; c < 3; ++c) cols[c][k] = g[c];
  }
  for (int c = 0; c < 3; ++c) {
    const double se = stats::stddev(cols[c]) / std::sqrt(n);
    EXPECT_LT(std::abs(stats::mean(cols[c])), 4.0 * se) << "coord " << c;
  }
}

TEST(FisherGradient, PosteriorAverageEqualsLikelihoodGradient) {
  RngStream gen(11);
  const auto theta = LinearGaussianSsm::make_theta(0.4, 0.8, 0.6);
  auto [zs, x] = LinearGaussianSsm::simulate(LinearGaussianSsm::make_theta(0.8, 0.3, 0.3), 1.0,
                                             1.0, 12, gen);
  const LinearGaussianSsm m(x, 1.0, 1.0);
  const auto post = oracle::lgssm_dense_joint_posterior(x, theta[0], std::exp(theta[1]), 1.0,
                                                        std::exp(theta[2]), 1.0);
  const Eigen::MatrixXd L = post.cov.llt().matrixL();
  RngStream rng(12);
  const int n = 100000;
  std::vector<std::vector<double>> cols(3, std::vector<double>(n));
  Eigen::VectorXd e(12);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < 12; ++i) e(i) = rng.normal();
    const Eigen::VectorXd z = post.mean + L * e;
    const auto g = fisher_gradient(m, theta, std::vector<double>(z.data(), z.data() + 12)).value;
    for (int c = 0; c < 3; ++c) cols[c][k] = g[c];
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double exact = oracle::richardson_difference(
        [&](std::span<const double> th) { return m.kalman_log_likelihood(th); }, theta, c, 1e-4);
    const double se = stats::stddev(cols[c]) / std::sqrt(n);
    EXPECT_LT(std::abs(stats::mean(cols[c]) - exact), 4.0 * se) << "coord " << c;
  }
}

TEST(SubsetAvgGradient, FullBatchMatchesImportanceSamplingInDistribution) {
  for (const std::vector<double>& data : {std::vector<double>{0.9, 1.4, -0.2, 0.7},
                                          std::vector<double>{1.3}}) {
    const auto t = conjugate_gaussian_target(1.0, 1.0, data);
    const DiagGaussianParams q = gaussian(0.4, 0.9);
    const int n = 20000;
    RngStream a(13), b(14);
    std::vector<std::vector<double>> sa(2, std::vector<double>(n)), sb(2, std::vector<double>(n));
    for (int k = 0; k < n; ++k) {
      const auto g = subset_avg_gradient(t, q, 3, data.size(), a).value;
      std::vector<double> h(2, 0.0);
      for (int s = 0; s < 3; ++s) {
        const auto z = q.sample(b);
        const double w = std::exp(t.log_joint(z) - q.log_pdf(z)) / 3.0;
        const auto sc = q.score(z);
        h[0] += w * sc[0];
        h[1] += w * sc[1];
      }
      for (int c = 0; c < 2; ++c) {
        sa[c][k] = g[c];
        sb[c][k] = h[c];
      }
    }
    for (int c = 0; c < 2; ++c) {
      const double se = std::hypot(stats::stddev(sa[c]), stats::stddev(sb[c])) / std::sqrt(n);
      EXPECT_LT(std::abs(stats::mean(sa[c]) - stats::mean(sb[c])), 4.0 * se)
          << "n = " << data.size() << " coord " << c;
    }
  }
}

TEST(SubsetAvgGradient, ScaleDividesWeights) {
  const auto t = test_target();
  const DiagGaussianParams q = gaussian(0.8, 0.5);
  RngStream a(15), b(15);
  const auto g0 = subset_avg_gradient(t, q, 4, 2, a, 0.0).value;
  const auto g1 = subset_avg_gradient(t, q, 4, 2, b, 3.0).value;
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(g1[c], g0[c] * std::exp(-3.0), 1e-12 * std::abs(g0[c]));
}

TEST(SubsetAvgGradient, InvalidSubsetSizeThrows) {
  const auto t = test_target();
  RngStream rng(16);
  EXPECT_THROW(subset_avg_gradient(t, gaussian(0.0, 1.0), 2, 11, rng), std::invalid_argument);
  EXPECT_THROW(subset_avg_gradient(t, gaussian(0.0, 1.0), 2, 0, rng), std::invalid_argument);
}

TEST(PerturbedPosteriorOracle, FullBatchIsPosterior) {
  const auto t = test_target();
  const Gaussian1 g = perturbed_posterior_oracle(t, 10);
  EXPECT_NEAR(g.mean, t.posterior_mean(), 1e-12);
  EXPECT_NEAR(g.var, t.posterior_var(), 1e-12);
}

TEST(PerturbedPosteriorOracle, MatchesGridNormalisedMixture) {
  RngStream rng(17);
  std::vector<double> x(10);
  for (auto& v : x) v = 1.0 + rng.normal();
  const auto t = conjugate_gaussian_target(1.0, 1.0, x);
  const Gaussian1 g = perturbed_posterior_oracle(t, 2);

  // log density up to a constant: log p(z) + log sum_{i<j} p(x_i, x_j | z)^5
  const auto log_dens = [&](double z) {
    std::vector<double> terms;
    for (int i = 0; i < 10; ++i)
      for (int j = i + 1; j < 10; ++j)
        terms.push_back(5.0 * (normal_log_pdf(x[i], z, 1.0) + normal_log_pdf(x[j], z, 1.0)));
    return normal_log_pdf(z, 0.0, 1.0) + log_sum_exp(terms);
  };
  const double shift = log_dens(g.mean);
  const auto dens = [&](double z) { return std::exp(log_dens(z) - shift); };
  const double Z = oracle::integrate(dens, -10.0, 10.0);
  const double m = oracle::integrate([&](double z) { return z * dens(z); }, -10.0, 10.0) / Z;
  const double v =
      oracle::integrate([&](double z) { return (z - m) * (z - m) * dens(z); }, -10.0, 10.0) / Z;
  EXPECT_LT(oracle::rel_err(g.mean, m), 1e-6);
  EXPECT_LT(oracle::rel_err(g.var, v), 1e-6);
}

TEST(PerturbedPosteriorOracle, SymmetricDataHasZeroMean) {
  const auto t = conjugate_gaussian_target(1.0, 1.0, {0.4, -0.4, 1.3, -1.3, 2.1, -2.1});
  EXPECT_NEAR(perturbed_posterior_oracle(t, 2).mean, 0.0, 1e-12);
  EXPECT_NEAR(perturbed_posterior_oracle(t, 3).mean, 0.0, 1e-12);
}

TEST(PerturbedPosteriorOracle, RefusesInfeasibleEnumeration) {
  const auto t = conjugate_gaussian_target(1.0, 1.0, std::vector<double>(30, 0.5));
  EXPECT_THROW(perturbed_posterior_oracle(t, 15), std::invalid_argument);
  EXPECT_THROW(perturbed_posterior_oracle(test_target(), 0), std::invalid_argument);
  EXPECT_DOUBLE_EQ(binomial_count(10, 2), 45.0);
}
