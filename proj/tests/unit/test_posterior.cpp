#include <gtest/gtest.h>

#include "nlbayes/generator.hpp"
#include "nlbayes/phase_retrieval.hpp"
#include "nlbayes/posterior.hpp"
#include "test_support.hpp"

namespace nlb {
namespace {

// Target with log p(z) = -|z|^2 / 2 + offset.
struct StandardNormal {
  double offset = 0.0;
  DensityEval evaluate(const RealVector& z) const {
    DensityEval e;
    e.value = -0.5 * z.squaredNorm() + offset;
    e.gradient = -z;
    return e;
  }
};

std::shared_ptr<GeneratorModel> small_generator(std::uint64_t seed, Index d = 4, Index k = 12) {
  return std::make_shared<GeneratorModel>(GeneratorBuilder({d}, seed)
                                              .fully_connected(16)
                                              .leaky_relu()
                                              .fully_connected(k)
                                              .sigmoid()
                                              .build());
}

TEST(Likelihood, GaussianExamples) {
  const auto noise = NoiseModel::gaussian(1.0);
  const RealVector y{{1.0, 0.0}};
  EXPECT_DOUBLE_EQ(log_likelihood(noise, y, RealVector::Zero(2)), -0.5);
  EXPECT_EQ(log_likelihood(noise, y, y), 0.0);
  EXPECT_EQ(dloglik_dy0(noise, y, y), RealVector::Zero(2));
  const auto wide = NoiseModel::gaussian(2.0);
  EXPECT_EQ(dloglik_dy0(wide, y, RealVector::Zero(2)), (RealVector{{0.25, 0.0}}));
}

TEST(Likelihood, GaussianComplex) {
  const auto noise = NoiseModel::gaussian(0.5);
  const ComplexVector y{{Complex(1.0, 2.0)}};
  const ComplexVector y0{{Complex(0.0, 1.0)}};
  EXPECT_DOUBLE_EQ(log_likelihood(noise, y, y0), -2.0 / (2 * 0.25));
  EXPECT_EQ(dloglik_dy0(noise, y, y0)[0], Complex(4.0, 4.0));
}

TEST(Likelihood, PoissonExamplesAndFloor) {
  const auto noise = NoiseModel::poisson();
  const RealVector y{{3.0, 0.0, 2.0}};
  EXPECT_EQ(dloglik_dy0(noise, y, RealVector{{3.0, 1.0, 2.0}}), (RealVector{{0.0, -1.0, 0.0}}));
  EXPECT_DOUBLE_EQ(log_likelihood(noise, y, RealVector{{3.0, 1.0, 2.0}}),
                   3 * std::log(3.0) - 3 + 0 - 1 + 2 * std::log(2.0) - 2);
  const auto floored = evaluate_likelihood<double>(noise, y, RealVector{{0.0, 0.0, 2.0}});
  EXPECT_EQ(floored.floored, 2u);
  EXPECT_TRUE(std::isfinite(floored.value));
  EXPECT_DOUBLE_EQ(floored.value, 3 * std::log(kPoissonFloor) + 2 * std::log(2.0) - 2);
  EXPECT_EQ(floored.cotangent[0], -1.0);
}

TEST(Likelihood, Errors) {
  EXPECT_THROW((void)log_likelihood(NoiseModel::gaussian(1.0), RealVector::Zero(2), RealVector::Zero(3)),
               ConfigError);
  EXPECT_THROW(NoiseModel::gaussian(0.0).validate(), ConfigError);
  EXPECT_THROW((void)log_likelihood(NoiseModel::poisson(), ComplexVector::Zero(2), ComplexVector::Zero(2)),
               ConfigError);
}

TEST(MeasurementSet, PoissonRequiresCounts) {
  MeasurementSet<double> m{RealVector{{1.0, 2.5}}, make_identity(2), NoiseModel::poisson()};
  EXPECT_THROW(m.validate(), ConfigError);
  m.y = RealVector{{1.0, -1.0}};
  EXPECT_THROW(m.validate(), ConfigError);
  m.y = RealVector{{1.0, 0.0}};
  EXPECT_NO_THROW(m.validate());
  m.y = RealVector::Zero(3);
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(LogPosterior, IdentityExample) {
  MeasurementSet<double> meas{RealVector::Zero(3), make_identity(3), NoiseModel::gaussian(1.0)};
  const RealVector z = RealVector::Zero(3);
  EXPECT_EQ(log_posterior(meas, make_identity(3), z), 0.0);
  EXPECT_EQ(grad_log_posterior(meas, make_identity(3), z), RealVector::Zero(3));
}

TEST(LogPosterior, PriorOnlyWhenLikelihoodWeightZero) {
  MeasurementSet<double> meas{testing::random_real(3, 1), make_identity(3), NoiseModel::gaussian(0.1)};
  LatentPosterior<double> post(meas, make_identity(3), 0.0);
  const RealVector z = testing::random_real(3, 2);
  EXPECT_EQ(post.evaluate(z).gradient, -z);
}

TEST(LogPosterior, DimensionMismatch) {
  MeasurementSet<double> meas{RealVector::Zero(3), make_identity(3), NoiseModel::gaussian(1.0)};
  EXPECT_THROW(LatentPosterior<double>(meas, make_identity(4)), ConfigError);
}

template <typename Out>
double worst_fd_error(const LatentPosterior<Out>& post, std::uint64_t seed) {
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const RealVector z = testing::random_real(post.dim(), seed + t);
    const RealVector g = post.evaluate(z).gradient;
    RealVector fd(z.size());
    for (Index i = 0; i < z.size(); ++i) {
      RealVector e = RealVector::Zero(z.size());
      e[i] = 1e-6;
      fd[i] = (post.log_density(z + e) - post.log_density(z - e)) / 2e-6;
    }
    worst = std::max(worst, (fd - g).norm() / g.norm());
  }
  return worst;
}

TEST(LogPosterior, GradientMatchesFiniteDifferencesGaussian) {
  auto base = small_generator(3);
  auto prior = std::make_shared<AugmentedGenerator>(base, 0.5);
  auto a = std::make_shared<SensingMatrix>(make_sensing_matrix(8, 12, 2.0, 4));
  auto forward = std::make_shared<PhaseRetrievalOp>(a);
  const RealVector y = forward->forward(prior->forward(testing::random_real(5, 9))) + testing::random_real(8, 10, 0.01);
  LatentPosterior<double> post({y, forward, NoiseModel::gaussian(0.05)}, prior);
  EXPECT_LE(worst_fd_error(post, 100), 1e-5);
}

TEST(LogPosterior, GradientMatchesFiniteDifferencesPoisson) {
  auto base = small_generator(5);
  auto prior = std::make_shared<AugmentedGenerator>(base, 0.5);
  auto a = std::make_shared<SensingMatrix>(make_sensing_matrix(8, 12, 2.0, 6));
  auto forward = std::make_shared<PhaseRetrievalOp>(a);
  const RealVector y0 = forward->forward(prior->forward(testing::random_real(5, 11)));
  const RealVector y = y0.array().round();
  LatentPosterior<double> post({y, forward, NoiseModel::poisson()}, prior);
  EXPECT_LE(worst_fd_error(post, 200), 1e-5);
}

TEST(LogPosterior, ImageIsCachedDecode) {
  auto prior = small_generator(7);
  MeasurementSet<double> meas{RealVector::Zero(12), make_identity(12), NoiseModel::gaussian(1.0)};
  LatentPosterior<double> post(meas, prior);
  const RealVector z = testing::random_real(4, 3);
  EXPECT_EQ(post.evaluate(z).image, prior->forward(z));
  EXPECT_DOUBLE_EQ(post.evaluate(z).value, post.log_density(z));
}

TEST(Mala, ZeroStepZeroNoiseAcceptsWithProbabilityOne) {
  StandardNormal target;
  const RealVector z = testing::random_real(3, 1);
  const auto at_z = target.evaluate(z);
  const double eta = 1e-300;
  const RealVector prop = mala_propose(z, at_z.gradient, eta, RealVector::Zero(3));
  EXPECT_EQ(prop, z);
  EXPECT_EQ(mala_acceptance(mala_log_ratio(z, at_z, prop, target.evaluate(prop), eta)), 1.0);
}

TEST(Mala, LogDomainMatchesDirectRatio) {
  StandardNormal target;
  const double eta = 0.3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RealVector z = testing::random_real(2, seed);
    const RealVector prop = testing::random_real(2, seed + 100);
    const auto a = target.evaluate(z);
    const auto b = target.evaluate(prop);
    const auto q = [&](const RealVector& to, const RealVector& from, const DensityEval& e) {
      return std::exp(-(to - from - eta * e.gradient).squaredNorm() / (4 * eta));
    };
    const double direct = std::min(1.0, std::exp(b.value) * q(z, prop, b) / (std::exp(a.value) * q(prop, z, a)));
    EXPECT_NEAR(mala_acceptance(mala_log_ratio(z, a, prop, b, eta)), direct, 1e-10);
  }
}

TEST(Mala, AcceptanceInvariantUnderConstantShift) {
  const RealVector z = testing::random_real(4, 3);
  const RealVector prop = testing::random_real(4, 4);
  const StandardNormal plain;
  const StandardNormal shifted{1e5};
  const double a = mala_log_ratio(z, plain.evaluate(z), prop, plain.evaluate(prop), 0.1);
  const double b = mala_log_ratio(z, shifted.evaluate(z), prop, shifted.evaluate(prop), 0.1);
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(Mala, RejectedStepRepeatsSample) {
  // A huge step makes almost every proposal fail.
  StandardNormal target;
  const auto record = run_chain(target, SamplerConfig{50.0, 0, 200, 3, 1}, RealVector::Ones(2));
  int repeats = 0;
  for (Index t = 1; t < record.size(); ++t) {
    if (record.latent_samples.row(t) == record.latent_samples.row(t - 1)) {
      ++repeats;
      EXPECT_EQ(record.log_posterior_trace[t], record.log_posterior_trace[t - 1]);
    }
  }
  EXPECT_GT(repeats, 100);
}

TEST(Mala, NonFiniteProposalRejected) {
  struct Cliff {
    DensityEval evaluate(const RealVector& z) const {
      if (z[0] > 0.5) throw NumericalError("cliff");
      DensityEval e;
      e.value = -0.5 * z.squaredNorm();
      e.gradient = -z;
      return e;
    }
  };
  const auto record = run_chain(Cliff{}, SamplerConfig{1.0, 0, 300, 1, 1}, RealVector::Zero(1));
  EXPECT_GT(record.nonfinite_rejects, 0);
  EXPECT_LE(record.latent_samples.maxCoeff(), 0.5);
}

TEST(Mala, StandardNormalMoments) {
  StandardNormal target;
  const auto record = run_chain(target, SamplerConfig{0.5, 1000, 100000, 7, 1}, RealVector::Zero(1));
  const RealVector x = record.latent_samples.col(0);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().sum() / static_cast<double>(x.size() - 1);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Chain, DeterministicAndThinned) {
  StandardNormal target;
  const SamplerConfig cfg{0.4, 10, 50, 99, 3};
  const auto a = run_chain(target, cfg, RealVector::Zero(2));
  const auto b = run_chain(target, cfg, RealVector::Zero(2));
  EXPECT_EQ(a.latent_samples, b.latent_samples);
  EXPECT_EQ(a.log_posterior_trace, b.log_posterior_trace);
  EXPECT_EQ(a.accept_count, b.accept_count);
  EXPECT_EQ(a.proposals, 10 + 50 * 3);
  EXPECT_EQ(a.size(), 50);
  EXPECT_LE(a.accept_count, a.proposals);
}

TEST(Chain, ConfigValidation) {
  StandardNormal target;
  EXPECT_THROW((void)run_chain(target, SamplerConfig{0.0, 0, 1, 0, 1}, RealVector::Zero(1)), ConfigError);
  EXPECT_THROW((void)run_chain(target, SamplerConfig{0.1, 0, 0, 0, 1}, RealVector::Zero(1)), ConfigError);
  EXPECT_THROW((void)run_chain(target, SamplerConfig{0.1, 0, 1, 0, 0}, RealVector::Zero(1)), ConfigError);
  EXPECT_NO_THROW(SamplerConfig({5e-6, 400000, 600000, 0, 1}).validate());
}

TEST(Summary, TwoSamplesAndConstant) {
  ChainRecord record;
  record.latent_samples = RealMatrix(2, 3);
  record.latent_samples << 1.0, 2.0, 3.0, 3.0, 2.0, -1.0;
  const auto s = summarize(record, *make_identity(3));
  EXPECT_EQ(s.mean, (RealVector{{2.0, 2.0, 1.0}}));
  EXPECT_NEAR(s.stddev[0], 2.0 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(s.stddev[1], 0.0);
  EXPECT_NEAR(s.stddev[2], 4.0 / std::sqrt(2.0), 1e-15);

  record.latent_samples = RealMatrix::Constant(5, 3, 0.7);
  EXPECT_EQ(summarize(record, *make_identity(3)).stddev, RealVector::Zero(3));

  record.latent_samples.resize(1, 3);
  EXPECT_THROW((void)summarize(record, *make_identity(3)), UsageError);
  record.latent_samples.resize(0, 3);
  EXPECT_THROW((void)summarize(record, *make_identity(3)), UsageError);
}

TEST(Summary, MergedMomentsMatchSinglePass) {
  RunningMoments all(2);
  RunningMoments left(2);
  RunningMoments right(2);
  for (int i = 0; i < 100; ++i) {
    const RealVector x = testing::random_real(2, i);
    all.add(x);
    (i < 37 ? left : right).add(x);
  }
  left.merge(right);
  EXPECT_EQ(left.count(), 100);
  EXPECT_TRUE(left.mean().isApprox(all.mean(), 1e-13));
  EXPECT_TRUE(left.stddev().isApprox(all.stddev(), 1e-13));
}

TEST(InitLatent, IdentityGeneratorReachesTarget) {
  const RealVector s = testing::random_real(6, 3);
  const auto init = init_latent(*make_identity(6), s, {});
  EXPECT_LE((init.z - s).norm(), 1e-12);
  EXPECT_LE(init.objective, 1e-24);
}

TEST(InitLatent, SelfConsistency) {
  auto base = small_generator(21, 4, 12);
  AugmentedGenerator prior(base, 0.5);
  const RealVector z_star{{0.3, -0.6, 0.9, 0.1, 0.4}};
  const RealVector s = prior.forward(z_star);
  LatentInitOptions opts;
  opts.iters = 3000;
  opts.step = 20.0;
  const auto init = init_latent(prior, s, opts);
  EXPECT_LE(init.objective, 1e-6 * s.squaredNorm());
}

TEST(InitLatent, ZeroTargetWithAugmentedPriorRunsToBudget) {
  AugmentedGenerator prior(small_generator(4), 0.5);
  LatentInitOptions opts;
  opts.iters = 50;
  opts.restarts = 2;
  const auto init = init_latent(prior, RealVector::Zero(12), opts);
  EXPECT_LT(init.z[4], 0.0);  // z2 pushed toward -inf
  EXPECT_LT(init.objective, 1e-2);
}

TEST(InitLatent, Errors) {
  EXPECT_THROW((void)init_latent(*make_identity(3), RealVector::Zero(4)), ConfigError);
  RealVector bad = RealVector::Zero(3);
  bad[0] = std::nan("");
  EXPECT_THROW((void)init_latent(*make_identity(3), bad), ConfigError);

  class Exploding final : public DifferentiableOp<double> {
   public:
    Index in_dim() const override { return 2; }
    Index out_dim() const override { return 2; }
    std::string name() const override { return "exploding"; }
    RealVector forward(const RealVector& x) const override {
      return RealVector::Constant(2, std::numeric_limits<double>::infinity()) + x;
    }
    RealVector vjp(const RealVector& x, const RealVector&) const override { return x; }
  };
  EXPECT_THROW((void)init_latent(Exploding{}, RealVector::Zero(2)), InitializationError);
}

}  // namespace
}  // namespace nlb
