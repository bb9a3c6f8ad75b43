#include <gtest/gtest.h>

#include "nlbayes/phase_retrieval.hpp"
#include "test_support.hpp"

namespace nlb {
namespace {

SensingMatrix scalar_matrix(Complex value) {
  ComplexMatrix m(1, 1);
  m(0, 0) = value;
  return sensing_matrix_from_entries(m);
}

TEST(SensingMatrix, DeterministicInSeed) {
  const auto a = make_sensing_matrix(2, 3, 2.0, 7);
  const auto b = make_sensing_matrix(2, 3, 2.0, 7);
  EXPECT_EQ(a.entries(), b.entries());
  EXPECT_EQ(a.m(), 2);
  EXPECT_EQ(a.k(), 3);
  const auto c = make_sensing_matrix(2, 3, 2.0, 8);
  EXPECT_NE(a.entries(), c.entries());
}

TEST(SensingMatrix, EntryVarianceMatches) {
  const auto a = make_sensing_matrix(250, 400, 2.0, 1);
  const double mean_power = a.entries().cwiseAbs2().mean();
  EXPECT_NEAR(mean_power, 2.0, 0.05);
  // Circular: real and imaginary parts each carry half the variance.
  EXPECT_NEAR(a.entries().real().cwiseAbs2().mean(), 1.0, 0.03);
  EXPECT_NEAR(a.entries().imag().cwiseAbs2().mean(), 1.0, 0.03);
  EXPECT_NEAR(a.entries().real().mean(), 0.0, 0.01);
}

TEST(SensingMatrix, RejectsBadArguments) {
  EXPECT_THROW((void)make_sensing_matrix(0, 3, 1.0, 0), ConfigError);
  EXPECT_THROW((void)make_sensing_matrix(3, 0, 1.0, 0), ConfigError);
  EXPECT_THROW((void)make_sensing_matrix(3, 3, 0.0, 0), ConfigError);
  EXPECT_THROW((void)make_sensing_matrix(3, 3, -1.0, 0), ConfigError);
}

TEST(PrForward, ScalarExamples) {
  const RealVector s{{2.0}};
  EXPECT_DOUBLE_EQ(pr_forward(scalar_matrix({1.0, 0.0}), s)[0], 4.0);
  EXPECT_DOUBLE_EQ(pr_forward(scalar_matrix({0.0, 1.0}), s)[0], 4.0);
}

TEST(PrForward, ZeroSignalGivesZero) {
  const auto a = make_sensing_matrix(9, 4, 2.0, 3);
  EXPECT_EQ(pr_forward(a, RealVector::Zero(4)), RealVector::Zero(9));
}

TEST(PrForward, NonNegativeAndQuadratic) {
  const auto a = make_sensing_matrix(20, 6, 2.0, 5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealVector s = testing::random_real(6, seed);
    const RealVector y = pr_forward(a, s);
    EXPECT_GE(y.minCoeff(), 0.0);
    // Power-of-two factors commute with every rounding step.
    for (double alpha : {-2.0, 0.5, 4.0}) EXPECT_EQ(pr_forward(a, alpha * s), alpha * alpha * y);
    const double alpha = -1.37;
    EXPECT_TRUE(pr_forward(a, alpha * s).isApprox(alpha * alpha * y, 1e-14));
  }
}

TEST(PrForward, DimensionMismatch) {
  const auto a = make_sensing_matrix(3, 4, 1.0, 0);
  EXPECT_THROW((void)pr_forward(a, RealVector::Zero(5)), ConfigError);
  EXPECT_THROW((void)pr_vjp(a, RealVector::Zero(4), RealVector::Zero(2)), ConfigError);
}

TEST(PrVjp, ScalarExamples) {
  const RealVector s{{2.0}};
  const RealVector r{{1.0}};
  EXPECT_DOUBLE_EQ(pr_vjp(scalar_matrix({1.0, 0.0}), s, r)[0], 4.0);
  EXPECT_DOUBLE_EQ(pr_vjp(scalar_matrix({0.0, 1.0}), s, r)[0], 4.0);
}

TEST(PrVjp, AdjointIdentity) {
  auto a = std::make_shared<SensingMatrix>(make_sensing_matrix(8, 5, 1.0, 21));
  PhaseRetrievalOp op(a);
  EXPECT_LE(adjoint_check(op, 20, 4), 1e-8);
}

TEST(PrVjp, LinearizeMatchesDirect) {
  auto a = std::make_shared<SensingMatrix>(make_sensing_matrix(8, 5, 1.0, 21));
  PhaseRetrievalOp op(a);
  const RealVector s = testing::random_real(5, 1);
  const RealVector r = testing::random_real(8, 2);
  auto lin = op.linearize(s);
  EXPECT_EQ(lin.value, op.forward(s));
  EXPECT_TRUE(lin.pullback(r).isApprox(op.vjp(s, r), 1e-14));
}

}  // namespace
}  // namespace nlb
