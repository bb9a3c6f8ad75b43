#include <gtest/gtest.h>

#include "nlbayes/baselines.hpp"
#include "nlbayes/bpm.hpp"
#include "test_support.hpp"

namespace nlb {
namespace {

// Projected dual gradient (Chambolle) run to convergence; slow reference for tv_prox.
RealVector tv_prox_reference(const RealVector& v, double weight, const ImageShape& shape, int iters) {
  GradientField<double> p = GradientField<double>::Zero(shape.size(), 2);
  for (int it = 0; it < iters; ++it) {
    const RealVector s = v - weight * image_gradient_adjoint(p, shape);
    p += (1.0 / (8.0 * weight)) * image_gradient(s, shape);
    const RealVector norms = p.rowwise().norm().cwiseMax(1.0);
    p.array().colwise() /= norms.array();
  }
  return (v - weight * image_gradient_adjoint(p, shape)).cwiseMax(0.0);
}

RealVector disc_image(const ImageShape& shape, double cy, double cx, double radius, double value) {
  RealVector s = RealVector::Zero(shape.size());
  for (Index i = 0; i < shape.height; ++i) {
    for (Index j = 0; j < shape.width; ++j) {
      const double dy = static_cast<double>(i) - cy;
      const double dx = static_cast<double>(j) - cx;
      if (dy * dy + dx * dx <= radius * radius) s[i * shape.width + j] = value;
    }
  }
  return s;
}

TEST(DiscreteGradient, AdjointIdentity) {
  const ImageShape shape{7, 5};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealVector s = testing::random_real(shape.size(), seed);
    const GradientField<double> p = testing::random_real(2 * shape.size(), seed + 50).reshaped(shape.size(), 2);
    const double lhs = (image_gradient(s, shape).array() * p.array()).sum();
    const double rhs = s.dot(image_gradient_adjoint(p, shape));
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(DiscreteGradient, ConstantImageHasZeroGradient) {
  const ImageShape shape{4, 6};
  EXPECT_EQ(image_gradient(RealVector::Constant(24, 3.5), shape), GradientField<double>::Zero(24, 2));
}

TEST(DiscreteGradient, ForwardDifferenceLayout) {
  const ImageShape shape{2, 2};
  const RealVector s{{1.0, 2.0, 4.0, 8.0}};
  const auto g = image_gradient(s, shape);
  EXPECT_EQ(g(0, 0), 3.0);  // down
  EXPECT_EQ(g(0, 1), 1.0);  // right
  EXPECT_EQ(g(1, 0), 6.0);
  EXPECT_EQ(g(1, 1), 0.0);  // last column
  EXPECT_EQ(g(2, 0), 0.0);  // last row
  EXPECT_EQ(g(2, 1), 4.0);
  EXPECT_THROW((void)image_gradient(RealVector::Zero(3), shape), ConfigError);
}

TEST(MixedNorm, Examples) {
  GradientField<double> one(1, 2);
  one << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(mixed_norm(one, 2, 1), 5.0);
  const GradientField<double> zero = GradientField<double>::Zero(5, 2);
  EXPECT_EQ(mixed_norm(zero, 2, 1), 0.0);
  EXPECT_EQ(mixed_norm(zero, 2, 2), 0.0);
  const double sq = mixed_norm(image_gradient(RealVector{{0.0, 1.0}}, ImageShape{1, 2}), 2, 2);
  EXPECT_DOUBLE_EQ(sq * sq, 1.0);
  EXPECT_THROW((void)mixed_norm(one, 1, 1), ConfigError);
  EXPECT_THROW((void)mixed_norm(one, 2, 3), ConfigError);
}

TEST(TvProx, ConstantImageUnchanged) {
  const ImageShape shape{6, 6};
  const RealVector v = RealVector::Constant(36, 0.4);
  EXPECT_TRUE(tv_prox(v, 0.3, shape).isApprox(v, 1e-15));
}

TEST(TvProx, NonNegativeOutput) {
  const ImageShape shape{8, 8};
  const RealVector v = testing::random_real(64, 3);
  EXPECT_GE(tv_prox(v, 0.2, shape).minCoeff(), 0.0);
  EXPECT_EQ(tv_prox(v, 0.0, shape), RealVector(v.cwiseMax(0.0)));
}

TEST(TvProx, NonExpansive) {
  const ImageShape shape{8, 8};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RealVector a = testing::random_uniform(64, seed, 0.0, 1.0);
    const RealVector b = testing::random_uniform(64, seed + 20, 0.0, 1.0);
    const double lhs = (tv_prox(a, 0.1, shape) - tv_prox(b, 0.1, shape)).norm();
    EXPECT_LE(lhs, (a - b).norm() + 1e-8);
  }
}

TEST(TvProx, MatchesSlowReference) {
  const ImageShape shape{8, 8};
  const RealVector v = disc_image(shape, 3.5, 4.0, 2.5, 1.0) + testing::random_real(64, 8, 0.05);
  const RealVector slow = tv_prox_reference(v, 0.05, shape, 100000);
  TvProxOptions converged;
  converged.inner_iters = 5000;
  EXPECT_LE((tv_prox(v, 0.05, shape, converged) - slow).norm() / slow.norm(), 1e-6);
  // The default inner budget is a warm approximation only.
  EXPECT_LE((tv_prox(v, 0.05, shape) - slow).norm() / slow.norm(), 1e-3);
}

TEST(TvProx, Errors) {
  EXPECT_THROW((void)tv_prox(RealVector::Zero(5), 0.1, ImageShape{2, 2}), ConfigError);
  EXPECT_THROW((void)tv_prox(RealVector::Zero(4), -0.1, ImageShape{2, 2}), ConfigError);
}

class PhaseRetrievalInstance : public ::testing::Test {
 protected:
  ImageShape shape{4, 4};
  SensingMatrix a = make_sensing_matrix(64, 16, 2.0, 5);
  RealVector truth = disc_image(shape, 1.5, 1.5, 1.2, 0.5) + RealVector::Constant(16, 0.05);
  RealVector y = pr_forward(a, truth).array().round();
};

TEST_F(PhaseRetrievalInstance, TikhonovStationaryAtExactSolution) {
  const RealVector exact = pr_forward(a, truth);
  VariationalConfig cfg;
  cfg.max_iters = 20;
  const auto result = tikhonov_poisson(a, exact, shape, cfg, truth);
  EXPECT_EQ(result.image, truth);
}

TEST_F(PhaseRetrievalInstance, TikhonovObjectiveNonIncreasing) {
  VariationalConfig cfg;
  cfg.max_iters = 200;
  cfg.tau_reg = 1.0;
  const auto result = tikhonov_poisson(a, y, shape, cfg);
  ASSERT_GT(result.history.size(), 5u);
  for (std::size_t i = 1; i < result.history.size(); ++i) {
    EXPECT_LE(result.history[i], result.history[i - 1]);
  }
  EXPECT_GE(result.image.minCoeff(), 0.0);
}

TEST_F(PhaseRetrievalInstance, TikhonovSmoothnessDecreasesWithWeight) {
  double previous = std::numeric_limits<double>::infinity();
  for (double tau : {0.0, 1.0, 10.0, 100.0, 1000.0}) {
    VariationalConfig cfg;
    cfg.max_iters = 3000;
    cfg.tol = 1e-12;
    cfg.tau_reg = tau;
    const auto result = tikhonov_poisson(a, y, shape, cfg);
    const double roughness = mixed_norm(image_gradient(result.image, shape), 2, 2);
    EXPECT_LT(roughness, previous) << "tau_reg " << tau;
    previous = roughness;
  }
}

TEST_F(PhaseRetrievalInstance, ZeroWeightSolversAgreePerIteration) {
  VariationalConfig cfg;
  cfg.max_iters = 60;
  cfg.tau_reg = 0.0;
  cfg.momentum = false;
  const RealVector start = flat_intensity_start(a, y);
  std::vector<RealVector> tik_path;
  std::vector<RealVector> tv_path;
  const auto tik = tikhonov_poisson(a, y, shape, cfg, start,
                                    [&](int, const RealVector& x, double) { tik_path.push_back(x); });
  auto op = std::make_shared<PhaseRetrievalOp>(std::make_shared<SensingMatrix>(a));
  const auto tv = tv_fista<double>(op, y, NoiseKind::kPoisson, shape, cfg, start,
                                   [&](int, const RealVector& x, double) { tv_path.push_back(x); });
  ASSERT_EQ(tik_path.size(), tv_path.size());
  for (std::size_t i = 0; i < tik_path.size(); ++i) EXPECT_EQ(tik_path[i], tv_path[i]) << "iteration " << i;
  EXPECT_EQ(tik.history, tv.history);
}

TEST_F(PhaseRetrievalInstance, FistaBestIterateRecordNonIncreasing) {
  VariationalConfig cfg;
  cfg.max_iters = 150;
  cfg.tau_reg = 2.0;
  auto op = std::make_shared<PhaseRetrievalOp>(std::make_shared<SensingMatrix>(a));
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> records;
  const auto result = tv_fista<double>(op, y, NoiseKind::kPoisson, shape, cfg, flat_intensity_start(a, y),
                                       [&](int, const RealVector&, double f) {
                                         best = std::min(best, f);
                                         records.push_back(best);
                                       });
  for (std::size_t i = 1; i < records.size(); ++i) EXPECT_LE(records[i], records[i - 1]);
  EXPECT_LE(result.objective, records.back());
  EXPECT_GE(result.image.minCoeff(), 0.0);
}

TEST(TvFista, RecoversDiscFromNoiselessOdt) {
  const GridSpec grid{24, 24, 0.1, 0.1, 1.52, 0.406};
  const ImageShape shape{grid.nz, grid.nx};
  const double value = 0.05;
  const RealVector truth = disc_image(shape, 11.5, 11.5, 6.0, value);
  std::vector<IncidentWave> waves;
  for (double angle : illumination_angles(9, std::numbers::pi / 4)) {
    waves.push_back(make_plane_wave(grid, angle));
  }
  auto op = std::make_shared<BpmOperator>(grid, waves);
  const ComplexVector y = op->forward(truth);
  VariationalConfig cfg;
  cfg.tau_reg = 2e-3;
  cfg.max_iters = 1500;
  cfg.tol = 1e-13;
  const auto result = tv_fista<Complex>(op, y, NoiseKind::kGaussian, shape, cfg, RealVector::Zero(shape.size()));
  const double worst = (result.image - truth).cwiseAbs().maxCoeff();
  RecordProperty("max_abs_error", std::to_string(worst));
  EXPECT_LE(worst, 0.05 * value);
}

TEST(GridSearch, SingleValueAndTableShape) {
  const RealVector truth = RealVector::Constant(4, 1.0);
  const auto solve = [&](double tau) {
    SolverResult r;
    r.image = RealVector::Constant(4, 1.0 + (tau - 2.0) * (tau - 2.0));
    r.objective = tau;
    r.iterations = 3;
    return r;
  };
  const auto one = grid_search(solve, {0.5}, truth);
  EXPECT_EQ(one.best_tau, 0.5);
  EXPECT_EQ(one.rows.size(), 1u);
  EXPECT_FALSE(one.best_at_endpoint);

  const std::vector<double> grid{0.0, 1.0, 2.0, 3.0, 4.0};
  const auto many = grid_search(solve, grid, truth);
  EXPECT_EQ(many.rows.size(), grid.size());
  EXPECT_EQ(many.best_tau, 2.0);
  EXPECT_FALSE(many.best_at_endpoint);
  const auto edge = grid_search(solve, {2.0, 3.0, 4.0}, truth);
  EXPECT_TRUE(edge.best_at_endpoint);

  const auto threaded = grid_search(solve, grid, truth, 3);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(threaded.rows[i].mse, many.rows[i].mse);

  const std::string csv = mse_table_csv(many);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "tau_reg,mse,iterations,final_objective");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_THROW((void)grid_search(solve, {}, truth), ConfigError);
}

TEST(ProximalGradient, NonFiniteObjectiveRaisesDivergence) {
  CompositeProblem problem{
      [](const RealVector& x) { return std::pair<double, RealVector>{x.squaredNorm(), 2.0 * x}; },
      [](const RealVector& x) { return x[0] > 0.5 ? std::nan("") : x.squaredNorm(); },
      [](const RealVector&) { return 0.0; },
      [](const RealVector& v, double) { return RealVector(v + RealVector::Ones(v.size())); },
  };
  VariationalConfig cfg;
  cfg.max_backtracks = 5;
  EXPECT_THROW((void)proximal_gradient(problem, RealVector::Zero(2), cfg, true), DivergenceError);
}

TEST(VariationalConfig, Validation) {
  VariationalConfig cfg;
  cfg.tau_reg = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.step = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.grid = {1.0, -2.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace nlb
