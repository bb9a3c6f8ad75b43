#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nlbayes/phase_retrieval.hpp"
#include "nlbayes/posterior.hpp"

namespace nlb {

// ---------------------------------------------------------------------------
// Discrete gradient and mixed norms

/// K x 2 field of per-pixel (vertical, horizontal) differences.
template <typename Scalar>
using GradientField = Eigen::Matrix<Scalar, Eigen::Dynamic, 2>;

/// Forward differences on a row-major image; differences across the last
/// row/column are zero (Neumann boundary), so constant images map to zero.
template <typename Derived>
GradientField<typename Derived::Scalar> image_gradient(const Eigen::MatrixBase<Derived>& s,
                                                       const ImageShape& shape) {
  using Scalar = typename Derived::Scalar;
  if (s.size() != shape.size()) throw ConfigError("image_gradient: image size mismatch");
  const Index h = shape.height;
  const Index w = shape.width;
  GradientField<Scalar> g = GradientField<Scalar>::Zero(shape.size(), 2);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index k = i * w + j;
      if (i + 1 < h) g(k, 0) = s[k + w] - s[k];
      if (j + 1 < w) g(k, 1) = s[k + 1] - s[k];
    }
  }
  return g;
}

/// Adjoint of image_gradient (the negative divergence).
template <typename Derived>
Vector<typename Derived::Scalar> image_gradient_adjoint(const Eigen::MatrixBase<Derived>& p,
                                                        const ImageShape& shape) {
  using Scalar = typename Derived::Scalar;
  if (p.rows() != shape.size() || p.cols() != 2) {
    throw ConfigError("image_gradient_adjoint: field size mismatch");
  }
  const Index h = shape.height;
  const Index w = shape.width;
  Vector<Scalar> s = Vector<Scalar>::Zero(shape.size());
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index k = i * w + j;
      if (i + 1 < h) {
        s[k] -= p(k, 0);
        s[k + w] += p(k, 0);
      }
      if (j + 1 < w) {
        s[k] -= p(k, 1);
        s[k + 1] += p(k, 1);
      }
    }
  }
  return s;
}

/// (l_p, l_q) mixed norm over pixels (rows) of a K x 2 field. Supports
/// (2, 1) (isotropic total variation) and (2, 2) (Frobenius).
template <typename Derived>
double mixed_norm(const Eigen::MatrixBase<Derived>& field, double p, double q) {
  if (p == 2.0 && q == 1.0) return field.rowwise().norm().sum();
  if (p == 2.0 && q == 2.0) return field.norm();
  throw ConfigError("mixed_norm: unsupported (p, q) = (" + std::to_string(p) + ", " +
                    std::to_string(q) + ")");
}

// ---------------------------------------------------------------------------
// Total-variation proximal map

struct TvProxOptions {
  int inner_iters = 50;
  double dual_step = 1.0 / 8.0;
  bool nonnegative = true;
};

/// argmin_s |s - v|^2 / 2 + weight * |grad s|_{2,1} by accelerated projection
/// on the dual, followed by projection onto s >= 0 when requested.
RealVector tv_prox(const RealVector& v, double weight, const ImageShape& shape,
                   const TvProxOptions& options = {});

// ---------------------------------------------------------------------------
// Solvers

struct VariationalConfig {
  double tau_reg = 0.0;
  int max_iters = 500;
  double step = 1.0;       // initial step; halved by backtracking
  double tol = 1e-9;       // relative objective change
  std::vector<double> grid;
  int inner_iters = 50;    // TV prox
  bool momentum = true;    // FISTA acceleration with restart on increase
  int max_backtracks = 60;

  void validate() const;
};

struct SolverResult {
  RealVector image;        // best iterate by objective
  double objective = 0.0;  // objective of `image`
  int iterations = 0;
  std::vector<double> history;  // objective of every iterate
};

using IterateObserver = std::function<void(int iteration, const RealVector& iterate, double objective)>;

/// Data-fidelity term: Poisson negative log-likelihood sum(-y log y0 + y0),
/// or the squared residual |y - y0|^2 for Gaussian noise.
template <typename Out>
class DataFidelity {
 public:
  DataFidelity(OpPtr<Out> forward, Vector<Out> y, NoiseKind kind)
      : forward_(std::move(forward)), y_(std::move(y)), kind_(kind) {
    if (!forward_) throw ConfigError("data fidelity: missing forward operator");
    if (y_.size() != forward_->out_dim()) throw ConfigError("data fidelity: measurement length mismatch");
  }

  [[nodiscard]] double value(const RealVector& s) const {
    return -evaluate_likelihood<Out>(noise(), y_, forward_->forward(s)).value;
  }

  [[nodiscard]] std::pair<double, RealVector> value_and_gradient(const RealVector& s) const {
    auto lin = forward_->linearize(s);
    auto lik = evaluate_likelihood<Out>(noise(), y_, lin.value);
    return {-lik.value, -lin.pullback(lik.cotangent)};
  }

  [[nodiscard]] Index dim() const { return forward_->in_dim(); }

 private:
  // sigma^2 = 1/2 turns -log p into the plain squared residual.
  [[nodiscard]] NoiseModel noise() const {
    return kind_ == NoiseKind::kPoisson ? NoiseModel::poisson()
                                        : NoiseModel::gaussian(std::sqrt(0.5));
  }

  OpPtr<Out> forward_;
  Vector<Out> y_;
  NoiseKind kind_;
};

/// Proximal-gradient engine shared by the baselines: backtracking on the
/// quadratic upper bound of the smooth part, optional FISTA momentum with
/// restart whenever the objective increases.
struct CompositeProblem {
  std::function<std::pair<double, RealVector>(const RealVector&)> smooth_with_gradient;
  std::function<double(const RealVector&)> smooth;
  std::function<double(const RealVector&)> nonsmooth;
  std::function<RealVector(const RealVector&, double step)> prox;
};

SolverResult proximal_gradient(const CompositeProblem& problem, const RealVector& x0,
                               const VariationalConfig& cfg, bool momentum,
                               const IterateObserver& observer = {});

/// Constant non-negative image whose expected intensity matches mean(y):
/// E|As|^2 = variance * |s|^2.
RealVector flat_intensity_start(const SensingMatrix& a, const RealVector& y);

/// Projected gradient descent on
///   sum(-y log |As|^2 + |As|^2) + tau_reg |grad s|_{2,2}^2,  s >= 0.
/// Starts from `s_init` or flat_intensity_start.
SolverResult tikhonov_poisson(const SensingMatrix& a, const RealVector& y, const ImageShape& shape,
                              const VariationalConfig& cfg,
                              const std::optional<RealVector>& s_init = std::nullopt,
                              const IterateObserver& observer = {});

/// FISTA on data(s) + tau_reg |grad s|_{2,1} + i_+(s), Poisson or Gaussian data term.
template <typename Out>
SolverResult tv_fista(OpPtr<Out> forward, const Vector<Out>& y, NoiseKind noise,
                      const ImageShape& shape, const VariationalConfig& cfg,
                      const RealVector& s_init, const IterateObserver& observer = {}) {
  cfg.validate();
  if (s_init.size() != shape.size()) throw ConfigError("tv_fista: initial image size mismatch");
  auto data = std::make_shared<DataFidelity<Out>>(std::move(forward), y, noise);
  if (data->dim() != shape.size()) throw ConfigError("tv_fista: image shape does not match operator");
  const double tau = cfg.tau_reg;
  const TvProxOptions prox_options{cfg.inner_iters, 1.0 / 8.0, true};
  CompositeProblem problem{
      [data](const RealVector& s) { return data->value_and_gradient(s); },
      [data](const RealVector& s) { return data->value(s); },
      [tau, shape](const RealVector& s) { return tau * mixed_norm(image_gradient(s, shape), 2, 1); },
      [tau, shape, prox_options](const RealVector& v, double step) {
        return tv_prox(v, step * tau, shape, prox_options);
      },
  };
  return proximal_gradient(problem, s_init, cfg, cfg.momentum, observer);
}

// ---------------------------------------------------------------------------
// Regularization-weight search

struct GridRow {
  double tau_reg = 0.0;
  double mse = 0.0;
  int iterations = 0;
  double final_objective = 0.0;
};

struct GridSearchResult {
  double best_tau = 0.0;
  std::size_t best_index = 0;
  std::vector<GridRow> rows;  // in grid order
  bool best_at_endpoint = false;
  std::vector<RealVector> images;
};

double mean_squared_error(const RealVector& estimate, const RealVector& truth);

/// Solves once per grid value (concurrently when threads > 1) and picks the
/// value with the lowest MSE against the ground truth.
GridSearchResult grid_search(const std::function<SolverResult(double tau)>& solve,
                             const std::vector<double>& grid, const RealVector& ground_truth,
                             int threads = 1);

/// CSV with header tau_reg,mse,iterations,final_objective.
std::string mse_table_csv(const GridSearchResult& result);

}  // namespace nlb
