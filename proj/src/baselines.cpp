#include "nlbayes/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

namespace nlb {

RealVector tv_prox(const RealVector& v, double weight, const ImageShape& shape,
                   const TvProxOptions& options) {
  if (v.size() != shape.size()) throw ConfigError("tv_prox: image size mismatch");
  if (weight < 0.0 || !std::isfinite(weight)) throw ConfigError("tv_prox: weight must be >= 0");
  if (options.inner_iters < 0 || !(options.dual_step > 0.0)) {
    throw ConfigError("tv_prox: inner_iters >= 0 and dual_step > 0 required");
  }
  if (weight == 0.0) return options.nonnegative ? RealVector(v.cwiseMax(0.0)) : v;

  GradientField<double> p = GradientField<double>::Zero(shape.size(), 2);
  GradientField<double> r = p;
  double t = 1.0;
  const double scale = options.dual_step / weight;
  for (int it = 0; it < options.inner_iters; ++it) {
    const RealVector s = v - weight * image_gradient_adjoint(r, shape);
    GradientField<double> next = r + scale * image_gradient(s, shape);
    const RealVector norms = next.rowwise().norm().cwiseMax(1.0);
    next.array().colwise() /= norms.array();
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    r = next + ((t - 1.0) / t_next) * (next - p);
    p = std::move(next);
    t = t_next;
  }
  RealVector s = v - weight * image_gradient_adjoint(p, shape);
  if (options.nonnegative) s = s.cwiseMax(0.0);
  return s;
}

void VariationalConfig::validate() const {
  if (tau_reg < 0.0 || !std::isfinite(tau_reg)) throw ConfigError("baseline: tau_reg must be >= 0");
  if (max_iters < 1) throw ConfigError("baseline: max_iters must be positive");
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("baseline: step must be positive");
  if (tol < 0.0) throw ConfigError("baseline: tol must be >= 0");
  if (inner_iters < 1) throw ConfigError("baseline: inner_iters must be positive");
  if (max_backtracks < 1) throw ConfigError("baseline: max_backtracks must be positive");
  for (double g : grid) {
    if (g < 0.0 || !std::isfinite(g)) throw ConfigError("baseline: grid values must be >= 0");
  }
}

SolverResult proximal_gradient(const CompositeProblem& problem, const RealVector& x0,
                               const VariationalConfig& cfg, bool momentum,
                               const IterateObserver& observer) {
  constexpr int kMaxIncreases = 10;
  constexpr double kStallTolerance = 1e-6;
  RealVector x = x0.cwiseMax(0.0);
  double fx = problem.smooth(x) + problem.nonsmooth(x);
  if (!std::isfinite(fx)) throw DivergenceError("baseline: objective is not finite at the initial image");

  SolverResult result{x, fx, 0, {}};
  RealVector y = x;
  double t = 1.0;
  double step = cfg.step;
  int increases = 0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const auto [fy, grad] = problem.smooth_with_gradient(y);
    if (!std::isfinite(fy) || !grad.allFinite()) {
      throw DivergenceError("baseline: non-finite gradient at iteration " + std::to_string(it));
    }
    RealVector p;
    double fp = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
      p = problem.prox(y - step * grad, step);
      fp = problem.smooth(p);
      const RealVector d = p - y;
      if (std::isfinite(fp) && fp <= fy + grad.dot(d) + d.squaredNorm() / (2.0 * step)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      throw DivergenceError("baseline: backtracking failed at iteration " + std::to_string(it) +
                            " (step " + std::to_string(step) + ")");
    }
    const double fnew = fp + problem.nonsmooth(p);
    result.iterations = it;

    if (fnew > fx) {
      if (!(momentum && t > 1.0) && fnew - fx <= kStallTolerance * std::max(std::abs(fx), 1.0)) {
        // A plain step went up by less than the inner prox accuracy: stalled.
        break;
      }
      if (++increases >= kMaxIncreases) {
        throw DivergenceError("baseline: objective increased " + std::to_string(kMaxIncreases) +
                              " consecutive times");
      }
      if (momentum && t > 1.0) {
        // Restart from the last iterate without momentum.
        t = 1.0;
        y = x;
        result.history.push_back(fx);
        continue;
      }
    } else {
      increases = 0;
    }

    const double change = std::abs(fx - fnew) / std::max(std::abs(fx), 1e-300);
    RealVector previous = std::move(x);
    x = std::move(p);
    fx = fnew;
    if (momentum) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      y = x + ((t - 1.0) / t_next) * (x - previous);
      t = t_next;
    } else {
      y = x;
    }
    result.history.push_back(fx);
    if (observer) observer(it, x, fx);
    if (fx < result.objective) {
      result.image = x;
      result.objective = fx;
    }
    if (change < cfg.tol) break;
  }
  return result;
}

RealVector flat_intensity_start(const SensingMatrix& a, const RealVector& y) {
  const double mean_y = std::max(y.mean(), 0.0);
  const double c = std::sqrt(mean_y / (a.variance() * static_cast<double>(a.k())));
  return RealVector::Constant(a.k(), c);
}

SolverResult tikhonov_poisson(const SensingMatrix& a, const RealVector& y, const ImageShape& shape,
                              const VariationalConfig& cfg, const std::optional<RealVector>& s_init,
                              const IterateObserver& observer) {
  cfg.validate();
  if (shape.size() != a.k()) throw ConfigError("tikhonov: image shape does not match sensing matrix");
  RealVector x0 = s_init ? *s_init : flat_intensity_start(a, y);
  if (x0.size() != a.k()) throw ConfigError("tikhonov: initial image size mismatch");

  auto op = std::make_shared<PhaseRetrievalOp>(std::make_shared<SensingMatrix>(a));
  auto data = std::make_shared<DataFidelity<double>>(op, y, NoiseKind::kPoisson);
  const double tau = cfg.tau_reg;
  const auto penalty = [tau, shape](const RealVector& s) {
    return tau * image_gradient(s, shape).squaredNorm();
  };
  CompositeProblem problem{
      [data, tau, shape, penalty](const RealVector& s) {
        auto [f, g] = data->value_and_gradient(s);
        g += 2.0 * tau * image_gradient_adjoint(image_gradient(s, shape), shape);
        return std::pair<double, RealVector>{f + penalty(s), std::move(g)};
      },
      [data, penalty](const RealVector& s) { return data->value(s) + penalty(s); },
      [](const RealVector&) { return 0.0; },
      [](const RealVector& v, double) { return RealVector(v.cwiseMax(0.0)); },
  };
  return proximal_gradient(problem, x0, cfg, false, observer);
}

double mean_squared_error(const RealVector& estimate, const RealVector& truth) {
  if (estimate.size() != truth.size() || truth.size() == 0) {
    throw ConfigError("mse: size mismatch");
  }
  return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

GridSearchResult grid_search(const std::function<SolverResult(double tau)>& solve,
                             const std::vector<double>& grid, const RealVector& ground_truth,
                             int threads) {
  if (grid.empty()) throw ConfigError("grid search: grid is empty");
  const std::size_t n = grid.size();
  std::vector<std::optional<SolverResult>> solved(n);
  std::vector<std::exception_ptr> errors(n);
  const auto run = [&](std::size_t i) {
    try {
      solved[i] = solve(grid[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  GridSearchResult out;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = *solved[i];
    const double mse = mean_squared_error(r.image, ground_truth);
    out.rows.push_back({grid[i], mse, r.iterations, r.objective});
    out.images.push_back(r.image);
    if (mse < best) {
      best = mse;
      out.best_index = i;
    }
  }
  out.best_tau = grid[out.best_index];
  out.best_at_endpoint = n > 1 && (out.best_index == 0 || out.best_index + 1 == n);
  return out;
}

std::string mse_table_csv(const GridSearchResult& result) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "tau_reg,mse,iterations,final_objective\n";
  for (const auto& row : result.rows) {
    os << row.tau_reg << ',' << row.mse << ',' << row.iterations << ',' << row.final_objective << '\n';
  }
  return os.str();
}

}  // namespace nlb
