#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "nlbayes/errors.hpp"
#include "nlbayes/types.hpp"

namespace nlb {

/// Forward value at a point plus the pullback r -> Re(J^H r) at that point.
/// Operators that cache intermediate state for their adjoint hand it out
/// through the pullback closure.
template <typename Out>
struct Linearization {
  Vector<Out> value;
  std::function<RealVector(const Vector<Out>&)> pullback;
};

/// A map R^n -> R^m or R^n -> C^m together with its vector-Jacobian product.
///
/// For complex outputs the pullback is Re(J^H r), i.e. the gradient under the
/// real inner product Re(a^H b). Implementations are immutable after
/// construction and may be evaluated concurrently.
template <typename Out>
class DifferentiableOp {
 public:
  using OutScalar = Out;
  using OutVector = Vector<Out>;

  virtual ~DifferentiableOp() = default;

  [[nodiscard]] virtual Index in_dim() const = 0;
  [[nodiscard]] virtual Index out_dim() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;

  [[nodiscard]] virtual OutVector forward(const RealVector& x) const = 0;
  [[nodiscard]] virtual RealVector vjp(const RealVector& x, const OutVector& r) const = 0;

  [[nodiscard]] virtual Linearization<Out> linearize(const RealVector& x) const {
    return {forward(x), [this, x](const OutVector& r) { return vjp(x, r); }};
  }

  /// Exact Jacobian-vector product when the operator can provide one cheaply.
  [[nodiscard]] virtual std::optional<OutVector> jvp(const RealVector& /*x*/,
                                                     const RealVector& /*v*/) const {
    return std::nullopt;
  }
};

template <typename Out>
using OpPtr = std::shared_ptr<const DifferentiableOp<Out>>;

namespace detail {

template <typename Out>
class ComposedOp final : public DifferentiableOp<Out> {
 public:
  ComposedOp(OpPtr<Out> outer, OpPtr<double> inner)
      : outer_(std::move(outer)), inner_(std::move(inner)) {}

  Index in_dim() const override { return inner_->in_dim(); }
  Index out_dim() const override { return outer_->out_dim(); }
  std::string name() const override { return outer_->name() + " o " + inner_->name(); }

  Vector<Out> forward(const RealVector& x) const override {
    return outer_->forward(inner_->forward(x));
  }

  RealVector vjp(const RealVector& x, const Vector<Out>& r) const override {
    return linearize(x).pullback(r);
  }

  Linearization<Out> linearize(const RealVector& x) const override {
    auto in = inner_->linearize(x);
    auto out = outer_->linearize(in.value);
    return {std::move(out.value),
            [pin = std::move(in.pullback), pout = std::move(out.pullback)](const Vector<Out>& r) {
              return pin(pout(r));
            }};
  }

  std::optional<Vector<Out>> jvp(const RealVector& x, const RealVector& v) const override {
    auto jv_inner = inner_->jvp(x, v);
    if (!jv_inner) return std::nullopt;
    return outer_->jvp(inner_->forward(x), *jv_inner);
  }

 private:
  OpPtr<Out> outer_;
  OpPtr<double> inner_;
};

}  // namespace detail

/// x -> outer(inner(x)). The inner operator must produce real output.
template <typename Out>
OpPtr<Out> compose(OpPtr<Out> outer, OpPtr<double> inner) {
  if (!outer || !inner) throw ConfigError("compose: null operator");
  if (inner->out_dim() != outer->in_dim()) {
    throw ConfigError("compose: dimension mismatch between outer '" + outer->name() + "' (in_dim " +
                      std::to_string(outer->in_dim()) + ") and inner '" + inner->name() +
                      "' (out_dim " + std::to_string(inner->out_dim()) + ")");
  }
  return std::make_shared<detail::ComposedOp<Out>>(std::move(outer), std::move(inner));
}

/// Explicit dense linear map x -> M x.
template <typename Out>
class LinearOp final : public DifferentiableOp<Out> {
 public:
  explicit LinearOp(Matrix<Out> matrix, std::string label = "linear")
      : matrix_(std::move(matrix)), label_(std::move(label)) {}

  Index in_dim() const override { return matrix_.cols(); }
  Index out_dim() const override { return matrix_.rows(); }
  std::string name() const override { return label_; }

  Vector<Out> forward(const RealVector& x) const override {
    check_in(x);
    return matrix_ * x.template cast<Out>();
  }

  RealVector vjp(const RealVector& x, const Vector<Out>& r) const override {
    check_in(x);
    if (r.size() != matrix_.rows()) throw ConfigError(label_ + ": cotangent length mismatch");
    return (matrix_.adjoint() * r).real();
  }

  std::optional<Vector<Out>> jvp(const RealVector&, const RealVector& v) const override {
    return Vector<Out>(matrix_ * v.template cast<Out>());
  }

  const Matrix<Out>& matrix() const { return matrix_; }

 private:
  void check_in(const RealVector& x) const {
    if (x.size() != matrix_.cols()) throw ConfigError(label_ + ": input length mismatch");
  }

  Matrix<Out> matrix_;
  std::string label_;
};

inline OpPtr<double> make_identity(Index n) {
  return std::make_shared<LinearOp<double>>(RealMatrix::Identity(n, n), "identity");
}

inline OpPtr<double> make_scaling(Index n, double factor) {
  return std::make_shared<LinearOp<double>>(RealMatrix::Identity(n, n) * factor,
                                            "scale(" + std::to_string(factor) + ")");
}

struct AdjointCheckOptions {
  double fd_step = 1e-6;
  double epsilon = 1e-300;
};

namespace detail {

template <typename Out, typename Rng>
Vector<Out> random_vector(Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector<Out> v(n);
  for (Index i = 0; i < n; ++i) {
    if constexpr (std::is_same_v<Out, double>) {
      v[i] = normal(rng);
    } else {
      const double re = normal(rng);
      const double im = normal(rng);
      v[i] = Out(re, im);
    }
  }
  return v;
}

}  // namespace detail

/// Largest relative defect |<Jv, r> - <v, vjp(x, r)>| / (|Jv| |r|) over random
/// trials. Jv comes from the operator's exact jvp when available, otherwise
/// from central differences along a unit direction.
template <typename Out>
double adjoint_check(const DifferentiableOp<Out>& op, int trials, std::uint64_t seed,
                     const AdjointCheckOptions& options = {}) {
  if (trials < 1) throw ConfigError("adjoint_check: trials must be >= 1");
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const RealVector x = detail::random_vector<double>(op.in_dim(), rng);
    RealVector v = detail::random_vector<double>(op.in_dim(), rng);
    v.normalize();
    const Vector<Out> r = detail::random_vector<Out>(op.out_dim(), rng);

    Vector<Out> jv;
    if (auto exact = op.jvp(x, v)) {
      jv = std::move(*exact);
    } else {
      const double h = options.fd_step;
      const Vector<Out> plus = op.forward(x + h * v);
      const Vector<Out> minus = op.forward(x - h * v);
      if (!plus.allFinite() || !minus.allFinite()) {
        throw NumericalError("adjoint_check: non-finite forward output for '" + op.name() +
                             "' at trial " + std::to_string(t));
      }
      jv = (plus - minus) / (2.0 * h);
    }
    const RealVector g = op.vjp(x, r);
    if (!g.allFinite()) {
      throw NumericalError("adjoint_check: non-finite vjp for '" + op.name() + "' at trial " +
                           std::to_string(t));
    }
    const double lhs = real_inner(jv, r);
    const double rhs = v.dot(g);
    const double defect = std::abs(lhs - rhs) / (jv.norm() * r.norm() + options.epsilon);
    worst = std::max(worst, defect);
  }
  return worst;
}

}  // namespace nlb
