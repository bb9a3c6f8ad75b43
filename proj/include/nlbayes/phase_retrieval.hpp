#pragma once

#include <cstdint>
#include <memory>

#include "nlbayes/operator.hpp"

namespace nlb {

/// Dense M x K matrix of i.i.d. circular complex Gaussian entries, reproducible
/// from (m, k, variance, seed).
class SensingMatrix {
 public:
  SensingMatrix(Index m, Index k, double variance, std::uint64_t seed, ComplexMatrix entries)
      : m_(m), k_(k), variance_(variance), seed_(seed), entries_(std::move(entries)) {}

  [[nodiscard]] Index m() const { return m_; }
  [[nodiscard]] Index k() const { return k_; }
  [[nodiscard]] double variance() const { return variance_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const ComplexMatrix& entries() const { return entries_; }

 private:
  Index m_;
  Index k_;
  double variance_;
  std::uint64_t seed_;
  ComplexMatrix entries_;
};

/// Real and imaginary parts drawn independently from N(0, variance / 2).
SensingMatrix make_sensing_matrix(Index m, Index k, double variance, std::uint64_t seed);

/// Wraps explicit entries (unit tests, externally supplied matrices).
SensingMatrix sensing_matrix_from_entries(ComplexMatrix entries);

namespace detail {
inline void check_pr_input(const SensingMatrix& a, Index len) {
  if (len != a.k()) {
    throw ConfigError("phase retrieval: signal length " + std::to_string(len) +
                      " does not match sensing matrix columns " + std::to_string(a.k()));
  }
}
}  // namespace detail

/// y0 = |A s|^2, entrywise.
template <typename Derived>
RealVector pr_forward(const SensingMatrix& a, const Eigen::MatrixBase<Derived>& s) {
  detail::check_pr_input(a, s.size());
  return (a.entries() * s.template cast<Complex>()).cwiseAbs2();
}

/// J^T r with J_{mk} = 2 Re(conj((As)_m) A_{mk}), i.e. 2 Re(A^H ((As) .* r)).
template <typename DerivedS, typename DerivedR>
RealVector pr_vjp(const SensingMatrix& a, const Eigen::MatrixBase<DerivedS>& s,
                  const Eigen::MatrixBase<DerivedR>& r) {
  detail::check_pr_input(a, s.size());
  if (r.size() != a.m()) {
    throw ConfigError("phase retrieval: cotangent length " + std::to_string(r.size()) +
                      " does not match measurement count " + std::to_string(a.m()));
  }
  const ComplexVector field = a.entries() * s.template cast<Complex>();
  const ComplexVector weighted = field.cwiseProduct(r.template cast<Complex>());
  return 2.0 * (a.entries().adjoint() * weighted).real();
}

/// H_pr as a differentiable operator. Holds the matrix by shared pointer so
/// copies of the operator share one allocation.
class PhaseRetrievalOp final : public DifferentiableOp<double> {
 public:
  explicit PhaseRetrievalOp(std::shared_ptr<const SensingMatrix> matrix)
      : matrix_(std::move(matrix)) {}

  Index in_dim() const override { return matrix_->k(); }
  Index out_dim() const override { return matrix_->m(); }
  std::string name() const override { return "phase_retrieval"; }

  RealVector forward(const RealVector& x) const override { return pr_forward(*matrix_, x); }
  RealVector vjp(const RealVector& x, const RealVector& r) const override {
    return pr_vjp(*matrix_, x, r);
  }
  Linearization<double> linearize(const RealVector& x) const override;

  const SensingMatrix& matrix() const { return *matrix_; }

 private:
  std::shared_ptr<const SensingMatrix> matrix_;
};

}  // namespace nlb
