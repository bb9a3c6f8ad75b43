#include "nlbayes/phase_retrieval.hpp"

#include <cmath>
#include <random>

namespace nlb {

SensingMatrix make_sensing_matrix(Index m, Index k, double variance, std::uint64_t seed) {
  if (m < 1 || k < 1) {
    throw ConfigError("make_sensing_matrix: dimensions must be positive (m=" + std::to_string(m) +
                      ", k=" + std::to_string(k) + ")");
  }
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw ConfigError("make_sensing_matrix: variance must be positive and finite");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(variance / 2.0));
  ComplexMatrix entries(m, k);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < k; ++j) {
      const double re = normal(rng);
      const double im = normal(rng);
      entries(i, j) = Complex(re, im);
    }
  }
  return {m, k, variance, seed, std::move(entries)};
}

SensingMatrix sensing_matrix_from_entries(ComplexMatrix entries) {
  if (entries.rows() < 1 || entries.cols() < 1) {
    throw ConfigError("sensing_matrix_from_entries: empty matrix");
  }
  const Index m = entries.rows();
  const Index k = entries.cols();
  const double variance = entries.cwiseAbs2().mean();
  return {m, k, variance, 0, std::move(entries)};
}

Linearization<double> PhaseRetrievalOp::linearize(const RealVector& x) const {
  detail::check_pr_input(*matrix_, x.size());
  ComplexVector field = matrix_->entries() * x.cast<Complex>();
  RealVector value = field.cwiseAbs2();
  return {std::move(value), [m = matrix_, field = std::move(field)](const RealVector& r) {
            if (r.size() != m->m()) throw ConfigError("phase retrieval: cotangent length mismatch");
            return RealVector(2.0 * (m->entries().adjoint() * field.cwiseProduct(r.cast<Complex>())).real());
          }};
}

}  // namespace nlb
