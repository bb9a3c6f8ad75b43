#pragma once

#include <complex>
#include <cstdint>

#include <Eigen/Dense>

namespace nlb {

using Index = Eigen::Index;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Complex = std::complex<double>;
using RealVector = Vector<double>;
using ComplexVector = Vector<Complex>;
using RealMatrix = Matrix<double>;
using ComplexMatrix = Matrix<Complex>;

// Real inner product Re(a^H b); reduces to a.dot(b) for real vectors.
template <typename DerivedA, typename DerivedB>
double real_inner(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return std::real(a.dot(b));
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
  return v.allFinite();
}

/// Image layout for flat row-major vectors.
struct ImageShape {
  Index height = 0;
  Index width = 0;

  [[nodiscard]] Index size() const { return height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

}  // namespace nlb
