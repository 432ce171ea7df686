#pragma once

#include <complex>

#include <Eigen/Dense>

namespace btc {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

// Extended precision used by the integrators. The echo is tracked down to
// ~1e-15 on top of O(1) matrix elements, which double rounding cannot resolve.
using xreal = long double;
using xcplx = std::complex<xreal>;
using XMatrix = Eigen::Matrix<xcplx, Eigen::Dynamic, Eigen::Dynamic>;
using XVector = Eigen::Matrix<xcplx, Eigen::Dynamic, 1>;

inline XMatrix to_extended(const Matrix& m) { return m.cast<xcplx>(); }
inline XVector to_extended(const Vector& v) { return v.cast<xcplx>(); }
inline Matrix to_double(const XMatrix& m) { return m.cast<cplx>(); }

// Largest elementwise modulus of a - b.
template <class Derived1, class Derived2>
double max_abs_diff(const Eigen::MatrixBase<Derived1>& a, const Eigen::MatrixBase<Derived2>& b) {
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a - b).cwiseAbs().maxCoeff());
}

template <class Derived>
double hermiticity_error(const Eigen::MatrixBase<Derived>& m) {
  return max_abs_diff(m, m.adjoint());
}

}  // namespace btc
