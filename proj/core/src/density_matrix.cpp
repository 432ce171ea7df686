#include "btc/density_matrix.hpp"

#include "btc/errors.hpp"

namespace btc {

DensityMatrix::DensityMatrix(Matrix elements, const DensityTolerances& tol) : rho_(std::move(elements)) {
  if (rho_.rows() != rho_.cols() || rho_.rows() == 0) {
    throw DimensionMismatch("DensityMatrix: matrix must be square and non-empty");
  }
  if (hermiticity_error() > tol.hermiticity) {
    throw InvariantViolation("DensityMatrix: not Hermitian (err " + std::to_string(hermiticity_error()) + ")", 0.0);
  }
  if (trace_deviation() > tol.trace) {
    throw InvariantViolation("DensityMatrix: trace deviates from 1 by " + std::to_string(trace_deviation()), 0.0);
  }
}

DensityMatrix DensityMatrix::from_pure(const PureState& psi) {
  return DensityMatrix(psi.amplitudes * psi.amplitudes.adjoint());
}

DensityMatrix DensityMatrix::maximally_mixed(int dim) {
  return DensityMatrix(Matrix::Identity(dim, dim) / static_cast<double>(dim));
}

DensityMatrix DensityMatrix::unchecked(Matrix elements) {
  DensityMatrix rho;
  rho.rho_ = std::move(elements);
  return rho;
}

double DensityMatrix::trace_deviation() const { return std::abs(rho_.trace() - cplx(1.0, 0.0)); }

double DensityMatrix::hermiticity_error() const { return btc::hermiticity_error(rho_); }

double DensityMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho_, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("DensityMatrix: eigen-solver failed");
  return es.eigenvalues()(0);
}

double DensityMatrix::purity() const { return (rho_ * rho_).trace().real(); }

void DensityMatrix::verify(const DensityTolerances& tol, double t) const {
  if (hermiticity_error() > tol.hermiticity) {
    throw InvariantViolation("Hermiticity error " + std::to_string(hermiticity_error()), t);
  }
  if (trace_deviation() > tol.trace) {
    throw InvariantViolation("trace drift " + std::to_string(trace_deviation()), t);
  }
  const double lmin = min_eigenvalue();
  if (lmin < tol.min_eigenvalue) {
    throw InvariantViolation("negative eigenvalue " + std::to_string(lmin), t);
  }
}

}  // namespace btc
