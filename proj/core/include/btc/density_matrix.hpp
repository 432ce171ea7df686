#pragma once

#include "btc/spin_core.hpp"
#include "btc/types.hpp"

namespace btc {

struct DensityTolerances {
  double hermiticity = 1e-10;
  double trace = 1e-9;
  double min_eigenvalue = -1e-8;
};

// Hermitian, unit-trace matrix. Construction checks Hermiticity and trace;
// positivity is checked on demand because it needs an eigen-solve.
class DensityMatrix {
 public:
  DensityMatrix() = default;
  explicit DensityMatrix(Matrix elements, const DensityTolerances& tol = {});

  static DensityMatrix from_pure(const PureState& psi);
  static DensityMatrix maximally_mixed(int dim);
  // Skips validation; for intermediate states whose checks are done by the caller.
  static DensityMatrix unchecked(Matrix elements);

  const Matrix& matrix() const { return rho_; }
  int dim() const { return static_cast<int>(rho_.rows()); }

  double trace_deviation() const;
  double hermiticity_error() const;
  double min_eigenvalue() const;
  double purity() const;

  // Throws InvariantViolation (at time t) if any check, positivity included, fails.
  void verify(const DensityTolerances& tol = {}, double t = 0.0) const;

 private:
  Matrix rho_;
};

}  // namespace btc
