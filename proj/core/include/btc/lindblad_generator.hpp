#pragma once

#include <complex>
#include <vector>

#include "btc/types.hpp"

namespace btc {

template <class Real>
using ComplexMatrix = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;

// Matrix stored by its occupied diagonals. offsets[k] = p means the entries
// (i, i + p) are stored in diags[k][i].
template <class Real>
struct BandedMatrix {
  using Scalar = std::complex<Real>;

  int dim = 0;
  std::vector<int> offsets;
  std::vector<std::vector<Scalar>> diags;

  static BandedMatrix from_dense(const Matrix& dense, const std::vector<int>& offsets);
  static BandedMatrix from_dense(const Matrix& dense);

  ComplexMatrix<Real> to_dense() const;
};

// Diagonals holding any entry with modulus above drop_tol.
std::vector<int> occupied_offsets(const Matrix& dense, double drop_tol = 0.0);

// Right-hand side of the Lindblad equation,
//   d rho/dt = K rho + rho K^dag + L rho L^dag,  K = -i (H + c G) - L^dag L / 2,
// where G is an optional drive direction with time-dependent coefficient c.
// H and L of the collective-spin model are banded in the |S, m> basis, so one
// application costs O(bandwidth * d^2) instead of the O(d^3) of dense products.
template <class Real>
class LindbladGenerator {
 public:
  using Scalar = std::complex<Real>;
  using State = ComplexMatrix<Real>;

  LindbladGenerator(const Matrix& H, const Matrix& L, const Matrix& drive = Matrix());

  int dim() const { return dim_; }
  bool has_drive() const { return has_drive_; }

  // out = rhs(rho); out must not alias rho.
  void apply(const State& rho, Real drive_coeff, State& out) const;

 private:
  int dim_ = 0;
  bool has_drive_ = false;
  BandedMatrix<Real> k0_;      // -i H - L^dag L / 2
  BandedMatrix<Real> kdrive_;  // -i G on the offsets of k0_
  BandedMatrix<Real> jump_;
};

extern template struct BandedMatrix<double>;
extern template struct BandedMatrix<xreal>;
extern template class LindbladGenerator<double>;
extern template class LindbladGenerator<xreal>;

}  // namespace btc
