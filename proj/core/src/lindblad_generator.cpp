#include "btc/lindblad_generator.hpp"

#include <algorithm>
#include <set>

#include "btc/errors.hpp"

namespace btc {

namespace {

// Plain complex product. std::complex operator* may route through the Annex G
// helpers (__muldc3 / __mulxc3), which block vectorization.
template <class T>
inline std::complex<T> mul(const std::complex<T>& a, const std::complex<T>& b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

inline int row_begin(int p) { return std::max(0, -p); }
inline int row_end(int d, int p) { return std::min(d, d - p); }

}  // namespace

std::vector<int> occupied_offsets(const Matrix& dense, double drop_tol) {
  const int d = static_cast<int>(dense.rows());
  std::vector<int> offsets;
  for (int p = -(d - 1); p <= d - 1; ++p) {
    for (int i = row_begin(p); i < row_end(d, p); ++i) {
      if (std::abs(dense(i, i + p)) > drop_tol) {
        offsets.push_back(p);
        break;
      }
    }
  }
  return offsets;
}

template <class Real>
BandedMatrix<Real> BandedMatrix<Real>::from_dense(const Matrix& dense, const std::vector<int>& offsets) {
  if (dense.rows() != dense.cols()) throw DimensionMismatch("BandedMatrix: matrix must be square");
  BandedMatrix b;
  b.dim = static_cast<int>(dense.rows());
  b.offsets = offsets;
  for (int p : offsets) {
    std::vector<Scalar> diag(b.dim, Scalar(0));
    for (int i = row_begin(p); i < row_end(b.dim, p); ++i) diag[i] = Scalar(dense(i, i + p));
    b.diags.push_back(std::move(diag));
  }
  return b;
}

template <class Real>
BandedMatrix<Real> BandedMatrix<Real>::from_dense(const Matrix& dense) {
  return from_dense(dense, occupied_offsets(dense));
}

template <class Real>
ComplexMatrix<Real> BandedMatrix<Real>::to_dense() const {
  ComplexMatrix<Real> m = ComplexMatrix<Real>::Zero(dim, dim);
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    const int p = offsets[k];
    for (int i = row_begin(p); i < row_end(dim, p); ++i) m(i, i + p) = diags[k][i];
  }
  return m;
}

template <class Real>
LindbladGenerator<Real>::LindbladGenerator(const Matrix& H, const Matrix& L, const Matrix& drive)
    : dim_(static_cast<int>(H.rows())), has_drive_(drive.size() != 0) {
  if (H.rows() != H.cols() || L.rows() != H.rows() || L.cols() != H.cols()) {
    throw DimensionMismatch("LindbladGenerator: H and L must be square with equal size");
  }
  if (has_drive_ && (drive.rows() != H.rows() || drive.cols() != H.cols())) {
    throw DimensionMismatch("LindbladGenerator: drive has wrong size");
  }
  const cplx minus_i(0.0, -1.0);
  const Matrix K = minus_i * H - 0.5 * (L.adjoint() * L);
  std::set<int> offs;
  for (int p : occupied_offsets(K)) offs.insert(p);
  Matrix KG;
  if (has_drive_) {
    KG = minus_i * drive;
    for (int p : occupied_offsets(KG)) offs.insert(p);
  }
  const std::vector<int> offsets(offs.begin(), offs.end());
  k0_ = BandedMatrix<Real>::from_dense(K, offsets);
  if (has_drive_) kdrive_ = BandedMatrix<Real>::from_dense(KG, offsets);
  jump_ = BandedMatrix<Real>::from_dense(L);
}

template <class Real>
void LindbladGenerator<Real>::apply(const State& rho, Real drive_coeff, State& out) const {
  const int d = dim_;
  if (rho.rows() != d || rho.cols() != d) throw DimensionMismatch("LindbladGenerator::apply: bad state size");
  out.setZero(d, d);

  const Scalar* r = rho.data();
  Scalar* o = out.data();
  const auto col = [d](auto* base, int j) { return base + static_cast<std::ptrdiff_t>(j) * d; };

  // K rho + rho K^dag. Both products are formed explicitly rather than as
  // X + X^dag: the shortcut is only valid for exactly Hermitian rho, and its
  // error on the anti-Hermitian rounding residue grows exponentially.
  std::vector<Scalar> kdiag(d);
  for (std::size_t k = 0; k < k0_.offsets.size(); ++k) {
    const int p = k0_.offsets[k];
    const int ib = row_begin(p), ie = row_end(d, p);
    const Scalar* kv = k0_.diags[k].data();
    if (has_drive_ && drive_coeff != Real(0)) {
      for (int i = ib; i < ie; ++i) kdiag[i] = k0_.diags[k][i] + drive_coeff * kdrive_.diags[k][i];
      kv = kdiag.data();
    }
    // (K rho)(i, j) += K(i, i+p) rho(i+p, j)
    for (int j = 0; j < d; ++j) {
      const Scalar* rc = col(r, j) + p;
      Scalar* oc = col(o, j);
      for (int i = ib; i < ie; ++i) oc[i] += mul(kv[i], rc[i]);
    }
    // (rho K^dag)(i, j) += rho(i, j+p) conj(K(j, j+p))
    for (int j = ib; j < ie; ++j) {
      const Scalar c = std::conj(kv[j]);
      const Scalar* rc = col(r, j + p);
      Scalar* oc = col(o, j);
      for (int i = 0; i < d; ++i) oc[i] += mul(rc[i], c);
    }
  }

  // (L rho L^dag)(i, j) = sum_{p,q} L(i, i+p) rho(i+p, j+q) conj(L(j, j+q))
  std::vector<Scalar> buf(d);
  for (std::size_t kq = 0; kq < jump_.offsets.size(); ++kq) {
    const int q = jump_.offsets[kq];
    for (int j = row_begin(q); j < row_end(d, q); ++j) {
      const Scalar cj = std::conj(jump_.diags[kq][j]);
      if (cj == Scalar(0)) continue;
      const Scalar* rc = col(r, j + q);
      for (int i = 0; i < d; ++i) buf[i] = mul(rc[i], cj);
      Scalar* oc = col(o, j);
      for (std::size_t kp = 0; kp < jump_.offsets.size(); ++kp) {
        const int p = jump_.offsets[kp];
        const Scalar* lv = jump_.diags[kp].data();
        for (int i = row_begin(p); i < row_end(d, p); ++i) oc[i] += mul(lv[i], buf[i + p]);
      }
    }
  }
}

template struct BandedMatrix<double>;
template struct BandedMatrix<xreal>;
template class LindbladGenerator<double>;
template class LindbladGenerator<xreal>;

}  // namespace btc
