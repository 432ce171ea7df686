#include "btc/spin_core.hpp"

#include <algorithm>
#include <cmath>

#include "btc/errors.hpp"

namespace btc {

void SpinModelParams::validate() const {
  if (N < 1) throw ConfigError("N must be >= 1, got " + std::to_string(N));
  if (!(kappa >= 0.0)) throw ConfigError("kappa must be >= 0");
  if (!std::isfinite(omega0) || !std::isfinite(omega_x) || !std::isfinite(omega_z) ||
      !std::isfinite(kappa)) {
    throw ConfigError("model couplings must be finite");
  }
}

RampParameter parse_ramp_parameter(const std::string& name) {
  if (name == "omega0") return RampParameter::omega0;
  if (name == "omega_x") return RampParameter::omega_x;
  if (name == "omega_z") return RampParameter::omega_z;
  throw ConfigError("unknown ramp parameter '" + name + "' (expected omega0, omega_x or omega_z)");
}

std::string to_string(RampParameter p) {
  switch (p) {
    case RampParameter::omega0: return "omega0";
    case RampParameter::omega_x: return "omega_x";
    case RampParameter::omega_z: return "omega_z";
  }
  return "?";
}

double get(const SpinModelParams& params, RampParameter p) {
  switch (p) {
    case RampParameter::omega0: return params.omega0;
    case RampParameter::omega_x: return params.omega_x;
    case RampParameter::omega_z: return params.omega_z;
  }
  return 0.0;
}

SpinModelParams with(SpinModelParams params, RampParameter p, double value) {
  switch (p) {
    case RampParameter::omega0: params.omega0 = value; break;
    case RampParameter::omega_x: params.omega_x = value; break;
    case RampParameter::omega_z: params.omega_z = value; break;
  }
  return params;
}

OperatorSet build_spin_operators(int N) {
  if (N < 1) throw ConfigError("build_spin_operators: N must be >= 1");
  const int d = N + 1;
  const double S = 0.5 * N;

  OperatorSet ops;
  ops.dim = d;
  ops.Sz = Matrix::Zero(d, d);
  ops.Sminus = Matrix::Zero(d, d);
  for (int k = 0; k < d; ++k) {
    const double m = S - k;
    ops.Sz(k, k) = m;
    // <S, m-1| S- |S, m>
    if (k + 1 < d) ops.Sminus(k + 1, k) = std::sqrt(S * (S + 1.0) - m * (m - 1.0));
  }
  ops.Splus = ops.Sminus.adjoint();
  ops.Sx = 0.5 * (ops.Splus + ops.Sminus);
  ops.Sy = (ops.Splus - ops.Sminus) / cplx(0.0, 2.0);
  return ops;
}

namespace {

void check_dim(const SpinModelParams& params, const OperatorSet& ops, const char* where) {
  if (params.dim() != ops.dim || ops.Sx.rows() != ops.dim) {
    throw DimensionMismatch(std::string(where) + ": operators built for dim " +
                            std::to_string(ops.dim) + ", params need " +
                            std::to_string(params.dim()));
  }
}

}  // namespace

Matrix build_hamiltonian(const SpinModelParams& params, const OperatorSet& ops) {
  check_dim(params, ops, "build_hamiltonian");
  const double S = params.spin();
  Matrix H = params.omega0 * ops.Sx + (params.omega_x / S) * (ops.Sx * ops.Sx) +
             (params.omega_z / S) * (ops.Sz * ops.Sz);
  // symmetrized so that H == H^dagger bit for bit
  Matrix Hs = 0.5 * (H + H.adjoint());
  return Hs;
}

Matrix build_jump(const SpinModelParams& params, const OperatorSet& ops) {
  check_dim(params, ops, "build_jump");
  if (params.kappa < 0.0) throw ConfigError("build_jump: kappa must be >= 0");
  return std::sqrt(params.kappa / params.spin()) * ops.Sminus;
}

Matrix hamiltonian_derivative(RampParameter p, const OperatorSet& ops) {
  const double S = ops.spin();
  switch (p) {
    case RampParameter::omega0: return ops.Sx;
    case RampParameter::omega_x: {
      Matrix G = (ops.Sx * ops.Sx) / S;
      return 0.5 * (G + G.adjoint());
    }
    case RampParameter::omega_z: return (ops.Sz * ops.Sz) / S;
  }
  return {};
}

OperatorSet build_model(const SpinModelParams& params) {
  params.validate();
  OperatorSet ops = build_spin_operators(params.N);
  ops.H = build_hamiltonian(params, ops);
  ops.L = build_jump(params, ops);
  return ops;
}

namespace {

void fix_phase(Vector& v) {
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  const cplx c = v(imax);
  if (std::abs(c) > 0.0) v *= std::conj(c) / std::abs(c);
  v(imax) = cplx(v(imax).real(), 0.0);
}

}  // namespace

PureState ground_state(const Matrix& H, double tiebreak_tol, TieBreak rule) {
  if (H.rows() != H.cols() || H.rows() == 0) throw DimensionMismatch("ground_state: H must be square");
  if (hermiticity_error(H) > 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff())) {
    throw NumericalError("ground_state: H is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("ground_state: eigen-decomposition failed");

  const auto& evals = es.eigenvalues();
  const Eigen::Index d = H.rows();
  Eigen::Index degeneracy = 1;
  while (degeneracy < d && evals(degeneracy) - evals(0) < tiebreak_tol) ++degeneracy;

  Vector v;
  if (degeneracy == 1) {
    v = es.eigenvectors().col(0);
  } else {
    // Sz = diag(S, S-1, ..., -S) in the shared basis convention.
    const double S = 0.5 * static_cast<double>(d - 1);
    RealVector sz(d);
    for (Eigen::Index k = 0; k < d; ++k) sz(k) = S - static_cast<double>(k);
    const Matrix P = es.eigenvectors().leftCols(degeneracy);
    const Matrix projected = P.adjoint() * sz.cast<cplx>().asDiagonal() * P;
    Eigen::SelfAdjointEigenSolver<Matrix> inner(0.5 * (projected + projected.adjoint()));
    if (inner.info() != Eigen::Success) throw NumericalError("ground_state: tie-break failed");
    const Eigen::Index pick = rule == TieBreak::max_sz ? degeneracy - 1 : 0;
    v = P * inner.eigenvectors().col(pick);
  }
  v.normalize();
  fix_phase(v);
  return PureState{std::move(v)};
}

}  // namespace btc
