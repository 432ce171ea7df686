#pragma once

#include <string>

#include "btc/types.hpp"

namespace btc {

// Dimensionless couplings of the collective-spin model in units of K = 1:
//   H = omega0 Sx + (omega_x / S) Sx^2 + (omega_z / S) Sz^2
//   L = sqrt(kappa / S) S-
struct SpinModelParams {
  int N = 1;
  double omega0 = 0.0;
  double omega_x = 0.0;
  double omega_z = 0.0;
  double kappa = 0.0;

  double spin() const { return 0.5 * N; }
  int dim() const { return N + 1; }

  // Throws ConfigError unless N >= 1 and kappa >= 0.
  void validate() const;
};

enum class RampParameter { omega0, omega_x, omega_z };

RampParameter parse_ramp_parameter(const std::string& name);
std::string to_string(RampParameter p);

double get(const SpinModelParams& params, RampParameter p);
SpinModelParams with(SpinModelParams params, RampParameter p, double value);

// Operators of the symmetric (S = N/2) sector. Basis |S, m> with m running
// from +S (index 0) down to -S (index N). H and L are empty until a model is
// attached with build_model.
struct OperatorSet {
  int dim = 0;
  Matrix Sx, Sy, Sz, Splus, Sminus;
  Matrix H, L;

  double spin() const { return 0.5 * (dim - 1); }
  bool has_model() const { return H.size() != 0; }
};

struct PureState {
  Vector amplitudes;

  int dim() const { return static_cast<int>(amplitudes.size()); }
};

OperatorSet build_spin_operators(int N);

Matrix build_hamiltonian(const SpinModelParams& params, const OperatorSet& ops);

Matrix build_jump(const SpinModelParams& params, const OperatorSet& ops);

// Derivative dH/dlambda for the chosen coupling; H is linear in each of them.
Matrix hamiltonian_derivative(RampParameter p, const OperatorSet& ops);

// Spin operators plus H and L for the given parameters.
OperatorSet build_model(const SpinModelParams& params);

// Which member of a degenerate ground manifold to return. MaxSz picks the
// fully polarized |S, +S> when omega0 = 0 and omega_z < 0.
enum class TieBreak { max_sz, min_sz };

inline constexpr double kDefaultTiebreakTol = 1e-10;

// Normalized eigenvector of the lowest eigenvalue of H. When the lowest
// eigenvalues are degenerate within tiebreak_tol, Sz is diagonalized inside the
// degenerate subspace and the extremal-<Sz> vector is returned. The global
// phase makes the largest-modulus component real and positive.
PureState ground_state(const Matrix& H, double tiebreak_tol = kDefaultTiebreakTol,
                       TieBreak rule = TieBreak::max_sz);

}  // namespace btc
