#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "btc/density_matrix.hpp"
#include "btc/lindblad_generator.hpp"
#include "btc/spin_core.hpp"
#include "btc/types.hpp"

namespace btc {

inline constexpr double kDefaultDt = 1e-3;
inline constexpr int kDefaultLiouvillianMaxDim = 64;

enum class Protocol { quench, ramp, unitary };
std::string to_string(Protocol p);

// Arithmetic used for the RK4 state. binary64 is the default; extended uses
// long double (64-bit mantissa on x86) at roughly 10x the cost and pushes the
// rounding floor of the echo from ~1e-17 down to ~1e-20.
enum class Precision { binary64, extended };
std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

struct EvolutionOptions {
  double dt = kDefaultDt;
  // Full snapshots are kept every sample_stride steps; observers see every step.
  std::size_t sample_stride = 100;
  // Trace and Hermiticity are checked every check_stride steps and at the end.
  std::size_t check_stride = 10;
  // A check exceeding this aborts with InvariantViolation.
  double abort_tol = 1e-7;
  // Smallest eigenvalue is checked every positivity_stride steps (0: only at
  // the start and end); below min_eigenvalue_tol aborts.
  std::size_t positivity_stride = 1000;
  double min_eigenvalue_tol = -1e-8;
  Precision precision = Precision::binary64;
};

// Read-only view of the integrator state, whatever its precision.
class StateView {
 public:
  explicit StateView(const Matrix& m) : standard_(&m) {}
  explicit StateView(const XMatrix& m) : extended_(&m) {}

  int dim() const;
  bool is_extended() const { return extended_ != nullptr; }
  Matrix to_matrix() const;
  XMatrix to_extended_matrix() const;

  // <psi| rho |psi>, accumulated in the state's precision (or better).
  xreal overlap(const XVector& psi) const;
  // sum_k w_k rho_kk
  xreal weighted_diagonal(const std::vector<xreal>& weights) const;

 private:
  const Matrix* standard_ = nullptr;
  const XMatrix* extended_ = nullptr;
};

// Called at step 0 and after every step. Returning false stops the integration.
using StepObserver = std::function<bool(std::size_t step, double t, const StateView& rho)>;

struct Trajectory {
  Protocol protocol = Protocol::quench;
  SpinModelParams params;
  double dt = kDefaultDt;
  std::size_t sample_stride = 1;
  std::vector<double> times;
  std::vector<DensityMatrix> states;
  DensityMatrix final_state;
  double final_time = 0.0;
  std::size_t steps_taken = 0;
  bool stopped_early = false;
  double max_trace_drift = 0.0;
  double max_hermiticity_error = 0.0;
  // Over the positivity checks.
  double min_eigenvalue = 1.0;
};

struct RampSchedule {
  RampParameter parameter = RampParameter::omega0;
  double lambda_i = 0.0;
  double lambda_f = 0.0;
  double tau = 1.0;

  // lambda_i + (lambda_f - lambda_i) t / tau, clamped to [0, tau]
  double at(double t) const;
  void validate() const;
};

// Dense reference: -i[H, rho] + L rho L^dag - {L^dag L, rho}/2.
Matrix lindblad_rhs(const Matrix& rho, const Matrix& H, const Matrix& L);
Matrix lindblad_rhs(const DensityMatrix& rho, const Matrix& H, const Matrix& L);

// Classical fixed-step RK4 with a time-independent generator.
Trajectory evolve_lindblad(const DensityMatrix& rho0, const Matrix& H, const Matrix& L, double t_end,
                           const EvolutionOptions& options = {}, const StepObserver& observer = {});

// Evolution under H(params_final) and L(params_final).
Trajectory evolve_quench(const DensityMatrix& rho0, const SpinModelParams& params_final, double t_end,
                         const EvolutionOptions& options = {}, const StepObserver& observer = {});

// Dissipative linear ramp of one coupling over [0, tau]. The Hamiltonian is
// evaluated at the RK4 substage times. Returns rho(tau).
DensityMatrix evolve_ramp(const DensityMatrix& rho0, const SpinModelParams& params_base,
                          const RampSchedule& schedule, double dt = kDefaultDt);
Trajectory evolve_ramp_trajectory(const DensityMatrix& rho0, const SpinModelParams& params_base,
                                  const RampSchedule& schedule, const EvolutionOptions& options = {},
                                  const StepObserver& observer = {});

// Exact closed-system propagation from one eigen-decomposition of H,
// rho(t) = U e^{-i Lambda t} U^dag rho0 U e^{i Lambda t} U^dag.
class UnitaryPropagator {
 public:
  explicit UnitaryPropagator(const Matrix& H);

  int dim() const { return static_cast<int>(energies_.size()); }
  const RealVector& energies() const { return energies_; }
  const Matrix& eigenvectors() const { return vectors_; }

  Matrix to_eigenbasis(const Matrix& op) const { return vectors_.adjoint() * op * vectors_; }
  Matrix from_eigenbasis(const Matrix& op) const { return vectors_ * op * vectors_.adjoint(); }

  // rho(t) in the eigenbasis from rho(0) in the eigenbasis; O(d^2).
  Matrix evolve_in_eigenbasis(const Matrix& rho0_eig, double t) const;
  Matrix evolve(const Matrix& rho0, double t) const;

 private:
  RealVector energies_;
  Matrix vectors_;
};

Trajectory evolve_unitary(const DensityMatrix& rho0, const Matrix& H, double t_end,
                          const EvolutionOptions& options = {}, const StepObserver& observer = {});

// Column-stacking superoperator: vec(L[rho]) = M vec(rho).
Matrix liouvillian_matrix(const Matrix& H, const Matrix& L, int max_dim = kDefaultLiouvillianMaxDim);

// Eigenvalues sorted by real part descending, then imaginary part ascending.
std::vector<cplx> liouvillian_spectrum(const Matrix& M);

Vector vectorize(const Matrix& rho);
Matrix unvectorize(const Vector& v, int dim);

double expectation(const DensityMatrix& rho, const Matrix& A);

// Text dump of the stored snapshots: per record a line "t <time> <dim>" and then
// dim rows of "re im" pairs, row-major, 17 significant digits.
struct Snapshot {
  double t = 0.0;
  Matrix rho;
};
void write_trajectory_dump(std::ostream& os, const Trajectory& traj);
std::vector<Snapshot> read_trajectory_dump(std::istream& is);

}  // namespace btc
