#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "btc/density_matrix.hpp"
#include "btc/lindblad.hpp"
#include "btc/spin_core.hpp"
#include "btc/types.hpp"

namespace btc {

inline constexpr double kQuenchEpsilon = 1e-15;
inline constexpr double kRampEpsilon = 1e-13;

// Overshoot above 1 (or below 0) tolerated before values are clamped.
inline constexpr double kFidelityOvershootTol = 1e-10;

// Principal square root of a Hermitian PSD matrix; eigenvalues below zero are
// clamped to zero first.
Matrix psd_sqrt(const Matrix& A);
XMatrix psd_sqrt(const XMatrix& A);

// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations, ascending.
// Slower than the tridiagonal solver but accurate to small relative error for
// graded matrices such as D^1/2 C D^1/2.
RealVector jacobi_eigenvalues(Matrix B);

// Fidelities above this value are re-evaluated with jacobi_eigenvalues.
inline constexpr double kJacobiRefineAbove = 0.5;

// Spectral data of rho for repeated F(rho, sigma) evaluations. Eigenvalues of
// rho at or below dim * machine epsilon * max eigenvalue are treated as zero.
// sqrt(rho) sigma sqrt(rho) is diagonalized in the eigenbasis of rho.
class FidelityReference {
 public:
  FidelityReference() = default;
  explicit FidelityReference(const Matrix& rho);

  int dim() const { return static_cast<int>(root_.size()); }
  // Eigenvalues of rho kept above the d * eps * max floor.
  int rank() const { return static_cast<int>((root_.array() > 0.0).count()); }
  // Unclamped (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
  double raw(const Matrix& sigma) const;
  // Same, checked against the overshoot tolerance and clamped to [0, 1].
  double operator()(const Matrix& sigma) const;

 private:
  RealVector root_;
  Matrix vectors_;
};

// F(rho, sigma) = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2, clamped to [0, 1].
// The argument of lower numerical rank is used as the reference, so the
// result does not depend on argument order.
double uhlmann_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma);

// <psi| rho |psi>
double pure_overlap(const PureState& psi, const DensityMatrix& rho);
xreal pure_overlap(const XVector& psi, const XMatrix& rho);

// Raw echo checked against [0, 1] within kFidelityOvershootTol, then clamped.
double clamp_echo(double raw_echo);

// -(1/N) ln(echo) when echo > epsilon, otherwise nullopt (divergent).
std::optional<double> rate_function(double echo, int N, double epsilon);

struct EchoSeries {
  int N = 1;
  double epsilon = kQuenchEpsilon;
  std::vector<double> times;
  std::vector<double> echo;
  std::vector<std::optional<double>> rate;
  std::vector<double> sz;  // <Sz>/N when tracked; empty otherwise

  std::size_t size() const { return times.size(); }
  bool has_sz() const { return !sz.empty() && sz.size() == times.size(); }
  // Checks the raw echo against [0, 1] within the overshoot tolerance, clamps it
  // and appends the matching rate value.
  void push(double t, double raw_echo);
  void push(double t, double raw_echo, double sz_per_n);
};

// Samples [t_down, t_up) with echo <= epsilon. t_up is the first later sample
// back above epsilon; it is absent when the run reaches the end of the series,
// and in that case t_c is the onset t_down.
struct CriticalTime {
  double t_down = 0.0;
  std::optional<double> t_up;
  double t_c = 0.0;
  double epsilon = 0.0;
  int index = 1;

  bool open() const { return !t_up.has_value(); }
};

// Incremental version of detect_zeros for use while a trajectory is running.
class ZeroDetector {
 public:
  explicit ZeroDetector(double epsilon, std::size_t max_count = std::numeric_limits<std::size_t>::max());

  void push(double t, double echo);
  // Closes a run that is still below epsilon as an open record.
  void finish();

  // True once max_count closed records have been found.
  bool done() const { return records_.size() >= max_count_; }
  bool in_zero() const { return in_zero_; }
  const std::vector<CriticalTime>& records() const { return records_; }

 private:
  double epsilon_;
  std::size_t max_count_;
  bool in_zero_ = false;
  bool finished_ = false;
  double t_down_ = 0.0;
  std::vector<CriticalTime> records_;
};

std::vector<CriticalTime> detect_zeros(const EchoSeries& series, double epsilon,
                                       std::size_t max_count = std::numeric_limits<std::size_t>::max());

// Echo of a trajectory started from the pure state psi0, one value per stored
// snapshot. Requires snapshots at every step.
EchoSeries echo_series_quench(const PureState& psi0, const Trajectory& traj, double epsilon = kQuenchEpsilon);

// Mixed-state echo F(rho_tau, rho(tau + t')) over a post-ramp unitary trajectory.
EchoSeries echo_series_ramp(const DensityMatrix& rho_tau, const Trajectory& traj_unitary,
                            double epsilon = kRampEpsilon);

// Observer that fills an EchoSeries with <psi0|rho(t)|psi0> and <Sz>/N while
// a Lindblad trajectory runs, in the integrator's precision. Optionally stops
// the run `linger` time units after stop_after_zeros zero intervals closed.
class QuenchEchoRecorder {
 public:
  QuenchEchoRecorder(const PureState& psi0, int N, double epsilon, std::size_t echo_stride = 1,
                     std::size_t stop_after_zeros = 0, double linger = 0.0);

  StepObserver observer();

  const EchoSeries& series() const { return series_; }
  EchoSeries take_series() { return std::move(series_); }
  std::vector<CriticalTime> zeros() const;

 private:
  XVector psi_;
  std::vector<xreal> sz_diag_;
  std::size_t stride_;
  std::size_t stop_after_;
  double linger_;
  std::optional<double> stop_at_;
  EchoSeries series_;
  ZeroDetector detector_;
};

// Post-ramp echo without forming rho(tau + t') in the lab basis: everything is
// kept in the eigenbasis of the final Hamiltonian, where the unitary stage is
// diagonal. Matches echo_series_ramp up to rounding.
class RampEchoEvaluator {
 public:
  RampEchoEvaluator(const Matrix& rho_tau, const Matrix& H_final);

  double echo(double t) const;
  // <Sz>/N of rho(tau + t).
  double sz_per_n(double t) const;
  // Tr rho(tau + t)^2
  double purity(double t) const;

 private:
  UnitaryPropagator prop_;
  Matrix rho_eig_;
  FidelityReference ref_;
  Matrix sz_eig_;
  int N_;
};

}  // namespace btc
