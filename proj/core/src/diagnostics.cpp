#include "btc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "btc/errors.hpp"

namespace btc {

namespace {

constexpr double kHermitianInputTol = 1e-10;

template <class M>
M psd_sqrt_impl(const M& A) {
  using Real = typename Eigen::NumTraits<typename M::Scalar>::Real;
  Eigen::SelfAdjointEigenSolver<M> es(A);
  if (es.info() != Eigen::Success) throw NumericalError("psd_sqrt: eigen-solver failed");
  auto roots = es.eigenvalues().unaryExpr([](Real x) { return x > Real(0) ? std::sqrt(x) : Real(0); });
  const M V = es.eigenvectors();
  return V * roots.template cast<typename M::Scalar>().asDiagonal() * V.adjoint();
}

template <class Real>
Real clamp_unit(Real value, const char* what) {
  if (value > Real(1) + Real(kFidelityOvershootTol) || value < -Real(kFidelityOvershootTol) || !std::isfinite(value)) {
    throw NumericalError(std::string(what) + ": value " + std::to_string(static_cast<double>(value)) +
                         " outside [0, 1]");
  }
  return std::clamp(value, Real(0), Real(1));
}

// `floor` drops eigenvalues that are rounding noise of a zero eigenvalue.
double trace_sqrt_squared(const RealVector& mu, double floor = 0.0) {
  double tr = 0.0;
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    if (mu(k) > floor) tr += std::sqrt(mu(k));
  }
  return tr * tr;
}

template <class M>
void require_hermitian(const M& m, const char* what) {
  if (hermiticity_error(m) > kHermitianInputTol) throw NumericalError(std::string(what) + ": input is not Hermitian");
}

}  // namespace

Matrix psd_sqrt(const Matrix& A) { return psd_sqrt_impl(A); }
XMatrix psd_sqrt(const XMatrix& A) { return psd_sqrt_impl(A); }

RealVector jacobi_eigenvalues(Matrix B) {
  if (B.rows() != B.cols()) throw DimensionMismatch("jacobi_eigenvalues: matrix must be square");
  const Eigen::Index n = B.rows();
  const double eps = std::numeric_limits<double>::epsilon();
  cplx* b = B.data();
  for (int sweep = 0; sweep < 64; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const cplx bpq = b[p + q * n];
        const double a = std::abs(bpq);
        const double app = b[p + p * n].real();
        const double aqq = b[q + q * n].real();
        // relative threshold keeps small eigenvalues of graded matrices accurate
        if (a == 0.0 || a <= eps * std::sqrt(std::abs(app * aqq))) continue;
        rotated = true;
        const cplx phase = bpq / a;
        const double theta = (aqq - app) / (2.0 * a);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const cplx sp = t * c * phase;
        const cplx spc = std::conj(sp);
        cplx* cp = b + p * n;
        cplx* cq = b + q * n;
        for (Eigen::Index k = 0; k < n; ++k) {
          const cplx x = cp[k], y = cq[k];
          cp[k] = c * x - spc * y;
          cq[k] = sp * x + c * y;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const cplx x = b[p + k * n], y = b[q + k * n];
          b[p + k * n] = c * x - sp * y;
          b[q + k * n] = spc * x + c * y;
        }
        b[p + p * n] = app - t * a;
        b[q + q * n] = aqq + t * a;
        b[p + q * n] = b[q + p * n] = 0.0;
      }
    }
    if (!rotated) break;
  }
  RealVector ev(n);
  for (Eigen::Index i = 0; i < n; ++i) ev(i) = B(i, i).real();
  std::sort(ev.data(), ev.data() + n);
  return ev;
}

FidelityReference::FidelityReference(const Matrix& rho) {
  if (rho.rows() != rho.cols()) throw DimensionMismatch("FidelityReference: matrix must be square");
  require_hermitian(rho, "uhlmann_fidelity");
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (rho + rho.adjoint())));
  if (es.info() != Eigen::Success) throw NumericalError("uhlmann_fidelity: eigen-solver failed");
  const RealVector& lambda = es.eigenvalues();
  const double floor = static_cast<double>(lambda.size()) * std::numeric_limits<double>::epsilon() *
                       std::max(0.0, lambda.maxCoeff());
  root_ = lambda.unaryExpr([floor](double x) { return x > floor ? std::sqrt(x) : 0.0; });
  vectors_ = es.eigenvectors();
}

double FidelityReference::raw(const Matrix& sigma) const {
  if (sigma.rows() != dim() || sigma.cols() != dim()) throw DimensionMismatch("uhlmann_fidelity: dimension mismatch");
  // sqrt(rho) sigma sqrt(rho) in the eigenbasis of rho
  const Matrix C = vectors_.adjoint() * sigma * vectors_;
  Matrix B = root_.asDiagonal() * C * root_.asDiagonal();
  B = 0.5 * (B + B.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(B, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("uhlmann_fidelity: eigen-solver failed");
  // QR eigenvalues carry absolute error ~ d * eps * max
  const RealVector& mu = es.eigenvalues();
  double f = trace_sqrt_squared(mu, static_cast<double>(mu.size()) * std::numeric_limits<double>::epsilon() * mu.maxCoeff());
  if (f > kJacobiRefineAbove) f = trace_sqrt_squared(jacobi_eigenvalues(std::move(B)));
  return f;
}

double FidelityReference::operator()(const Matrix& sigma) const { return clamp_unit(raw(sigma), "uhlmann_fidelity"); }

double uhlmann_fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (rho.dim() != sigma.dim()) throw DimensionMismatch("uhlmann_fidelity: dimension mismatch");
  const FidelityReference a(rho.matrix()), b(sigma.matrix());
  return b.rank() < a.rank() ? b(rho.matrix()) : a(sigma.matrix());
}

double pure_overlap(const PureState& psi, const DensityMatrix& rho) {
  if (psi.dim() != rho.dim()) throw DimensionMismatch("pure_overlap: dimension mismatch");
  const cplx v = psi.amplitudes.dot(rho.matrix() * psi.amplitudes);  // dot conjugates the first argument
  if (std::abs(v.imag()) >= kHermitianInputTol) throw NumericalError("pure_overlap: imaginary part too large");
  return v.real();
}

xreal pure_overlap(const XVector& psi, const XMatrix& rho) {
  if (psi.size() != rho.rows()) throw DimensionMismatch("pure_overlap: dimension mismatch");
  const xcplx v = psi.dot(rho * psi);
  if (std::abs(v.imag()) >= xreal(kHermitianInputTol)) throw NumericalError("pure_overlap: imaginary part too large");
  return v.real();
}

std::optional<double> rate_function(double echo, int N, double epsilon) {
  if (echo > epsilon) return -std::log(echo) / static_cast<double>(N) + 0.0;  // no -0
  return std::nullopt;
}

double clamp_echo(double raw_echo) { return clamp_unit(raw_echo, "echo"); }

void EchoSeries::push(double t, double raw_echo) {
  const double e = clamp_echo(raw_echo);
  times.push_back(t);
  echo.push_back(e);
  rate.push_back(rate_function(e, N, epsilon));
}

void EchoSeries::push(double t, double raw_echo, double sz_per_n) {
  push(t, raw_echo);
  sz.push_back(sz_per_n);
}

ZeroDetector::ZeroDetector(double epsilon, std::size_t max_count) : epsilon_(epsilon), max_count_(max_count) {
  if (!(epsilon > 0.0)) throw ConfigError("zero detection threshold must be > 0");
}

void ZeroDetector::push(double t, double echo) {
  if (done() || finished_) return;
  if (!in_zero_) {
    if (echo <= epsilon_) {
      in_zero_ = true;
      t_down_ = t;
    }
  } else if (echo > epsilon_) {
    in_zero_ = false;
    CriticalTime ct;
    ct.t_down = t_down_;
    ct.t_up = t;
    ct.t_c = (t_down_ + t) / 2.0;
    ct.epsilon = epsilon_;
    ct.index = static_cast<int>(records_.size()) + 1;
    records_.push_back(ct);
  }
}

void ZeroDetector::finish() {
  if (finished_) return;
  finished_ = true;
  if (in_zero_ && !done()) {
    CriticalTime ct;
    ct.t_down = t_down_;
    ct.t_c = t_down_;
    ct.epsilon = epsilon_;
    ct.index = static_cast<int>(records_.size()) + 1;
    records_.push_back(ct);
    in_zero_ = false;
  }
}

std::vector<CriticalTime> detect_zeros(const EchoSeries& series, double epsilon, std::size_t max_count) {
  if (series.size() == 0) throw ConfigError("detect_zeros: empty series");
  ZeroDetector det(epsilon, max_count);
  for (std::size_t k = 0; k < series.size() && !det.done(); ++k) det.push(series.times[k], series.echo[k]);
  det.finish();
  return det.records();
}

namespace {

void require_every_step(const Trajectory& traj) {
  if (traj.sample_stride != 1) {
    throw ConfigError("echo series needs snapshots at every step (sample_stride = 1), got stride " +
                      std::to_string(traj.sample_stride));
  }
}

}  // namespace

EchoSeries echo_series_quench(const PureState& psi0, const Trajectory& traj, double epsilon) {
  require_every_step(traj);
  EchoSeries s;
  s.N = psi0.dim() - 1;
  s.epsilon = epsilon;
  for (std::size_t k = 0; k < traj.states.size(); ++k) s.push(traj.times[k], pure_overlap(psi0, traj.states[k]));
  return s;
}

EchoSeries echo_series_ramp(const DensityMatrix& rho_tau, const Trajectory& traj_unitary, double epsilon) {
  require_every_step(traj_unitary);
  EchoSeries s;
  s.N = rho_tau.dim() - 1;
  s.epsilon = epsilon;
  const FidelityReference ref(rho_tau.matrix());
  for (std::size_t k = 0; k < traj_unitary.states.size(); ++k) {
    const Matrix& sigma = traj_unitary.states[k].matrix();
    require_hermitian(sigma, "echo_series_ramp");
    s.push(traj_unitary.times[k], ref.raw(sigma));
  }
  return s;
}

QuenchEchoRecorder::QuenchEchoRecorder(const PureState& psi0, int N, double epsilon, std::size_t echo_stride,
                                       std::size_t stop_after_zeros, double linger)
    : psi_(to_extended(psi0.amplitudes)),
      stride_(std::max<std::size_t>(echo_stride, 1)),
      stop_after_(stop_after_zeros),
      linger_(std::max(linger, 0.0)),
      detector_(epsilon, stop_after_zeros == 0 ? std::numeric_limits<std::size_t>::max() : stop_after_zeros) {
  if (psi0.dim() != N + 1) throw DimensionMismatch("QuenchEchoRecorder: state/N mismatch");
  series_.N = N;
  series_.epsilon = epsilon;
  const xreal S = xreal(N) / 2;
  for (int k = 0; k <= N; ++k) sz_diag_.push_back(S - xreal(k));
}

StepObserver QuenchEchoRecorder::observer() {
  return [this](std::size_t step, double t, const StateView& rho) {
    const double e = static_cast<double>(rho.overlap(psi_));
    detector_.push(t, clamp_echo(e));
    if (step % stride_ == 0) {
      const xreal sz = rho.weighted_diagonal(sz_diag_);
      series_.push(t, e, static_cast<double>(sz / xreal(series_.N)));
    }
    if (stop_after_ == 0 || !detector_.done()) return true;
    if (!stop_at_) stop_at_ = t + linger_;
    return t < *stop_at_ - 1e-9;
  };
}

std::vector<CriticalTime> QuenchEchoRecorder::zeros() const {
  ZeroDetector copy = detector_;
  copy.finish();
  return copy.records();
}

RampEchoEvaluator::RampEchoEvaluator(const Matrix& rho_tau, const Matrix& H_final)
    : prop_(H_final), N_(static_cast<int>(H_final.rows()) - 1) {
  if (rho_tau.rows() != H_final.rows() || rho_tau.cols() != H_final.cols()) {
    throw DimensionMismatch("RampEchoEvaluator: dimension mismatch");
  }
  require_hermitian(rho_tau, "RampEchoEvaluator");
  rho_eig_ = prop_.to_eigenbasis(rho_tau);
  ref_ = FidelityReference(rho_eig_);
  const OperatorSet ops = build_spin_operators(N_);
  sz_eig_ = prop_.to_eigenbasis(ops.Sz);
}

double RampEchoEvaluator::echo(double t) const {
  return ref_.raw(prop_.evolve_in_eigenbasis(rho_eig_, t));
}

double RampEchoEvaluator::sz_per_n(double t) const {
  const Matrix sigma = prop_.evolve_in_eigenbasis(rho_eig_, t);
  const cplx v = sz_eig_.cwiseProduct(sigma.transpose()).sum();
  return v.real() / N_;
}

double RampEchoEvaluator::purity(double t) const { return prop_.evolve_in_eigenbasis(rho_eig_, t).squaredNorm(); }

}  // namespace btc
