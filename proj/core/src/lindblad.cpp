#include "btc/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include <unsupported/Eigen/KroneckerProduct>

#include "btc/errors.hpp"

namespace btc {

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::quench: return "quench";
    case Protocol::ramp: return "ramp";
    case Protocol::unitary: return "unitary";
  }
  return "?";
}

std::string to_string(Precision p) { return p == Precision::extended ? "extended" : "binary64"; }

Precision parse_precision(const std::string& name) {
  if (name == "binary64" || name == "double") return Precision::binary64;
  if (name == "extended" || name == "long double") return Precision::extended;
  throw ConfigError("unknown precision '" + name + "' (expected binary64 or extended)");
}

int StateView::dim() const {
  return static_cast<int>(extended_ ? extended_->rows() : standard_->rows());
}

Matrix StateView::to_matrix() const { return extended_ ? to_double(*extended_) : *standard_; }

XMatrix StateView::to_extended_matrix() const { return extended_ ? *extended_ : to_extended(*standard_); }

xreal StateView::overlap(const XVector& psi) const {
  if (psi.size() != dim()) throw DimensionMismatch("StateView::overlap: dimension mismatch");
  xcplx v(0);
  const int d = dim();
  for (int j = 0; j < d; ++j) {
    if (psi(j) == xcplx(0)) continue;
    xcplx colsum(0);
    for (int i = 0; i < d; ++i) {
      if (psi(i) == xcplx(0)) continue;
      const xcplx r = extended_ ? (*extended_)(i, j) : xcplx((*standard_)(i, j));
      colsum += std::conj(psi(i)) * r;
    }
    v += colsum * psi(j);
  }
  return v.real();
}

xreal StateView::weighted_diagonal(const std::vector<xreal>& weights) const {
  const int d = dim();
  if (static_cast<int>(weights.size()) != d) throw DimensionMismatch("StateView::weighted_diagonal: size mismatch");
  xreal s = 0;
  for (int k = 0; k < d; ++k) s += weights[k] * (extended_ ? (*extended_)(k, k).real() : xreal((*standard_)(k, k).real()));
  return s;
}

double RampSchedule::at(double t) const {
  const double s = std::clamp(t / tau, 0.0, 1.0);
  return lambda_i + (lambda_f - lambda_i) * s;
}

void RampSchedule::validate() const {
  if (!(tau > 0.0)) throw ConfigError("ramp duration tau must be > 0");
  if (!std::isfinite(lambda_i) || !std::isfinite(lambda_f)) throw ConfigError("ramp endpoints must be finite");
}

Matrix lindblad_rhs(const Matrix& rho, const Matrix& H, const Matrix& L) {
  if (rho.rows() != H.rows() || rho.cols() != H.cols() || L.rows() != H.rows() || L.cols() != H.cols() ||
      H.rows() != H.cols()) {
    throw DimensionMismatch("lindblad_rhs: dimension mismatch");
  }
  const Matrix LdL = L.adjoint() * L;
  const cplx i(0.0, 1.0);
  return -i * (H * rho - rho * H) + L * rho * L.adjoint() - 0.5 * (LdL * rho + rho * LdL);
}

Matrix lindblad_rhs(const DensityMatrix& rho, const Matrix& H, const Matrix& L) {
  return lindblad_rhs(rho.matrix(), H, L);
}

namespace {

std::size_t step_count(double t_end, double dt) {
  if (!(dt > 0.0)) throw ConfigError("dt must be > 0");
  if (!(t_end >= 0.0)) throw ConfigError("t_end must be >= 0");
  return static_cast<std::size_t>(std::llround(t_end / dt));
}

void check_state(const DensityMatrix& rho0, int dim) {
  if (rho0.dim() != dim) throw DimensionMismatch("initial state has wrong dimension");
}

template <class Real>
class Rk4 {
 public:
  using State = ComplexMatrix<Real>;

  Rk4(const LindbladGenerator<Real>& gen, Real drive_slope) : gen_(gen), slope_(drive_slope) {}

  // Drive coefficient c(t) = slope * t, evaluated at t, t + h/2, t + h.
  void step(State& rho, Real t, Real h) {
    const Real half = h / 2;
    gen_.apply(rho, slope_ * t, k1_);
    tmp_ = rho + half * k1_;
    gen_.apply(tmp_, slope_ * (t + half), k2_);
    tmp_ = rho + half * k2_;
    gen_.apply(tmp_, slope_ * (t + half), k3_);
    tmp_ = rho + h * k3_;
    gen_.apply(tmp_, slope_ * (t + h), k4_);
    rho += (h / 6) * (k1_ + 2 * k2_ + 2 * k3_ + k4_);
  }

 private:
  const LindbladGenerator<Real>& gen_;
  Real slope_;
  State k1_, k2_, k3_, k4_, tmp_;
};

template <class State>
void record_drift(Trajectory& traj, const State& rho, double t, const EvolutionOptions& opt) {
  using Scalar = typename State::Scalar;
  const double trace = static_cast<double>(std::abs(rho.trace() - Scalar(1)));
  const double herm = hermiticity_error(rho);
  traj.max_trace_drift = std::max(traj.max_trace_drift, trace);
  traj.max_hermiticity_error = std::max(traj.max_hermiticity_error, herm);
  if (!(trace <= opt.abort_tol)) throw InvariantViolation("trace drift " + std::to_string(trace), t);
  if (!(herm <= opt.abort_tol)) throw InvariantViolation("Hermiticity breach " + std::to_string(herm), t);
}

template <class State>
Matrix as_double(const State& rho);

template <class State>
void record_positivity(Trajectory& traj, const State& rho, double t, const EvolutionOptions& opt) {
  const Matrix m = as_double(rho);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (m + m.adjoint())), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  traj.min_eigenvalue = std::min(traj.min_eigenvalue, lo);
  if (!(lo >= opt.min_eigenvalue_tol)) throw InvariantViolation("negative eigenvalue " + std::to_string(lo), t);
}

template <class State>
Matrix as_double(const State& rho) {
  return rho.template cast<cplx>();
}

template <class Real>
void integrate(Trajectory& traj, const Matrix& rho0, const Matrix& H, const Matrix& L, const Matrix& drive,
               double drive_slope, std::size_t n_steps, const EvolutionOptions& opt, const StepObserver& observer) {
  using State = ComplexMatrix<Real>;
  if (opt.sample_stride == 0) throw ConfigError("sample_stride must be >= 1");
  const std::size_t check_stride = std::max<std::size_t>(opt.check_stride, 1);
  traj.dt = opt.dt;
  traj.sample_stride = opt.sample_stride;

  const LindbladGenerator<Real> gen(H, L, drive);
  Rk4<Real> rk4(gen, static_cast<Real>(drive_slope));
  State rho = rho0.cast<std::complex<Real>>();
  const Real h = static_cast<Real>(opt.dt);

  record_drift(traj, rho, 0.0, opt);
  record_positivity(traj, rho, 0.0, opt);
  traj.times.push_back(0.0);
  traj.states.push_back(DensityMatrix::unchecked(as_double(rho)));
  bool keep_going = observer ? observer(0, 0.0, StateView(rho)) : true;

  std::size_t k = 0;
  while (keep_going && k < n_steps) {
    rk4.step(rho, static_cast<Real>(k) * h, h);
    ++k;
    const double t = static_cast<double>(k) * opt.dt;
    if (k % check_stride == 0) record_drift(traj, rho, t, opt);
    if (opt.positivity_stride > 0 && k % opt.positivity_stride == 0) record_positivity(traj, rho, t, opt);
    if (k % opt.sample_stride == 0) {
      traj.times.push_back(t);
      traj.states.push_back(DensityMatrix::unchecked(as_double(rho)));
    }
    if (observer) keep_going = observer(k, t, StateView(rho));
  }
  traj.steps_taken = k;
  traj.stopped_early = k < n_steps;
  traj.final_time = static_cast<double>(k) * opt.dt;
  if (k % check_stride != 0) record_drift(traj, rho, traj.final_time, opt);
  if (opt.positivity_stride == 0 || k % opt.positivity_stride != 0) record_positivity(traj, rho, traj.final_time, opt);
  traj.final_state = DensityMatrix::unchecked(as_double(rho));
}

void run(Trajectory& traj, const Matrix& rho0, const Matrix& H, const Matrix& L, const Matrix& drive,
         double drive_slope, std::size_t n_steps, const EvolutionOptions& opt, const StepObserver& observer) {
  if (opt.precision == Precision::extended) {
    integrate<xreal>(traj, rho0, H, L, drive, drive_slope, n_steps, opt, observer);
  } else {
    integrate<double>(traj, rho0, H, L, drive, drive_slope, n_steps, opt, observer);
  }
}

}  // namespace

Trajectory evolve_lindblad(const DensityMatrix& rho0, const Matrix& H, const Matrix& L, double t_end,
                           const EvolutionOptions& options, const StepObserver& observer) {
  check_state(rho0, static_cast<int>(H.rows()));
  const std::size_t n = step_count(t_end, options.dt);
  Trajectory traj;
  traj.protocol = Protocol::quench;
  run(traj, rho0.matrix(), H, L, Matrix(), 0.0, n, options, observer);
  return traj;
}

Trajectory evolve_quench(const DensityMatrix& rho0, const SpinModelParams& params_final, double t_end,
                         const EvolutionOptions& options, const StepObserver& observer) {
  const OperatorSet ops = build_model(params_final);
  Trajectory traj = evolve_lindblad(rho0, ops.H, ops.L, t_end, options, observer);
  traj.params = params_final;
  return traj;
}

Trajectory evolve_ramp_trajectory(const DensityMatrix& rho0, const SpinModelParams& params_base,
                                  const RampSchedule& schedule, const EvolutionOptions& options,
                                  const StepObserver& observer) {
  schedule.validate();
  if (!(options.dt > 0.0)) throw ConfigError("dt must be > 0");
  const double ratio = schedule.tau / options.dt;
  const auto n = static_cast<std::size_t>(std::llround(ratio));
  if (n == 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio)) {
    throw ConfigError("ramp: dt must divide tau");
  }
  const SpinModelParams start = with(params_base, schedule.parameter, schedule.lambda_i);
  const OperatorSet ops = build_model(start);
  check_state(rho0, ops.dim);

  // H(lambda(t)) = H(lambda_i) + (lambda(t) - lambda_i) dH/dlambda
  const Matrix G = hamiltonian_derivative(schedule.parameter, ops);
  const double slope = (schedule.lambda_f - schedule.lambda_i) / schedule.tau;

  EvolutionOptions opt = options;
  opt.dt = schedule.tau / static_cast<double>(n);
  Trajectory traj;
  traj.protocol = Protocol::ramp;
  traj.params = start;
  run(traj, rho0.matrix(), ops.H, ops.L, G, slope, n, opt, observer);
  return traj;
}

DensityMatrix evolve_ramp(const DensityMatrix& rho0, const SpinModelParams& params_base,
                          const RampSchedule& schedule, double dt) {
  EvolutionOptions opt;
  opt.dt = dt;
  opt.sample_stride = std::numeric_limits<std::size_t>::max();
  return evolve_ramp_trajectory(rho0, params_base, schedule, opt).final_state;
}

UnitaryPropagator::UnitaryPropagator(const Matrix& H) {
  if (H.rows() != H.cols()) throw DimensionMismatch("UnitaryPropagator: H must be square");
  if (hermiticity_error(H) > 1e-12 * std::max(1.0, H.cwiseAbs().maxCoeff())) {
    throw NumericalError("UnitaryPropagator: H is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(Matrix(0.5 * (H + H.adjoint())));
  if (es.info() != Eigen::Success) throw NumericalError("UnitaryPropagator: eigen-decomposition failed");
  energies_ = es.eigenvalues();
  vectors_ = es.eigenvectors();
}

Matrix UnitaryPropagator::evolve_in_eigenbasis(const Matrix& rho0_eig, double t) const {
  const int d = dim();
  Vector phase(d);
  for (int k = 0; k < d; ++k) phase(k) = std::polar(1.0, -energies_(k) * t);
  return phase.asDiagonal() * rho0_eig * phase.conjugate().asDiagonal();
}

Matrix UnitaryPropagator::evolve(const Matrix& rho0, double t) const {
  return from_eigenbasis(evolve_in_eigenbasis(to_eigenbasis(rho0), t));
}

Trajectory evolve_unitary(const DensityMatrix& rho0, const Matrix& H, double t_end,
                          const EvolutionOptions& options, const StepObserver& observer) {
  check_state(rho0, static_cast<int>(H.rows()));
  if (options.sample_stride == 0) throw ConfigError("sample_stride must be >= 1");
  const std::size_t n = step_count(t_end, options.dt);
  const UnitaryPropagator prop(H);
  const Matrix rho0_eig = prop.to_eigenbasis(rho0.matrix());

  Trajectory traj;
  traj.protocol = Protocol::unitary;
  traj.dt = options.dt;
  traj.sample_stride = options.sample_stride;
  Matrix rho;
  std::size_t k = 0;
  bool keep_going = true;
  for (; k <= n && keep_going; ++k) {
    const double t = static_cast<double>(k) * options.dt;
    rho = prop.from_eigenbasis(prop.evolve_in_eigenbasis(rho0_eig, t));
    if (k % options.sample_stride == 0) {
      traj.times.push_back(t);
      traj.states.push_back(DensityMatrix::unchecked(rho));
    }
    if (observer) keep_going = observer(k, t, StateView(rho));
  }
  traj.steps_taken = k - 1;
  traj.stopped_early = traj.steps_taken < n;
  traj.final_time = static_cast<double>(traj.steps_taken) * options.dt;
  traj.final_state = DensityMatrix::unchecked(rho);
  traj.max_trace_drift = traj.final_state.trace_deviation();
  traj.max_hermiticity_error = traj.final_state.hermiticity_error();
  traj.min_eigenvalue = traj.final_state.min_eigenvalue();
  return traj;
}

Matrix liouvillian_matrix(const Matrix& H, const Matrix& L, int max_dim) {
  const Eigen::Index d = H.rows();
  if (H.cols() != d || L.rows() != d || L.cols() != d) throw DimensionMismatch("liouvillian_matrix: dimension mismatch");
  if (d > max_dim) {
    throw ConfigError("liouvillian_matrix: dim " + std::to_string(d) + " exceeds cap " + std::to_string(max_dim));
  }
  const Matrix I = Matrix::Identity(d, d);
  const Matrix LdL = L.adjoint() * L;
  const cplx i(0.0, 1.0);
  // vec(A X B) = (B^T kron A) vec(X)
  Matrix M = -i * Matrix(Eigen::kroneckerProduct(I, H)) + i * Matrix(Eigen::kroneckerProduct(H.transpose(), I));
  M += Eigen::kroneckerProduct(L.conjugate(), L);
  M -= 0.5 * Matrix(Eigen::kroneckerProduct(I, LdL));
  M -= 0.5 * Matrix(Eigen::kroneckerProduct(LdL.transpose(), I));
  return M;
}

std::vector<cplx> liouvillian_spectrum(const Matrix& M) {
  if (M.rows() != M.cols()) throw DimensionMismatch("liouvillian_spectrum: matrix must be square");
  Eigen::ComplexEigenSolver<Matrix> es(M, false);
  if (es.info() != Eigen::Success) throw NumericalError("liouvillian_spectrum: eigen-solver failed");
  std::vector<cplx> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), [](const cplx& a, const cplx& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() < b.imag();
  });
  return ev;
}

Vector vectorize(const Matrix& rho) { return Eigen::Map<const Vector>(rho.data(), rho.size()); }

Matrix unvectorize(const Vector& v, int dim) {
  if (v.size() != static_cast<Eigen::Index>(dim) * dim) throw DimensionMismatch("unvectorize: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), dim, dim);
}

double expectation(const DensityMatrix& rho, const Matrix& A) {
  if (rho.dim() != A.rows() || A.rows() != A.cols()) throw DimensionMismatch("expectation: dimension mismatch");
  const cplx value = A.cwiseProduct(rho.matrix().transpose()).sum();  // Tr(A rho)
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if (std::abs(value.imag()) >= 1e-10 * scale) {
    throw NumericalError("expectation: Tr(A rho) has imaginary part " + std::to_string(value.imag()));
  }
  return value.real();
}

void write_trajectory_dump(std::ostream& os, const Trajectory& traj) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(17);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const Matrix& m = traj.states[k].matrix();
    os << "t " << traj.times[k] << ' ' << m.rows() << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j > 0) os << ' ';
        os << m(i, j).real() << ' ' << m(i, j).imag();
      }
      os << '\n';
    }
  }
  os.flags(flags);
  os.precision(prec);
}

std::vector<Snapshot> read_trajectory_dump(std::istream& is) {
  std::vector<Snapshot> out;
  std::string tag;
  while (is >> tag) {
    if (tag != "t") throw ConfigError("trajectory dump: expected record header 't', got '" + tag + "'");
    Snapshot s;
    int dim = 0;
    if (!(is >> s.t >> dim) || dim <= 0) throw ConfigError("trajectory dump: bad record header");
    s.rho.resize(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) {
        double re = 0.0, im = 0.0;
        if (!(is >> re >> im)) throw ConfigError("trajectory dump: truncated matrix");
        s.rho(i, j) = cplx(re, im);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace btc
