#include "btc/scaling_fits.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

#include "btc/errors.hpp"

namespace btc {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// r(p) and, when J is non-null, dr/dp
using ResidualFn = std::function<void(const Vec& p, Vec& r, Mat* J)>;

struct LmOutcome {
  Vec p;
  Vec r;
  Mat J;
  double cost = 0.0;
  bool converged = false;
  int iterations = 0;
};

LmOutcome levenberg_marquardt(const ResidualFn& f, Vec p, const LmOptions& opt) {
  LmOutcome out;
  Vec r;
  Mat J;
  f(p, r, &J);
  double cost = r.squaredNorm();
  if (!std::isfinite(cost)) throw NumericalError("fit: non-finite residuals at the initial point");
  double mu = 1e-3;
  int it = 0;
  bool converged = cost == 0.0;
  while (!converged && it < opt.max_iterations) {
    ++it;
    const Mat A = J.transpose() * J;
    const Vec g = J.transpose() * r;
    Vec D = A.diagonal();
    const double dmax = std::max(D.maxCoeff(), std::numeric_limits<double>::min());
    for (Eigen::Index k = 0; k < D.size(); ++k) D(k) = std::max(D(k), 1e-12 * dmax);

    bool accepted = false;
    while (!accepted) {
      Mat M = A;
      M.diagonal() += mu * D;
      const Vec delta = M.ldlt().solve(-g);
      const Vec p_new = p + delta;
      Vec r_new;
      Mat J_new;
      f(p_new, r_new, &J_new);
      const double cost_new = r_new.squaredNorm();
      if (delta.allFinite() && std::isfinite(cost_new) && cost_new <= cost) {
        const double step = delta.norm();
        p = p_new;
        r = std::move(r_new);
        J = std::move(J_new);
        cost = cost_new;
        mu = std::max(mu / 3.0, 1e-15);
        accepted = true;
        if (step <= opt.rel_tol * (p.norm() + opt.rel_tol) || cost == 0.0) converged = true;
      } else {
        mu *= 4.0;
        if (mu > 1e16) {
          // no downhill step left at this precision
          converged = true;
          break;
        }
      }
    }
  }
  out.p = std::move(p);
  out.r = std::move(r);
  out.J = std::move(J);
  out.cost = cost;
  out.converged = converged;
  out.iterations = it;
  return out;
}

// Least squares for y = a x + c. Columns are scaled before the QR solve.
struct LinearFit {
  double a = 0.0;
  double c = 0.0;
  double ssr = 0.0;
  Mat cov_unscaled;  // (X^T X)^-1
};

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(x.size());
  Mat X(n, 2);
  Vec Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = x[i];
    X(i, 1) = 1.0;
    Y(i) = y[i];
  }
  Vec scale = X.colwise().norm().transpose();
  for (Eigen::Index k = 0; k < 2; ++k) {
    if (scale(k) == 0.0) throw NumericalError("linear fit: zero design column");
  }
  const Mat Xs = X * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Mat> qr(Xs);
  if (qr.rank() < 2) throw NumericalError("linear fit: singular design matrix");
  const Vec beta = qr.solve(Y).cwiseQuotient(scale);
  LinearFit out;
  out.a = beta(0);
  out.c = beta(1);
  out.ssr = (X * beta - Y).squaredNorm();
  const Mat XtX = Xs.transpose() * Xs;
  out.cov_unscaled = scale.cwiseInverse().asDiagonal() * XtX.inverse() * scale.cwiseInverse().asDiagonal();
  return out;
}

double basis(FitModel m, double b, double N) {
  switch (m) {
    case FitModel::power_law: return std::pow(N, -b);
    case FitModel::stretched_exp: return std::exp(-std::pow(N, b));
    case FitModel::log: return std::log(N);
  }
  return 0.0;
}

// d basis / db
double basis_db(FitModel m, double b, double N) {
  switch (m) {
    case FitModel::power_law: return -std::log(N) * std::pow(N, -b);
    case FitModel::stretched_exp: {
      const double nb = std::pow(N, b);
      return -std::exp(-nb) * nb * std::log(N);
    }
    case FitModel::log: return 0.0;
  }
  return 0.0;
}

bool rank_deficient(const Mat& J) {
  if (J.cols() == 0) return false;
  Vec norms = J.colwise().norm().transpose();
  if ((norms.array() == 0.0).any()) return true;
  const Mat Js = J * norms.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Mat> svd(Js);
  const Vec s = svd.singularValues();
  return s(s.size() - 1) <= 1e-12 * s(0);
}

// Best linear (a, c) over a coarse exponent scan; used when the default start
// gives a degenerate Jacobian.
double scan_exponent(FitModel m, const ScalingDataset& d) {
  std::vector<double> x(d.size());
  double best_b = 1.0;
  double best = std::numeric_limits<double>::infinity();
  const double hi = m == FitModel::stretched_exp ? 1.0 : 5.0;
  for (int k = 1; k <= 500; ++k) {
    const double b = hi * k / 500.0;
    for (std::size_t i = 0; i < d.size(); ++i) x[i] = basis(m, b, d.N[i]);
    try {
      const LinearFit lf = linear_fit(x, d.t_c);
      if (lf.ssr < best) {
        best = lf.ssr;
        best_b = b;
      }
    } catch (const NumericalError&) {
    }
  }
  return best_b;
}

double rms_of(const Vec& r) { return r.size() == 0 ? 0.0 : std::sqrt(r.squaredNorm() / static_cast<double>(r.size())); }

}  // namespace

std::string to_string(FitModel m) {
  switch (m) {
    case FitModel::power_law: return "power_law";
    case FitModel::stretched_exp: return "stretched_exp";
    case FitModel::log: return "log";
  }
  return "?";
}

FitModel parse_fit_model(const std::string& name) {
  if (name == "power" || name == "power_law") return FitModel::power_law;
  if (name == "exp" || name == "stretched_exp") return FitModel::stretched_exp;
  if (name == "log") return FitModel::log;
  throw ConfigError("unknown fit model '" + name + "' (expected power, exp or log)");
}

const std::vector<std::string>& parameter_names(FitModel m) {
  static const std::vector<std::string> abc{"a", "b", "c"};
  static const std::vector<std::string> ac{"a", "c"};
  return m == FitModel::log ? ac : abc;
}

double evaluate(FitModel m, const NamedValues& params, double N) {
  const double a = params.at("a");
  const double c = params.at("c");
  const double b = m == FitModel::log ? 0.0 : params.at("b");
  return a * basis(m, b, N) + c;
}

void ScalingDataset::add(int n, double tc) {
  N.push_back(n);
  t_c.push_back(tc);
}

void ScalingDataset::validate() const {
  if (N.size() != t_c.size()) throw ConfigError("scaling dataset: N and t_c sizes differ");
  for (std::size_t i = 0; i < N.size(); ++i) {
    if (N[i] <= 0) throw ConfigError("scaling dataset: N must be positive");
    if (i > 0 && N[i] <= N[i - 1]) throw ConfigError("scaling dataset: N must be strictly increasing");
    if (!std::isfinite(t_c[i]) || t_c[i] <= 0.0) throw ConfigError("scaling dataset: t_c must be finite and positive");
  }
  if (window && window->first > window->second) throw ConfigError("scaling dataset: empty fit window");
}

ScalingDataset ScalingDataset::windowed() const {
  validate();
  ScalingDataset out;
  out.protocol = protocol;
  for (std::size_t i = 0; i < N.size(); ++i) {
    if (!window || (N[i] >= window->first && N[i] <= window->second)) out.add(N[i], t_c[i]);
  }
  return out;
}

FitResult fit_model(const ScalingDataset& data, FitModel model, const NamedValues& init, const NamedValues& fixed,
                    const LmOptions& options) {
  const ScalingDataset d = data.windowed();
  const std::vector<std::string>& names = parameter_names(model);
  for (const auto& [k, v] : fixed) {
    if (std::find(names.begin(), names.end(), k) == names.end()) {
      throw ConfigError("fit: unknown parameter '" + k + "' for model " + to_string(model));
    }
    if (!std::isfinite(v)) throw ConfigError("fit: fixed parameter '" + k + "' is not finite");
  }
  std::vector<std::string> free;
  for (const auto& n : names) {
    if (!fixed.count(n)) free.push_back(n);
  }
  if (d.size() < free.size() + 1) {
    throw ConfigError("fit: need at least " + std::to_string(free.size() + 1) + " points in the window, have " +
                      std::to_string(d.size()));
  }

  NamedValues start{{"c", d.t_c.back()}, {"a", d.t_c.front() - d.t_c.back()}, {"b", 1.0}};
  for (const auto& [k, v] : init) start[k] = v;
  for (const auto& [k, v] : fixed) start[k] = v;

  auto index_of = [&](const std::string& name) -> int {
    const auto it = std::find(free.begin(), free.end(), name);
    return it == free.end() ? -1 : static_cast<int>(it - free.begin());
  };
  const int ia = index_of("a"), ib = index_of("b"), ic = index_of("c");

  auto unpack = [&](const Vec& p) {
    NamedValues v = start;
    for (std::size_t k = 0; k < free.size(); ++k) v[free[k]] = p(static_cast<Eigen::Index>(k));
    return v;
  };
  const ResidualFn f = [&](const Vec& p, Vec& r, Mat* J) {
    const NamedValues v = unpack(p);
    const double a = v.at("a"), c = v.at("c");
    const double b = model == FitModel::log ? 0.0 : v.at("b");
    const auto n = static_cast<Eigen::Index>(d.size());
    r.resize(n);
    if (J) J->resize(n, static_cast<Eigen::Index>(free.size()));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double N = d.N[i];
      const double phi = basis(model, b, N);
      r(i) = a * phi + c - d.t_c[i];
      if (J) {
        if (ia >= 0) (*J)(i, ia) = phi;
        if (ib >= 0) (*J)(i, ib) = a * basis_db(model, b, N);
        if (ic >= 0) (*J)(i, ic) = 1.0;
      }
    }
  };

  Vec p0(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) p0(static_cast<Eigen::Index>(k)) = start.at(free[k]);
  if (ib >= 0 && !init.count("b")) {
    Vec r;
    Mat J;
    f(p0, r, &J);
    if (rank_deficient(J)) {
      const double b0 = scan_exponent(model, d);
      std::vector<double> x(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) x[i] = basis(model, b0, d.N[i]);
      const LinearFit lf = linear_fit(x, d.t_c);
      p0(ib) = b0;
      if (ia >= 0) p0(ia) = lf.a;
      if (ic >= 0) p0(ic) = lf.c;
    }
  }

  const LmOutcome lm = levenberg_marquardt(f, p0, options);

  FitResult out;
  out.model = model;
  out.params = unpack(lm.p);
  if (model == FitModel::log) out.params.erase("b");
  out.fixed_params = fixed;
  out.rms = rms_of(lm.r);
  out.converged = lm.converged;
  out.iterations = lm.iterations;
  out.n_points = d.size();

  if (!free.empty()) {
    if (rank_deficient(lm.J)) throw NumericalError("fit: singular Jacobian at the optimum");
    const auto dof = static_cast<double>(d.size() - free.size());
    const double sigma2 = lm.cost / dof;
    const Mat cov = (lm.J.transpose() * lm.J).inverse() * sigma2;
    for (std::size_t k = 0; k < free.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      out.param_errors[free[k]] = std::sqrt(std::max(0.0, cov(kk, kk)));
    }
  }
  return out;
}

FitResult grid_fit_exponent(const ScalingDataset& data, const std::vector<double>& b_grid) {
  if (b_grid.empty()) throw ConfigError("grid fit: empty exponent grid");
  const ScalingDataset d = data.windowed();
  if (d.size() < 3) throw ConfigError("grid fit: need at least 3 points in the window");
  std::optional<FitResult> best;
  std::vector<double> x(d.size());
  for (double b : b_grid) {
    if (!std::isfinite(b)) throw ConfigError("grid fit: exponent grid values must be finite");
    for (std::size_t i = 0; i < d.size(); ++i) x[i] = basis(FitModel::power_law, b, d.N[i]);
    const LinearFit lf = linear_fit(x, d.t_c);
    const double rms = std::sqrt(lf.ssr / static_cast<double>(d.size()));
    // equal rms up to rounding counts as a tie
    if (best && !(rms < best->rms - 1e-12 * std::max(1.0, best->rms))) continue;
    FitResult r;
    r.model = FitModel::power_law;
    r.params = {{"a", lf.a}, {"b", b}, {"c", lf.c}};
    r.fixed_params = {{"b", b}};
    r.rms = rms;
    r.converged = true;
    r.n_points = d.size();
    const double sigma2 = lf.ssr / static_cast<double>(d.size() - 2);
    r.param_errors = {{"a", std::sqrt(std::max(0.0, lf.cov_unscaled(0, 0) * sigma2))},
                      {"c", std::sqrt(std::max(0.0, lf.cov_unscaled(1, 1) * sigma2))}};
    best = std::move(r);
  }
  return *best;
}

double truncate3(double x) {
  if (!std::isfinite(x)) return x;
  // nudge by a few ulps so values like 3.051 (stored as 3.05099999...) stay put
  const double scaled = x * 1000.0;
  const double nudged = scaled + std::copysign(4.0 * std::numeric_limits<double>::epsilon() * std::abs(scaled), scaled);
  return std::trunc(nudged) / 1000.0;
}

double CuspFit::left_value(double t) const { return left.a * std::exp(left.b * (t - t_c)) + left.c; }

double CuspFit::right_value(double t) const { return right.a * std::exp(right.b * (t_c - t)) + right.c; }

namespace {

ExpBranchFit fit_branch(const std::vector<double>& s, const std::vector<double>& y) {
  // model a exp(b s) + c with s <= 0 on the fitted samples
  ExpBranchFit out;
  out.n_points = s.size();
  const std::size_t far = 0, near = s.size() - 1;
  const double b0 = 1.0;
  const double c0 = y[far];
  const double a0 = (y[near] - y[far]) / std::max(std::exp(b0 * s[near]) - std::exp(b0 * s[far]), 1e-300);
  const ResidualFn f = [&](const Vec& p, Vec& r, Mat* J) {
    const auto n = static_cast<Eigen::Index>(s.size());
    r.resize(n);
    if (J) J->resize(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = std::exp(p(1) * s[i]);
      r(i) = p(0) * e + p(2) - y[i];
      if (J) {
        (*J)(i, 0) = e;
        (*J)(i, 1) = p(0) * s[i] * e;
        (*J)(i, 2) = 1.0;
      }
    }
  };
  const LmOutcome lm = levenberg_marquardt(f, Vec{{a0 == 0.0 ? 0.0 : a0, b0, c0}}, LmOptions{});
  out.a = lm.p(0);
  out.b = lm.p(1);
  out.c = lm.p(2);
  out.rms = rms_of(lm.r);
  out.converged = lm.converged;
  return out;
}

}  // namespace

CuspFit cusp_extrapolation(const EchoSeries& series, double t_c, const CuspOptions& opt) {
  const std::size_t n = series.size();
  if (n == 0 || series.rate.size() != n) throw ConfigError("cusp extrapolation: empty or inconsistent series");
  if (!(opt.window_left > 0.0) || !(opt.window_right > 0.0)) throw ConfigError("cusp extrapolation: windows must be > 0");

  // divergent runs [lo, hi) in sample indices
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < n;) {
    if (series.rate[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !series.rate[j]) ++j;
    runs.emplace_back(i, j);
    i = j;
  }
  if (runs.empty()) throw NumericalError("cusp extrapolation: series has no divergent samples");
  auto distance = [&](const std::pair<std::size_t, std::size_t>& r) {
    const double a = series.times[r.first], b = series.times[r.second - 1];
    if (t_c < a) return a - t_c;
    if (t_c > b) return t_c - b;
    return 0.0;
  };
  const auto run = *std::min_element(runs.begin(), runs.end(),
                                     [&](const auto& x, const auto& y) { return distance(x) < distance(y); });
  if (run.first == 0 || run.second >= n) throw NumericalError("cusp extrapolation: divergent run touches the series edge");

  CuspFit out;
  out.t_c = t_c;
  out.t_down = series.times[run.first];
  out.t_up = series.times[run.second];

  std::vector<double> s, y;
  for (std::size_t i = 0; i < run.first; ++i) {
    const double t = series.times[i];
    if (t >= out.t_down - opt.window_left && series.rate[i]) {
      s.push_back(t - t_c);
      y.push_back(*series.rate[i]);
    }
  }
  if (s.size() < opt.min_points) throw NumericalError("cusp extrapolation: too few finite samples left of the zero");
  out.left = fit_branch(s, y);
  out.left.t_from = s.front() + t_c;
  out.left.t_to = s.back() + t_c;

  s.clear();
  y.clear();
  // right branch in s = t_c - t, ordered far to near
  for (std::size_t i = n; i-- > run.second;) {
    const double t = series.times[i];
    if (t <= out.t_up + opt.window_right && series.rate[i]) {
      s.push_back(t_c - t);
      y.push_back(*series.rate[i]);
    }
  }
  if (s.size() < opt.min_points) throw NumericalError("cusp extrapolation: too few finite samples right of the zero");
  out.right = fit_branch(s, y);
  out.right.t_from = t_c - s.back();
  out.right.t_to = t_c - s.front();
  return out;
}

}  // namespace btc
