#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "btc/diagnostics.hpp"

namespace btc {

//   power_law:     a N^-b + c
//   stretched_exp: a exp(-N^b) + c
//   log:           a ln(N) + c
enum class FitModel { power_law, stretched_exp, log };

std::string to_string(FitModel m);
// Accepts the long names above and the short forms power, exp, log.
FitModel parse_fit_model(const std::string& name);
const std::vector<std::string>& parameter_names(FitModel m);

using NamedValues = std::map<std::string, double>;

double evaluate(FitModel m, const NamedValues& params, double N);

struct ScalingDataset {
  std::vector<int> N;
  std::vector<double> t_c;
  std::string protocol;
  // inclusive (N_min, N_max); whole dataset when absent
  std::optional<std::pair<int, int>> window;

  std::size_t size() const { return N.size(); }
  void add(int n, double tc);
  // N strictly increasing, t_c finite and positive.
  void validate() const;
  // Points inside the window.
  ScalingDataset windowed() const;
};

struct FitResult {
  FitModel model = FitModel::power_law;
  NamedValues params;        // all parameters, fixed ones included
  NamedValues param_errors;  // free parameters only
  NamedValues fixed_params;
  double rms = 0.0;
  bool converged = false;
  int iterations = 0;
  std::size_t n_points = 0;
};

struct LmOptions {
  double rel_tol = 1e-10;
  int max_iterations = 500;
};

// Levenberg-Marquardt fit over the dataset's window. Missing initial values
// default to c = last t_c, a = first - last, b = 1. Throws NumericalError when
// J^T J is singular at the optimum. Non-convergence is reported through
// FitResult::converged.
FitResult fit_model(const ScalingDataset& data, FitModel model, const NamedValues& init = {},
                    const NamedValues& fixed = {}, const LmOptions& options = {});

// Power law with b fixed at each grid value and (a, c) from linear least
// squares; the lowest-rms grid point wins, ties going to the earlier entry.
FitResult grid_fit_exponent(const ScalingDataset& data, const std::vector<double>& b_grid);

// Toward zero at three decimals.
double truncate3(double x);

// a exp(b s) + c with s = t - t_c on the left branch and s = t_c - t on the right.
struct ExpBranchFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double rms = 0.0;
  bool converged = false;
  std::size_t n_points = 0;
  double t_from = 0.0;
  double t_to = 0.0;
};

struct CuspFit {
  double t_c = 0.0;
  double t_down = 0.0;
  double t_up = 0.0;
  ExpBranchFit left;
  ExpBranchFit right;

  double left_value(double t) const;
  double right_value(double t) const;
};

struct CuspOptions {
  double window_left = 1.0;
  double window_right = 1.0;
  std::size_t min_points = 4;
};

// Fits the finite rate values on [t_down - window_left, t_down) and
// (t_up, t_up + window_right], where [t_down, t_up) is the divergent run that
// contains t_c (or the nearest one).
CuspFit cusp_extrapolation(const EchoSeries& rate_series, double t_c, const CuspOptions& options = {});

}  // namespace btc
