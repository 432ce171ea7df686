#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "btc/diagnostics.hpp"
#include "btc/lindblad.hpp"
#include "btc/scaling_fits.hpp"
#include "btc/spin_core.hpp"

namespace btc {

enum class RunProtocol { quench, ramp, magnetization, spectrum, sweep, fit };
std::string to_string(RunProtocol p);
RunProtocol parse_run_protocol(const std::string& name);

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2, kExitPartial = 3 };

// Default output directory comes from this environment variable when set.
inline constexpr const char* kOutputDirEnv = "BTC_DQPT_OUT";

std::string version_tag();

struct NRange {
  int start = 0;
  int stop = 0;  // inclusive
  int step = 1;
  std::vector<int> values() const;
};
// "START:STOP:STEP" or "START:STOP" (step 1)
NRange parse_n_range(const std::string& text);

struct FitConfig {
  bool enabled = false;
  FitModel model = FitModel::power_law;
  std::optional<std::pair<int, int>> window;
  std::vector<double> b_grid;
  std::string input;  // sweep table to read for the fit protocol
};

// "NMIN:NMAX"
std::pair<int, int> parse_fit_window(const std::string& text);
// comma-separated reals
std::vector<double> parse_b_grid(const std::string& text);

struct ExperimentConfig {
  RunProtocol protocol = RunProtocol::quench;
  // what each N runs inside a sweep: quench or ramp
  RunProtocol sweep_protocol = RunProtocol::quench;

  RampParameter parameter = RampParameter::omega0;
  double lambda_i = 0.0;
  double lambda_f = 0.0;
  // the varied coupling is overwritten per protocol
  SpinModelParams model{1, 0.0, 0.0, -0.25, 0.1};

  std::optional<int> N;
  std::optional<NRange> n_range;

  double dt = kDefaultDt;
  std::optional<double> t_end;  // post-ramp window for ramps
  std::optional<double> tau;
  std::optional<double> epsilon;

  // rows written to series files; the echo is evaluated every step regardless
  std::size_t sample_stride = 1;
  // 0 runs the whole window
  std::size_t stop_after_zeros = 0;
  Precision precision = Precision::binary64;

  FitConfig fit;
  bool cusp = true;
  CuspOptions cusp_options;
  int liouvillian_max_dim = kDefaultLiouvillianMaxDim;

  std::string output_dir = ".";
  int workers = 1;
  bool write_series = true;

  double epsilon_or_default() const;
  std::vector<int> sizes() const;
  // Protocol actually run for one N.
  RunProtocol single_protocol() const { return protocol == RunProtocol::sweep ? sweep_protocol : protocol; }
  void validate() const;

  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

struct MagnetizationReport {
  double window_start = 0.0;
  double mean = 0.0;
  double peak_to_peak = 0.0;
  double stddev = 0.0;
  std::size_t samples = 0;
};

// Statistics of sz over the final `fraction` of [times.front(), times.back()].
MagnetizationReport late_window_report(const std::vector<double>& times, const std::vector<double>& sz,
                                       double fraction = 0.25);

struct SpectrumReport {
  std::vector<std::complex<double>> eigenvalues;  // sorted, see liouvillian_spectrum
  int zero_count = 0;                              // |lambda| <= 1e-10
  double max_real = 0.0;
  double gap = 0.0;  // -Re of the slowest non-zero mode
  // the dim - 1 non-zero modes with the largest real parts
  std::size_t slow_modes = 0;
  double max_imag_slow = 0.0;
};

SpectrumReport analyze_spectrum(std::vector<std::complex<double>> eigenvalues, int dim);

struct SizeRecord {
  int N = 0;
  bool ok = false;
  std::string error;
  int error_code = kExitOk;
  std::vector<CriticalTime> zeros;
  std::string series_file;
  double wall_seconds = 0.0;
  std::size_t steps = 0;
  double max_trace_drift = 0.0;
  double max_hermiticity_error = 0.0;
  double min_eigenvalue = 1.0;
  double purity_drift = 0.0;  // unitary stage only
  std::optional<CuspFit> cusp;
  std::string cusp_error;
  std::optional<MagnetizationReport> magnetization;
  std::optional<SpectrumReport> spectrum;

  const CriticalTime* first_zero() const { return zeros.empty() ? nullptr : &zeros.front(); }
};

struct RunSummary {
  ExperimentConfig config;
  std::vector<SizeRecord> records;  // sorted by N
  std::optional<FitResult> fit;
  std::string fit_error;
  std::string table_file;
  std::string summary_file;
  double wall_seconds = 0.0;
  std::string version = version_tag();
  bool partial = false;

  int exit_code() const;
  nlohmann::json to_json() const;
  static RunSummary from_json(const nlohmann::json& j);
};

// Single-N drivers. They return the record with any series written; numerical
// and configuration errors propagate as exceptions.
SizeRecord quench_size(const ExperimentConfig& cfg, int N);
SizeRecord ramp_size(const ExperimentConfig& cfg, int N);
SizeRecord magnetization_size(const ExperimentConfig& cfg, int N);
SizeRecord spectrum_size(const ExperimentConfig& cfg, int N);

RunSummary run_quench(const ExperimentConfig& cfg);
RunSummary run_ramp(const ExperimentConfig& cfg);
RunSummary run_magnetization(const ExperimentConfig& cfg);
RunSummary run_spectrum(const ExperimentConfig& cfg);
// Per-N failures are recorded and the sweep continues; partial is set, as it
// is when the requested fit fails.
RunSummary run_sweep(const ExperimentConfig& cfg);
RunSummary run_fit(const ExperimentConfig& cfg);
RunSummary run(const ExperimentConfig& cfg);

// CSV with header time,echo,rate,sz; rate prints inf when divergent.
void write_series_csv(const std::filesystem::path& path, const EchoSeries& series);
// N,t_down,t_up,t_c from the first zero of each successful record; absent
// values print as empty fields.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SizeRecord>& records);
// Rows with a t_c value.
ScalingDataset read_sweep_csv(const std::filesystem::path& path);

// %.17g, with inf/nan spelled out
std::string format_real(double x);

}  // namespace btc
