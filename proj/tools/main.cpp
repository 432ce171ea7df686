// btc-dqpt: batch driver for the collective-spin DQPT simulations.
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "btc/errors.hpp"
#include "btc/runner.hpp"

namespace {

using nlohmann::json;

struct Flags {
  std::string config;
  std::string out;
  std::optional<int> workers;
  std::optional<int> n;
  std::string n_range;
  std::optional<double> dt;
  std::optional<double> t_end;
  std::optional<double> tau;
  std::optional<double> epsilon;
  std::string fit_model;
  std::string fit_window;
  std::string b_grid;
  std::string input;
  std::string precision;
  std::string parameter;
  std::optional<double> lambda_i;
  std::optional<double> lambda_f;
  std::string sweep_protocol;
  std::optional<std::size_t> stop_after_zeros;
  std::optional<std::size_t> sample_stride;
  bool no_series = false;
  bool quiet = false;
};

// Settings used when no config file is given.
json defaults_for(const std::string& cmd) {
  json j{{"protocol", cmd}, {"parameter", "omega0"}};
  json model{{"omega_x", 0.0}, {"omega_z", -0.25}, {"kappa", 0.1}};
  if (cmd == "quench" || cmd == "sweep") {
    model["omega0_i"] = 0.0;
    model["omega0_f"] = -1.0;
    j["t_end"] = 6.0;
  } else if (cmd == "ramp") {
    model["omega0_i"] = 0.0;
    model["omega0_f"] = -1.0;
    j["t_end"] = 6.0;
    j["tau"] = 5.0;
  } else if (cmd == "magnetization") {
    model["omega0"] = -1.0;
    j["t_end"] = 100.0;
    j["sample_stride"] = 10;
  } else if (cmd == "spectrum") {
    model["omega0"] = -1.0;
  }
  if (cmd != "fit") j["model"] = model;
  return j;
}

btc::ExperimentConfig build_config(const std::string& cmd, const Flags& f) {
  btc::ExperimentConfig c;
  if (!f.config.empty()) {
    c = btc::load_config(f.config);
  } else {
    const char* env = std::getenv(btc::kOutputDirEnv);
    c = btc::ExperimentConfig::from_json(defaults_for(cmd));
    if (cmd == "ramp") c.sweep_protocol = btc::RunProtocol::ramp;
    if (env && *env) c.output_dir = env;
  }
  c.protocol = btc::parse_run_protocol(cmd);
  if (!f.config.empty() && c.output_dir == ".") {
    const char* env = std::getenv(btc::kOutputDirEnv);
    if (env && *env) c.output_dir = env;
  }
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.workers) c.workers = *f.workers;
  if (f.n) {
    c.N = *f.n;
    c.n_range.reset();
  }
  if (!f.n_range.empty()) {
    c.n_range = btc::parse_n_range(f.n_range);
    c.N.reset();
  }
  if (f.dt) c.dt = *f.dt;
  if (f.t_end) c.t_end = *f.t_end;
  if (f.tau) c.tau = *f.tau;
  if (f.epsilon) c.epsilon = *f.epsilon;
  if (!f.parameter.empty()) c.parameter = btc::parse_ramp_parameter(f.parameter);
  if (f.lambda_i) c.lambda_i = *f.lambda_i;
  if (f.lambda_f) c.lambda_f = *f.lambda_f;
  if (!f.sweep_protocol.empty()) c.sweep_protocol = btc::parse_run_protocol(f.sweep_protocol);
  if (cmd == "sweep" && c.sweep_protocol == btc::RunProtocol::ramp && !c.tau) c.tau = 5.0;
  if (f.stop_after_zeros) c.stop_after_zeros = *f.stop_after_zeros;
  if (f.sample_stride) c.sample_stride = *f.sample_stride;
  if (!f.precision.empty()) c.precision = btc::parse_precision(f.precision);
  if (!f.fit_model.empty()) {
    c.fit.model = btc::parse_fit_model(f.fit_model);
    c.fit.enabled = true;
  }
  if (!f.fit_window.empty()) {
    c.fit.window = btc::parse_fit_window(f.fit_window);
    c.fit.enabled = true;
  }
  if (!f.b_grid.empty()) {
    c.fit.b_grid = btc::parse_b_grid(f.b_grid);
    c.fit.enabled = true;
  }
  if (!f.input.empty()) c.fit.input = f.input;
  if (f.no_series) c.write_series = false;
  return c;
}

void print_summary(const btc::RunSummary& s) {
  for (const auto& r : s.records) {
    std::printf("N=%d", r.N);
    if (!r.ok) {
      std::printf("  failed: %s\n", r.error.c_str());
      continue;
    }
    if (const btc::CriticalTime* z = r.first_zero()) {
      char up[32] = "open";
      if (z->t_up) std::snprintf(up, sizeof up, "%.3f", *z->t_up);
      std::printf("  t_down=%.3f  t_up=%s  t_c=%.4f  zeros=%zu", z->t_down, up, z->t_c, r.zeros.size());
    } else if (r.magnetization) {
      std::printf("  late mean=%.6f  peak-to-peak=%.6f  std=%.3g", r.magnetization->mean, r.magnetization->peak_to_peak,
                  r.magnetization->stddev);
    } else if (r.spectrum) {
      std::printf("  zero modes=%d  gap=%.6g  max|Im| slow=%.6g", r.spectrum->zero_count, r.spectrum->gap,
                  r.spectrum->max_imag_slow);
    } else {
      std::printf("  no zero below threshold");
    }
    std::printf("  (%.2fs)\n", r.wall_seconds);
  }
  if (s.fit) {
    std::printf("fit %s:", btc::to_string(s.fit->model).c_str());
    for (const auto& [k, v] : s.fit->params) {
      const auto e = s.fit->param_errors.find(k);
      if (e != s.fit->param_errors.end()) {
        std::printf("  %s=%.3f +- %.3f", k.c_str(), btc::truncate3(v), btc::truncate3(e->second));
      } else {
        std::printf("  %s=%.3f (fixed)", k.c_str(), btc::truncate3(v));
      }
    }
    std::printf("  rms=%.3g\n", s.fit->rms);
  } else if (!s.fit_error.empty()) {
    std::printf("fit failed: %s\n", s.fit_error.c_str());
  }
  std::printf("summary: %s/%s\n", s.config.output_dir.c_str(), s.summary_file.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dissipative collective-spin DQPT simulations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("btc-dqpt ") + btc::version_tag());
  Flags f;

  auto add_common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, std::string("output directory (default: $") + btc::kOutputDirEnv + " or .)");
    sub->add_option("--workers", f.workers, "parallel jobs");
    sub->add_option("--n", f.n, "system size N");
    sub->add_option("--n-range", f.n_range, "START:STOP:STEP (inclusive)");
    sub->add_option("--dt", f.dt, "time step");
    sub->add_option("--t-end", f.t_end, "evolution window (post-ramp window for ramps)");
    sub->add_option("--tau", f.tau, "ramp duration");
    sub->add_option("--epsilon", f.epsilon, "echo zero threshold");
    sub->add_option("--fit-model", f.fit_model, "power | exp | log");
    sub->add_option("--fit-window", f.fit_window, "NMIN:NMAX");
    sub->add_option("--b-grid", f.b_grid, "comma-separated exponents for a power-law grid fit");
    sub->add_option("--input", f.input, "sweep table (N,t_down,t_up,t_c) for fit");
    sub->add_option("--precision", f.precision, "binary64 | extended");
    sub->add_option("--parameter", f.parameter, "varied coupling: omega0 | omega_x | omega_z");
    sub->add_option("--lambda-i", f.lambda_i, "initial value of the varied coupling");
    sub->add_option("--lambda-f", f.lambda_f, "final value of the varied coupling");
    sub->add_option("--sweep-protocol", f.sweep_protocol, "quench | ramp (sweep only)");
    sub->add_option("--stop-after-zeros", f.stop_after_zeros, "stop once this many zero intervals closed (0: never)");
    sub->add_option("--sample-stride", f.sample_stride, "steps between written series rows");
    sub->add_flag("--no-series", f.no_series, "skip per-N series and plot files");
    sub->add_flag("--quiet", f.quiet, "no stdout report");
  };
  for (const char* name : {"quench", "ramp", "sweep", "magnetization", "spectrum", "fit"}) {
    add_common(app.add_subcommand(name, std::string(name) + " protocol"));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? btc::kExitOk : btc::kExitConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    const btc::ExperimentConfig cfg = build_config(cmd, f);
    const btc::RunSummary s = btc::run(cfg);
    if (!f.quiet) print_summary(s);
    return s.exit_code();
  } catch (const btc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return btc::kExitConfig;
  } catch (const btc::DimensionMismatch& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return btc::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return btc::kExitNumerical;
  }
}
