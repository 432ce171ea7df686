#include "btc/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "btc/errors.hpp"

#ifndef BTC_DQPT_VERSION
#define BTC_DQPT_VERSION "0.0.0"
#endif

namespace btc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, sep)) out.push_back(item);
  if (!text.empty() && text.back() == sep) out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const char* what) {
  std::size_t pos = 0;
  int v = 0;
  try {
    v = std::stoi(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": '" + s + "' is not an integer");
  }
  if (pos != s.size()) throw ConfigError(std::string(what) + ": '" + s + "' is not an integer");
  return v;
}

double parse_double(const std::string& s, const char* what) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": '" + s + "' is not a number");
  }
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size()) throw ConfigError(std::string(what) + ": '" + s + "' is not a number");
  return v;
}

// Typed access with config errors instead of json exceptions.
template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

std::pair<int, int> window_from_json(const json& j) {
  if (j.is_string()) return parse_fit_window(j.get<std::string>());
  if (j.is_array() && j.size() == 2) return {j[0].get<int>(), j[1].get<int>()};
  throw ConfigError("fit window must be \"NMIN:NMAX\" or [NMIN, NMAX]");
}

json optional_real(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// JSON numbers cannot hold inf/nan; they are stored as null.
json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double real_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json zero_to_json(const CriticalTime& z) {
  return json{{"index", z.index}, {"t_down", z.t_down}, {"t_up", optional_real(z.t_up)},
              {"open", z.open()},  {"t_c", z.t_c},       {"epsilon", z.epsilon}};
}

CriticalTime zero_from_json(const json& j) {
  CriticalTime z;
  z.index = j.at("index").get<int>();
  z.t_down = j.at("t_down").get<double>();
  if (!j.at("open").get<bool>()) z.t_up = j.at("t_up").get<double>();
  z.t_c = j.at("t_c").get<double>();
  z.epsilon = j.at("epsilon").get<double>();
  return z;
}

json named_to_json(const NamedValues& v) {
  json j = json::object();
  for (const auto& [k, x] : v) j[k] = real_or_null(x);
  return j;
}

NamedValues named_from_json(const json& j) {
  NamedValues v;
  for (const auto& item : j.items()) v[item.key()] = real_from(item.value());
  return v;
}

json fit_to_json(const FitResult& f) {
  NamedValues trunc, trunc_err;
  for (const auto& [k, x] : f.params) trunc[k] = truncate3(x);
  for (const auto& [k, x] : f.param_errors) trunc_err[k] = truncate3(x);
  return json{{"model", to_string(f.model)},
              {"params", named_to_json(f.params)},
              {"param_errors", named_to_json(f.param_errors)},
              {"fixed_params", named_to_json(f.fixed_params)},
              {"rms", f.rms},
              {"converged", f.converged},
              {"iterations", f.iterations},
              {"n_points", f.n_points},
              {"reported", {{"params", named_to_json(trunc)},
                            {"param_errors", named_to_json(trunc_err)},
                            {"rms", truncate3(f.rms)}}}};
}

FitResult fit_from_json(const json& j) {
  FitResult f;
  f.model = parse_fit_model(j.at("model").get<std::string>());
  f.params = named_from_json(j.at("params"));
  f.param_errors = named_from_json(j.at("param_errors"));
  f.fixed_params = named_from_json(j.at("fixed_params"));
  f.rms = j.at("rms").get<double>();
  f.converged = j.at("converged").get<bool>();
  f.iterations = j.at("iterations").get<int>();
  f.n_points = j.at("n_points").get<std::size_t>();
  return f;
}

json branch_to_json(const ExpBranchFit& b) {
  return json{{"a", b.a},     {"b", b.b},   {"c", b.c}, {"rms", b.rms}, {"converged", b.converged}, {"n_points", b.n_points},
              {"t_from", b.t_from}, {"t_to", b.t_to}};
}

ExpBranchFit branch_from_json(const json& j) {
  ExpBranchFit b;
  b.a = j.at("a").get<double>();
  b.b = j.at("b").get<double>();
  b.c = j.at("c").get<double>();
  b.rms = j.at("rms").get<double>();
  b.converged = j.at("converged").get<bool>();
  b.n_points = j.at("n_points").get<std::size_t>();
  b.t_from = j.at("t_from").get<double>();
  b.t_to = j.at("t_to").get<double>();
  return b;
}

json record_to_json(const SizeRecord& r) {
  json zeros = json::array();
  for (const auto& z : r.zeros) zeros.push_back(zero_to_json(z));
  json j{{"N", r.N},
         {"ok", r.ok},
         {"error", r.error},
         {"error_code", r.error_code},
         {"zeros", zeros},
         {"series_file", r.series_file},
         {"wall_seconds", r.wall_seconds},
         {"steps", r.steps},
         {"max_trace_drift", r.max_trace_drift},
         {"max_hermiticity_error", r.max_hermiticity_error},
         {"min_eigenvalue", r.min_eigenvalue},
         {"purity_drift", r.purity_drift},
         {"cusp", nullptr},
         {"cusp_error", r.cusp_error},
         {"magnetization", nullptr},
         {"spectrum", nullptr}};
  if (const CriticalTime* z = r.first_zero()) {
    j["t_down"] = z->t_down;
    j["t_up"] = optional_real(z->t_up);
    j["open"] = z->open();
    j["t_c"] = z->t_c;
  }
  if (r.cusp) {
    j["cusp"] = {{"t_c", r.cusp->t_c},
                 {"t_down", r.cusp->t_down},
                 {"t_up", r.cusp->t_up},
                 {"left", branch_to_json(r.cusp->left)},
                 {"right", branch_to_json(r.cusp->right)}};
  }
  if (r.magnetization) {
    const auto& m = *r.magnetization;
    j["magnetization"] = {{"window_start", m.window_start}, {"mean", m.mean},       {"peak_to_peak", m.peak_to_peak},
                          {"stddev", m.stddev},             {"samples", m.samples}};
  }
  if (r.spectrum) {
    const auto& s = *r.spectrum;
    j["spectrum"] = {{"count", s.eigenvalues.size()}, {"zero_count", s.zero_count},       {"max_real", s.max_real},
                     {"gap", s.gap},                  {"slow_modes", s.slow_modes},      {"max_imag_slow", s.max_imag_slow}};
  }
  return j;
}

SizeRecord record_from_json(const json& j) {
  SizeRecord r;
  r.N = j.at("N").get<int>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.error_code = j.at("error_code").get<int>();
  for (const auto& z : j.at("zeros")) r.zeros.push_back(zero_from_json(z));
  r.series_file = j.at("series_file").get<std::string>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.steps = j.at("steps").get<std::size_t>();
  r.max_trace_drift = j.at("max_trace_drift").get<double>();
  r.max_hermiticity_error = j.at("max_hermiticity_error").get<double>();
  r.min_eigenvalue = j.at("min_eigenvalue").get<double>();
  r.purity_drift = j.at("purity_drift").get<double>();
  r.cusp_error = j.at("cusp_error").get<std::string>();
  if (!j.at("cusp").is_null()) {
    const json& c = j.at("cusp");
    CuspFit f;
    f.t_c = c.at("t_c").get<double>();
    f.t_down = c.at("t_down").get<double>();
    f.t_up = c.at("t_up").get<double>();
    f.left = branch_from_json(c.at("left"));
    f.right = branch_from_json(c.at("right"));
    r.cusp = f;
  }
  if (!j.at("magnetization").is_null()) {
    const json& m = j.at("magnetization");
    r.magnetization = MagnetizationReport{m.at("window_start").get<double>(), m.at("mean").get<double>(),
                                          m.at("peak_to_peak").get<double>(), m.at("stddev").get<double>(),
                                          m.at("samples").get<std::size_t>()};
  }
  if (!j.at("spectrum").is_null()) {
    const json& s = j.at("spectrum");
    SpectrumReport rep;
    rep.zero_count = s.at("zero_count").get<int>();
    rep.max_real = s.at("max_real").get<double>();
    rep.gap = s.at("gap").get<double>();
    rep.slow_modes = s.at("slow_modes").get<std::size_t>();
    rep.max_imag_slow = s.at("max_imag_slow").get<double>();
    r.spectrum = rep;
  }
  return r;
}

// ---------------------------------------------------------------------------
// output files

fs::path prepare_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
  return dir;
}

std::string size_stem(RunProtocol p, int N) { return to_string(p) + "_N" + std::to_string(N); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  return os;
}

std::string gp_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "''";
    else out += c;
  }
  return out + "'";
}

void write_dynamics_plot(const fs::path& dir, const std::string& stem, const std::string& title, int N,
                         const SizeRecord& rec, double epsilon) {
  std::ofstream os = open_out(dir / (stem + ".gp"));
  const std::string data = gp_quote(stem + ".csv");
  os << "# gnuplot -p " << stem << ".gp\n"
     << "set terminal pngcairo size 1000,800\n"
     << "set output " << gp_quote(stem + ".png") << "\n"
     << "set datafile separator ','\n"
     << "set key top right\n"
     << "set multiplot layout 3,1 title " << gp_quote(title + ", N = " + std::to_string(N)) << "\n"
     << "set ylabel 'echo'\nset logscale y\nset format y '10^{%L}'\n"
     << "plot " << data << " using 1:2 with lines lw 2 title 'echo', " << format_real(epsilon)
     << " with lines dt 2 lc rgb 'gray' title 'threshold'\n"
     << "unset logscale y\nset format y '%g'\nset ylabel 'rate'\n";
  os << "plot " << data << " using 1:($3) with lines lw 2 title 'rate'";
  if (rec.cusp) {
    const CuspFit& c = *rec.cusp;
    os << ", \\\n  (x >= " << format_real(c.left.t_from) << " && x <= " << format_real(c.t_c) << ") ? "
       << format_real(c.left.a) << "*exp(" << format_real(c.left.b) << "*(x - " << format_real(c.t_c) << ")) + "
       << format_real(c.left.c) << " : 1/0 with lines dt 2 lw 2 title 'left fit', \\\n  (x >= " << format_real(c.t_c)
       << " && x <= " << format_real(c.right.t_to) << ") ? " << format_real(c.right.a) << "*exp("
       << format_real(c.right.b) << "*(" << format_real(c.t_c) << " - x)) + " << format_real(c.right.c)
       << " : 1/0 with lines dt 2 lw 2 title 'right fit'";
  }
  os << "\nset ylabel '<S_z>/N'\nset xlabel 't'\n"
     << "plot " << data << " using 1:4 with lines lw 2 title '<S_z>/N'\n"
     << "unset multiplot\n";
}

void write_magnetization_plot(const fs::path& dir, const std::string& stem, int N) {
  std::ofstream os = open_out(dir / (stem + ".gp"));
  os << "# gnuplot -p " << stem << ".gp\n"
     << "set terminal pngcairo size 1000,500\n"
     << "set output " << gp_quote(stem + ".png") << "\n"
     << "set datafile separator ','\n"
     << "set xlabel 't'\nset ylabel '<S_z>/N'\n"
     << "plot " << gp_quote(stem + ".csv") << " using 1:4 with lines lw 2 title 'N = " << N << "'\n";
}

void write_spectrum_plot(const fs::path& dir, const std::string& stem, int N) {
  std::ofstream os = open_out(dir / (stem + ".gp"));
  os << "# gnuplot -p " << stem << ".gp\n"
     << "set terminal pngcairo size 800,700\n"
     << "set output " << gp_quote(stem + ".png") << "\n"
     << "set datafile separator ','\n"
     << "set xlabel 'Re'\nset ylabel 'Im'\n"
     << "plot " << gp_quote(stem + ".csv") << " using 1:2 with points pt 7 ps 0.6 title 'N = " << N << "'\n";
}

void write_scaling_plot(const fs::path& dir, const std::string& stem, const std::string& table,
                        const std::optional<FitResult>& fit) {
  std::ofstream os = open_out(dir / (stem + ".gp"));
  os << "# gnuplot -p " << stem << ".gp\n"
     << "set terminal pngcairo size 900,600\n"
     << "set output " << gp_quote(stem + ".png") << "\n"
     << "set datafile separator ','\n"
     << "set xlabel 'N'\nset ylabel 't_c'\n"
     << "plot " << gp_quote(table) << " using 1:4 with points pt 7 lc rgb 'red' title 't_c'";
  if (fit) {
    const NamedValues& p = fit->params;
    const std::string a = format_real(p.at("a")), c = format_real(p.at("c"));
    std::string expr;
    switch (fit->model) {
      case FitModel::power_law: expr = a + "*x**(-" + format_real(p.at("b")) + ") + " + c; break;
      case FitModel::stretched_exp: expr = a + "*exp(-x**" + format_real(p.at("b")) + ") + " + c; break;
      case FitModel::log: expr = a + "*log(x) + " + c; break;
    }
    os << ", \\\n  " << expr << " with lines lw 2 lc rgb 'blue' title '" << to_string(fit->model) << " fit'";
  }
  os << "\n";
}

// ---------------------------------------------------------------------------

struct ModelPair {
  SpinModelParams initial;
  SpinModelParams final;
};

ModelPair models_for(const ExperimentConfig& cfg, int N) {
  SpinModelParams base = cfg.model;
  base.N = N;
  ModelPair out{with(base, cfg.parameter, cfg.lambda_i), with(base, cfg.parameter, cfg.lambda_f)};
  out.initial.validate();
  out.final.validate();
  return out;
}

void copy_traj_stats(SizeRecord& rec, const Trajectory& traj) {
  rec.steps = traj.steps_taken;
  rec.max_trace_drift = traj.max_trace_drift;
  rec.max_hermiticity_error = traj.max_hermiticity_error;
  rec.min_eigenvalue = traj.min_eigenvalue;
}

void attach_cusp(SizeRecord& rec, const ExperimentConfig& cfg, const EchoSeries& series) {
  if (!cfg.cusp) return;
  const CriticalTime* z = rec.first_zero();
  if (!z || z->open()) return;
  try {
    rec.cusp = cusp_extrapolation(series, z->t_c, cfg.cusp_options);
  } catch (const std::exception& e) {
    rec.cusp_error = e.what();
  }
}

int code_for(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ConfigError&) {
    return kExitConfig;
  } catch (const DimensionMismatch&) {
    return kExitConfig;
  } catch (const std::exception&) {
    return kExitNumerical;
  }
}

std::string message_for(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const std::exception& e) {
    return e.what();
  } catch (...) {
    return "unknown error";
  }
}

using SizeFn = SizeRecord (*)(const ExperimentConfig&, int);

SizeFn size_fn(RunProtocol p) {
  switch (p) {
    case RunProtocol::quench: return &quench_size;
    case RunProtocol::ramp: return &ramp_size;
    case RunProtocol::magnetization: return &magnetization_size;
    case RunProtocol::spectrum: return &spectrum_size;
    default: break;
  }
  throw ConfigError("protocol " + to_string(p) + " has no per-N driver");
}

// Runs fn for every N on a bounded pool. Records come back in the order of
// `sizes`; failures are captured in the records.
std::vector<SizeRecord> run_pool(const ExperimentConfig& cfg, SizeFn fn, const std::vector<int>& sizes,
                                 std::vector<std::exception_ptr>& errors) {
  const std::size_t n = sizes.size();
  std::vector<SizeRecord> out(n);
  errors.assign(n, nullptr);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        out[i] = fn(cfg, sizes[i]);
      } catch (...) {
        errors[i] = std::current_exception();
        out[i] = SizeRecord{};
        out[i].N = sizes[i];
        out[i].ok = false;
        out[i].error = message_for(errors[i]);
        out[i].error_code = code_for(errors[i]);
      }
      out[i].wall_seconds = seconds_since(t0);
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.workers, 1)), n);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return out;
}

void write_summary(RunSummary& s, const fs::path& dir, const std::string& stem) {
  s.summary_file = stem + "_summary.json";
  std::ofstream os = open_out(dir / s.summary_file);
  os << s.to_json().dump(2) << '\n';
}

std::string range_stem(RunProtocol p, const std::vector<int>& sizes) {
  if (sizes.size() == 1) return size_stem(p, sizes.front());
  return to_string(p) + "_N" + std::to_string(sizes.front()) + "-" + std::to_string(sizes.back());
}

RunSummary run_simple(const ExperimentConfig& cfg, RunProtocol p) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig c = cfg;
  c.protocol = p;
  c.validate();
  const fs::path dir = prepare_dir(c);
  std::vector<int> sizes = c.sizes();
  std::sort(sizes.begin(), sizes.end());
  std::vector<std::exception_ptr> errors;
  RunSummary s;
  s.config = c;
  s.records = run_pool(c, size_fn(p), sizes, errors);
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  s.wall_seconds = seconds_since(t0);
  write_summary(s, dir, range_stem(p, sizes));
  return s;
}

std::optional<FitResult> fit_dataset(const ExperimentConfig& cfg, ScalingDataset data, std::string& error) {
  data.window = cfg.fit.window;
  try {
    if (!cfg.fit.b_grid.empty()) return grid_fit_exponent(data, cfg.fit.b_grid);
    return fit_model(data, cfg.fit.model);
  } catch (const std::exception& e) {
    error = e.what();
    return std::nullopt;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(RunProtocol p) {
  switch (p) {
    case RunProtocol::quench: return "quench";
    case RunProtocol::ramp: return "ramp";
    case RunProtocol::magnetization: return "magnetization";
    case RunProtocol::spectrum: return "spectrum";
    case RunProtocol::sweep: return "sweep";
    case RunProtocol::fit: return "fit";
  }
  return "?";
}

RunProtocol parse_run_protocol(const std::string& name) {
  for (RunProtocol p : {RunProtocol::quench, RunProtocol::ramp, RunProtocol::magnetization, RunProtocol::spectrum,
                        RunProtocol::sweep, RunProtocol::fit}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown protocol '" + name + "'");
}

std::string version_tag() { return BTC_DQPT_VERSION; }

std::vector<int> NRange::values() const {
  if (step <= 0) throw ConfigError("N range step must be > 0");
  if (stop < start) throw ConfigError("N range is empty");
  std::vector<int> out;
  for (int n = start; n <= stop; n += step) out.push_back(n);
  return out;
}

NRange parse_n_range(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 2 && parts.size() != 3) throw ConfigError("N range must be START:STOP[:STEP], got '" + text + "'");
  NRange r;
  r.start = parse_int(parts[0], "N range");
  r.stop = parse_int(parts[1], "N range");
  r.step = parts.size() == 3 ? parse_int(parts[2], "N range") : 1;
  r.values();
  return r;
}

std::pair<int, int> parse_fit_window(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 2) throw ConfigError("fit window must be NMIN:NMAX, got '" + text + "'");
  const std::pair<int, int> w{parse_int(parts[0], "fit window"), parse_int(parts[1], "fit window")};
  if (w.first > w.second) throw ConfigError("fit window is empty");
  return w;
}

std::vector<double> parse_b_grid(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : split(text, ',')) out.push_back(parse_double(p, "b grid"));
  if (out.empty()) throw ConfigError("b grid is empty");
  return out;
}

double ExperimentConfig::epsilon_or_default() const {
  if (epsilon) return *epsilon;
  return single_protocol() == RunProtocol::ramp ? kRampEpsilon : kQuenchEpsilon;
}

std::vector<int> ExperimentConfig::sizes() const {
  if (N) return {*N};
  if (n_range) return n_range->values();
  throw ConfigError("config needs N or n_range");
}

void ExperimentConfig::validate() const {
  const RunProtocol p = single_protocol();
  if (protocol == RunProtocol::sweep && p != RunProtocol::quench && p != RunProtocol::ramp) {
    throw ConfigError("sweep protocol must be quench or ramp");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (output_dir.empty()) throw ConfigError("output directory is empty");
  if (p == RunProtocol::fit) {
    if (fit.input.empty()) throw ConfigError("fit needs an input table");
    if (fit.window && fit.window->first > fit.window->second) throw ConfigError("fit window is empty");
    return;
  }
  for (int n : sizes()) {
    if (n < 1) throw ConfigError("N must be >= 1");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be > 0");
  if (sample_stride < 1) throw ConfigError("sample_stride must be >= 1");
  if (epsilon && !(*epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!std::isfinite(lambda_i) || !std::isfinite(lambda_f)) throw ConfigError("coupling values must be finite");
  if (p != RunProtocol::spectrum) {
    if (!t_end) throw ConfigError("t_end is required for " + to_string(p));
    if (!(*t_end > 0.0) || !std::isfinite(*t_end)) throw ConfigError("t_end must be > 0");
  }
  if (p == RunProtocol::ramp) {
    if (!tau) throw ConfigError("tau is required for ramps");
    RampSchedule{parameter, lambda_i, lambda_f, *tau}.validate();
    const double ratio = *tau / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio)) throw ConfigError("dt must divide tau");
  }
  if (p == RunProtocol::spectrum) {
    for (int n : sizes()) {
      if (n + 1 > liouvillian_max_dim) {
        throw ConfigError("spectrum: N = " + std::to_string(n) + " exceeds the superoperator cap (dim " +
                          std::to_string(liouvillian_max_dim) + ")");
      }
    }
  }
  if (cusp && (!(cusp_options.window_left > 0.0) || !(cusp_options.window_right > 0.0))) {
    throw ConfigError("cusp windows must be > 0");
  }
  if (fit.window && fit.window->first > fit.window->second) throw ConfigError("fit window is empty");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j,
             {"protocol", "sweep_protocol", "parameter", "model", "N", "n_range", "dt", "t_end", "tau", "epsilon",
              "sample_stride", "stop_after_zeros", "precision", "fit", "cusp", "liouvillian_max_dim", "output_dir",
              "workers", "write_series"},
             "config");
  ExperimentConfig c;
  if (!j.contains("protocol")) throw ConfigError("config needs a protocol");
  c.protocol = parse_run_protocol(get_as<std::string>(j, "protocol"));
  if (j.contains("sweep_protocol")) c.sweep_protocol = parse_run_protocol(get_as<std::string>(j, "sweep_protocol"));
  if (j.contains("parameter")) c.parameter = parse_ramp_parameter(get_as<std::string>(j, "parameter"));

  const json model = j.value("model", json::object());
  const std::string pname = to_string(c.parameter);
  std::set<std::string> allowed;
  for (const char* n : {"omega0", "omega_x", "omega_z", "kappa"}) allowed.insert(n);
  allowed.insert(pname + "_i");
  allowed.insert(pname + "_f");
  check_keys(model, allowed, "model");
  auto real = [&](const char* key, double fallback) {
    if (!model.contains(key)) return fallback;
    try {
      return model.at(key).get<double>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model key '") + key + "': " + e.what());
    }
  };
  c.model.omega0 = real("omega0", c.model.omega0);
  c.model.omega_x = real("omega_x", c.model.omega_x);
  c.model.omega_z = real("omega_z", c.model.omega_z);
  c.model.kappa = real("kappa", c.model.kappa);
  const bool has_i = model.contains(pname + "_i"), has_f = model.contains(pname + "_f");
  const bool has_plain = model.contains(pname);
  const bool needs_coupling = c.single_protocol() != RunProtocol::fit;
  if (has_i != has_f) throw ConfigError("model needs both " + pname + "_i and " + pname + "_f");
  if (has_i) {
    c.lambda_i = real((pname + "_i").c_str(), 0.0);
    c.lambda_f = real((pname + "_f").c_str(), 0.0);
  } else if (has_plain) {
    c.lambda_i = c.lambda_f = get(c.model, c.parameter);
  } else if (needs_coupling) {
    throw ConfigError("model needs " + pname + "_i/" + pname + "_f or a fixed " + pname);
  }

  if (j.contains("N")) c.N = get_as<int>(j, "N");
  if (j.contains("n_range")) {
    const json& r = j.at("n_range");
    if (r.is_string()) {
      c.n_range = parse_n_range(r.get<std::string>());
    } else if (r.is_array() && (r.size() == 2 || r.size() == 3)) {
      c.n_range = NRange{r[0].get<int>(), r[1].get<int>(), r.size() == 3 ? r[2].get<int>() : 1};
    } else if (r.is_object()) {
      check_keys(r, {"start", "stop", "step"}, "n_range");
      c.n_range = NRange{get_as<int>(r, "start"), get_as<int>(r, "stop"), r.value("step", 1)};
    } else {
      throw ConfigError("n_range must be \"START:STOP:STEP\", [start, stop, step] or an object");
    }
  }
  if (c.N && c.n_range) throw ConfigError("give either N or n_range, not both");
  if (j.contains("dt")) c.dt = get_as<double>(j, "dt");
  if (j.contains("t_end")) c.t_end = get_as<double>(j, "t_end");
  if (j.contains("tau")) c.tau = get_as<double>(j, "tau");
  if (j.contains("epsilon")) c.epsilon = get_as<double>(j, "epsilon");
  if (j.contains("sample_stride")) c.sample_stride = get_as<std::size_t>(j, "sample_stride");
  if (j.contains("stop_after_zeros")) c.stop_after_zeros = get_as<std::size_t>(j, "stop_after_zeros");
  if (j.contains("precision")) c.precision = parse_precision(get_as<std::string>(j, "precision"));
  if (j.contains("liouvillian_max_dim")) c.liouvillian_max_dim = get_as<int>(j, "liouvillian_max_dim");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir");
  if (j.contains("workers")) c.workers = get_as<int>(j, "workers");
  if (j.contains("write_series")) c.write_series = get_as<bool>(j, "write_series");

  if (j.contains("fit")) {
    const json& f = j.at("fit");
    check_keys(f, {"enabled", "model", "window", "b_grid", "input"}, "fit");
    c.fit.enabled = f.value("enabled", true);
    if (f.contains("model")) c.fit.model = parse_fit_model(get_as<std::string>(f, "model"));
    if (f.contains("window") && !f.at("window").is_null()) c.fit.window = window_from_json(f.at("window"));
    if (f.contains("b_grid")) {
      const json& g = f.at("b_grid");
      c.fit.b_grid = g.is_string() ? parse_b_grid(g.get<std::string>()) : g.get<std::vector<double>>();
    }
    if (f.contains("input")) c.fit.input = get_as<std::string>(f, "input");
  }
  if (j.contains("cusp")) {
    const json& cu = j.at("cusp");
    if (cu.is_boolean()) {
      c.cusp = cu.get<bool>();
    } else {
      check_keys(cu, {"enabled", "window_left", "window_right", "min_points"}, "cusp");
      c.cusp = cu.value("enabled", true);
      c.cusp_options.window_left = cu.value("window_left", c.cusp_options.window_left);
      c.cusp_options.window_right = cu.value("window_right", c.cusp_options.window_right);
      c.cusp_options.min_points = cu.value("min_points", c.cusp_options.min_points);
    }
  }
  return c;
}

json ExperimentConfig::to_json() const {
  const std::string pname = to_string(parameter);
  json model{{"omega0", this->model.omega0},
             {"omega_x", this->model.omega_x},
             {"omega_z", this->model.omega_z},
             {"kappa", this->model.kappa}};
  model.erase(pname);
  model[pname + "_i"] = lambda_i;
  model[pname + "_f"] = lambda_f;
  json j{{"protocol", to_string(protocol)},
         {"sweep_protocol", to_string(sweep_protocol)},
         {"parameter", pname},
         {"model", model},
         {"dt", dt},
         {"sample_stride", sample_stride},
         {"stop_after_zeros", stop_after_zeros},
         {"precision", to_string(precision)},
         {"liouvillian_max_dim", liouvillian_max_dim},
         {"output_dir", output_dir},
         {"workers", workers},
         {"write_series", write_series}};
  if (N) j["N"] = *N;
  if (n_range) j["n_range"] = {{"start", n_range->start}, {"stop", n_range->stop}, {"step", n_range->step}};
  if (t_end) j["t_end"] = *t_end;
  if (tau) j["tau"] = *tau;
  if (epsilon) j["epsilon"] = *epsilon;
  json f{{"enabled", fit.enabled}, {"model", to_string(fit.model)}, {"b_grid", fit.b_grid}, {"input", fit.input}};
  f["window"] = fit.window ? json::array({fit.window->first, fit.window->second}) : json(nullptr);
  j["fit"] = f;
  j["cusp"] = {{"enabled", cusp},
               {"window_left", cusp_options.window_left},
               {"window_right", cusp_options.window_right},
               {"min_points", cusp_options.min_points}};
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

MagnetizationReport late_window_report(const std::vector<double>& times, const std::vector<double>& sz,
                                       double fraction) {
  if (times.empty() || times.size() != sz.size()) throw ConfigError("magnetization report: empty or mismatched series");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("magnetization report: fraction must be in (0, 1]");
  MagnetizationReport r;
  r.window_start = times.back() - fraction * (times.back() - times.front());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  std::vector<double> w;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] + 1e-12 < r.window_start) continue;
    w.push_back(sz[i]);
    lo = std::min(lo, sz[i]);
    hi = std::max(hi, sz[i]);
    sum += sz[i];
  }
  r.samples = w.size();
  r.mean = sum / static_cast<double>(w.size());
  r.peak_to_peak = hi - lo;
  double var = 0.0;
  for (double x : w) var += (x - r.mean) * (x - r.mean);
  r.stddev = std::sqrt(var / static_cast<double>(w.size()));
  return r;
}

SpectrumReport analyze_spectrum(std::vector<std::complex<double>> ev, int dim) {
  SpectrumReport r;
  std::sort(ev.begin(), ev.end(), [](const cplx& a, const cplx& b) {
    if (a.real() != b.real()) return a.real() > b.real();
    return a.imag() < b.imag();
  });
  r.eigenvalues = ev;
  if (ev.empty()) return r;
  r.max_real = ev.front().real();
  std::vector<cplx> nonzero;
  for (const cplx& z : ev) {
    if (std::abs(z) <= 1e-10) ++r.zero_count;
    else nonzero.push_back(z);
  }
  if (!nonzero.empty()) {
    r.gap = -nonzero.front().real();
    r.slow_modes = std::min<std::size_t>(nonzero.size(), static_cast<std::size_t>(std::max(dim - 1, 1)));
    for (std::size_t k = 0; k < r.slow_modes; ++k) r.max_imag_slow = std::max(r.max_imag_slow, std::abs(nonzero[k].imag()));
  }
  return r;
}

int RunSummary::exit_code() const {
  int code = kExitOk;
  for (const auto& r : records) {
    if (!r.ok) code = config.protocol == RunProtocol::sweep ? kExitPartial : std::max(code, r.error_code);
  }
  if (partial) code = kExitPartial;
  return code;
}

json RunSummary::to_json() const {
  json recs = json::array();
  for (const auto& r : records) recs.push_back(record_to_json(r));
  return json{{"config", config.to_json()},
              {"records", recs},
              {"fit", fit ? fit_to_json(*fit) : json(nullptr)},
              {"fit_error", fit_error},
              {"table_file", table_file},
              {"summary_file", summary_file},
              {"wall_seconds", wall_seconds},
              {"version", version},
              {"partial", partial},
              {"exit_code", exit_code()}};
}

RunSummary RunSummary::from_json(const json& j) {
  RunSummary s;
  s.config = ExperimentConfig::from_json(j.at("config"));
  for (const auto& r : j.at("records")) s.records.push_back(record_from_json(r));
  if (!j.at("fit").is_null()) s.fit = fit_from_json(j.at("fit"));
  s.fit_error = j.at("fit_error").get<std::string>();
  s.table_file = j.at("table_file").get<std::string>();
  s.summary_file = j.at("summary_file").get<std::string>();
  s.wall_seconds = j.at("wall_seconds").get<double>();
  s.version = j.at("version").get<std::string>();
  s.partial = j.at("partial").get<bool>();
  return s;
}

std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_series_csv(const fs::path& path, const EchoSeries& s) {
  std::ofstream os = open_out(path);
  os << "time,echo,rate,sz\n";
  const bool sz = s.has_sz();
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << format_real(s.times[i]) << ',' << format_real(s.echo[i]) << ','
       << (s.rate[i] ? format_real(*s.rate[i]) : std::string("inf")) << ','
       << (sz ? format_real(s.sz[i]) : std::string("nan")) << '\n';
  }
}

void write_sweep_csv(const fs::path& path, const std::vector<SizeRecord>& records) {
  std::ofstream os = open_out(path);
  os << "N,t_down,t_up,t_c\n";
  for (const auto& r : records) {
    os << r.N << ',';
    if (const CriticalTime* z = r.first_zero(); r.ok && z) {
      os << format_real(z->t_down) << ',' << (z->t_up ? format_real(*z->t_up) : std::string()) << ','
         << format_real(z->t_c);
    } else {
      os << ",,";
    }
    os << '\n';
  }
}

ScalingDataset read_sweep_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open sweep table '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("sweep table '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "N,t_down,t_up,t_c") throw ConfigError("sweep table: unexpected header '" + line + "'");
  ScalingDataset d;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw ConfigError("sweep table: expected 4 fields in '" + line + "'");
    if (f[3].empty()) continue;
    d.add(parse_int(f[0], "sweep table N"), parse_double(f[3], "sweep table t_c"));
  }
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// drivers

SizeRecord quench_size(const ExperimentConfig& cfg, int N) {
  const ModelPair m = models_for(cfg, N);
  const PureState psi0 = ground_state(build_model(m.initial).H);
  const double eps = cfg.epsilon_or_default();
  QuenchEchoRecorder rec(psi0, N, eps, cfg.sample_stride, cfg.stop_after_zeros,
                         cfg.cusp ? cfg.cusp_options.window_right : 0.0);
  EvolutionOptions opt;
  opt.dt = cfg.dt;
  opt.sample_stride = std::numeric_limits<std::size_t>::max();
  opt.precision = cfg.precision;
  const Trajectory traj = evolve_quench(DensityMatrix::from_pure(psi0), m.final, *cfg.t_end, opt, rec.observer());

  SizeRecord out;
  out.N = N;
  out.ok = true;
  copy_traj_stats(out, traj);
  out.zeros = rec.zeros();
  const EchoSeries series = rec.take_series();
  attach_cusp(out, cfg, series);
  if (cfg.write_series) {
    const fs::path dir = prepare_dir(cfg);
    const std::string stem = size_stem(RunProtocol::quench, N);
    out.series_file = stem + ".csv";
    write_series_csv(dir / out.series_file, series);
    write_dynamics_plot(dir, stem, "quench", N, out, eps);
  }
  return out;
}

SizeRecord ramp_size(const ExperimentConfig& cfg, int N) {
  const ModelPair m = models_for(cfg, N);
  const PureState psi0 = ground_state(build_model(m.initial).H);
  const double eps = cfg.epsilon_or_default();
  EvolutionOptions opt;
  opt.dt = cfg.dt;
  opt.sample_stride = std::numeric_limits<std::size_t>::max();
  opt.precision = cfg.precision;
  SpinModelParams base = cfg.model;
  base.N = N;
  const RampSchedule schedule{cfg.parameter, cfg.lambda_i, cfg.lambda_f, *cfg.tau};
  const Trajectory traj = evolve_ramp_trajectory(DensityMatrix::from_pure(psi0), base, schedule, opt);

  SizeRecord out;
  out.N = N;
  out.ok = true;
  copy_traj_stats(out, traj);

  // dissipation off after the ramp
  const RampEchoEvaluator eval(traj.final_state.matrix(), build_model(m.final).H);
  const auto n_post = static_cast<std::size_t>(std::llround(*cfg.t_end / cfg.dt));
  const std::size_t purity_stride = 1000;
  const double purity0 = eval.purity(0.0);
  EchoSeries series;
  series.N = N;
  series.epsilon = eps;
  ZeroDetector det(eps, cfg.stop_after_zeros == 0 ? std::numeric_limits<std::size_t>::max() : cfg.stop_after_zeros);
  // past the last requested zero, keep going long enough for the cusp fit
  const double linger = cfg.cusp ? cfg.cusp_options.window_right : 0.0;
  std::optional<double> stop_at;
  std::size_t k = 0;
  for (; k <= n_post; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    if (det.done()) {
      if (!stop_at) stop_at = t - cfg.dt + linger;
      if (t > *stop_at + 1e-9) break;
    }
    const double e = clamp_echo(eval.echo(t));
    det.push(t, e);
    if (k % cfg.sample_stride == 0) series.push(t, e, eval.sz_per_n(t));
    if (k % purity_stride == 0 || k == n_post) {
      const double drift = std::abs(eval.purity(t) - purity0);
      out.purity_drift = std::max(out.purity_drift, drift);
      if (drift > 1e-10) throw InvariantViolation("unitary-stage purity drift " + std::to_string(drift), t);
    }
  }
  det.finish();
  out.zeros = det.records();
  out.steps += k;
  attach_cusp(out, cfg, series);
  if (cfg.write_series) {
    const fs::path dir = prepare_dir(cfg);
    const std::string stem = size_stem(RunProtocol::ramp, N);
    out.series_file = stem + ".csv";
    write_series_csv(dir / out.series_file, series);
    write_dynamics_plot(dir, stem, "post-ramp", N, out, eps);
  }
  return out;
}

SizeRecord magnetization_size(const ExperimentConfig& cfg, int N) {
  const ModelPair m = models_for(cfg, N);
  const PureState psi0 = ground_state(build_model(m.final).H);
  QuenchEchoRecorder rec(psi0, N, cfg.epsilon_or_default(), cfg.sample_stride, 0);
  EvolutionOptions opt;
  opt.dt = cfg.dt;
  opt.sample_stride = std::numeric_limits<std::size_t>::max();
  opt.precision = cfg.precision;
  const Trajectory traj = evolve_quench(DensityMatrix::from_pure(psi0), m.final, *cfg.t_end, opt, rec.observer());

  SizeRecord out;
  out.N = N;
  out.ok = true;
  copy_traj_stats(out, traj);
  const EchoSeries series = rec.take_series();
  out.magnetization = late_window_report(series.times, series.sz);
  if (cfg.write_series) {
    const fs::path dir = prepare_dir(cfg);
    const std::string stem = size_stem(RunProtocol::magnetization, N);
    out.series_file = stem + ".csv";
    write_series_csv(dir / out.series_file, series);
    write_magnetization_plot(dir, stem, N);
  }
  return out;
}

SizeRecord spectrum_size(const ExperimentConfig& cfg, int N) {
  const ModelPair m = models_for(cfg, N);
  const OperatorSet ops = build_model(m.final);
  const Matrix M = liouvillian_matrix(ops.H, ops.L, cfg.liouvillian_max_dim);
  SizeRecord out;
  out.N = N;
  out.ok = true;
  out.spectrum = analyze_spectrum(liouvillian_spectrum(M), ops.dim);
  if (cfg.write_series) {
    const fs::path dir = prepare_dir(cfg);
    const std::string stem = size_stem(RunProtocol::spectrum, N);
    out.series_file = stem + ".csv";
    std::ofstream os = open_out(dir / out.series_file);
    os << "re,im\n";
    for (const cplx& z : out.spectrum->eigenvalues) os << format_real(z.real()) << ',' << format_real(z.imag()) << '\n';
    write_spectrum_plot(dir, stem, N);
  }
  return out;
}

RunSummary run_quench(const ExperimentConfig& cfg) { return run_simple(cfg, RunProtocol::quench); }
RunSummary run_ramp(const ExperimentConfig& cfg) { return run_simple(cfg, RunProtocol::ramp); }
RunSummary run_magnetization(const ExperimentConfig& cfg) { return run_simple(cfg, RunProtocol::magnetization); }
RunSummary run_spectrum(const ExperimentConfig& cfg) { return run_simple(cfg, RunProtocol::spectrum); }

RunSummary run_sweep(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig c = cfg;
  c.protocol = RunProtocol::sweep;
  c.validate();
  const fs::path dir = prepare_dir(c);
  std::vector<int> sizes = c.sizes();
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  RunSummary s;
  s.config = c;
  std::vector<std::exception_ptr> errors;
  s.records = run_pool(c, size_fn(c.sweep_protocol), sizes, errors);
  s.partial = std::any_of(s.records.begin(), s.records.end(), [](const SizeRecord& r) { return !r.ok; });

  const std::string stem = "sweep_" + to_string(c.sweep_protocol);
  s.table_file = stem + ".csv";
  write_sweep_csv(dir / s.table_file, s.records);
  if (c.fit.enabled) {
    ScalingDataset data;
    data.protocol = to_string(c.sweep_protocol);
    for (const auto& r : s.records) {
      if (const CriticalTime* z = r.first_zero(); r.ok && z) data.add(r.N, z->t_c);
    }
    s.fit = fit_dataset(c, data, s.fit_error);
    if (!s.fit) s.partial = true;
  }
  write_scaling_plot(dir, stem, s.table_file, s.fit);
  s.wall_seconds = seconds_since(t0);
  write_summary(s, dir, stem);
  return s;
}

RunSummary run_fit(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig c = cfg;
  c.protocol = RunProtocol::fit;
  c.fit.enabled = true;
  c.validate();
  const fs::path dir = prepare_dir(c);
  ScalingDataset data = read_sweep_csv(c.fit.input);
  RunSummary s;
  s.config = c;
  data.window = c.fit.window;
  if (!c.fit.b_grid.empty()) {
    s.fit = grid_fit_exponent(data, c.fit.b_grid);
  } else {
    s.fit = fit_model(data, c.fit.model);
  }
  const std::string stem = "fit_" + to_string(s.fit->model);
  // the plot reads the input table where it is
  write_scaling_plot(dir, stem, fs::absolute(c.fit.input).string(), s.fit);
  s.wall_seconds = seconds_since(t0);
  write_summary(s, dir, stem);
  return s;
}

RunSummary run(const ExperimentConfig& cfg) {
  switch (cfg.protocol) {
    case RunProtocol::quench: return run_quench(cfg);
    case RunProtocol::ramp: return run_ramp(cfg);
    case RunProtocol::magnetization: return run_magnetization(cfg);
    case RunProtocol::spectrum: return run_spectrum(cfg);
    case RunProtocol::sweep: return run_sweep(cfg);
    case RunProtocol::fit: return run_fit(cfg);
  }
  throw ConfigError("unknown protocol");
}

}  // namespace btc
