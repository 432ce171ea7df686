#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "btc/errors.hpp"
#include "btc/runner.hpp"
#include "test_util.hpp"

namespace btc {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig quench_config(const fs::path& dir, int N, double t_end = 6.0) {
  return ExperimentConfig::from_json(json{{"protocol", "quench"},
                                          {"model", {{"omega0_i", 0.0}, {"omega0_f", -1.0}, {"omega_z", -0.25}, {"kappa", 0.1}}},
                                          {"N", N},
                                          {"t_end", t_end},
                                          {"output_dir", dir.string()}});
}

TEST(Config, JsonRoundTrip) {
  const json src{{"protocol", "sweep"},
                 {"sweep_protocol", "ramp"},
                 {"parameter", "omega_x"},
                 {"model", {{"omega_x_i", 0.1}, {"omega_x_f", -0.3}, {"omega0", -1.0}, {"omega_z", -0.25}, {"kappa", 0.2}}},
                 {"n_range", "50:90:20"},
                 {"dt", 0.002},
                 {"t_end", 8.0},
                 {"tau", 4.0},
                 {"epsilon", 1e-12},
                 {"sample_stride", 5},
                 {"stop_after_zeros", 2},
                 {"precision", "extended"},
                 {"fit", {{"model", "log"}, {"window", "60:90"}, {"b_grid", "2,2.5"}}},
                 {"cusp", {{"window_left", 0.5}, {"window_right", 0.75}}},
                 {"workers", 3},
                 {"output_dir", "somewhere"},
                 {"write_series", false}};
  const ExperimentConfig c = ExperimentConfig::from_json(src);
  EXPECT_EQ(c.sweep_protocol, RunProtocol::ramp);
  EXPECT_EQ(c.parameter, RampParameter::omega_x);
  EXPECT_EQ(c.lambda_i, 0.1);
  EXPECT_EQ(c.lambda_f, -0.3);
  EXPECT_EQ(c.model.omega0, -1.0);
  EXPECT_EQ(c.sizes(), (std::vector<int>{50, 70, 90}));
  EXPECT_EQ(c.fit.window, std::make_pair(60, 90));
  EXPECT_EQ(c.fit.b_grid, (std::vector<double>{2.0, 2.5}));
  EXPECT_EQ(c.precision, Precision::extended);
  EXPECT_EQ(c.cusp_options.window_right, 0.75);
  EXPECT_NO_THROW(c.validate());
  const json once = c.to_json();
  EXPECT_EQ(ExperimentConfig::from_json(once).to_json(), once);
}

TEST(Config, Rejections) {
  const json base{{"protocol", "quench"}, {"model", {{"omega0_i", 0.0}, {"omega0_f", -1.0}}}, {"N", 10}, {"t_end", 1.0}};
  EXPECT_NO_THROW(ExperimentConfig::from_json(base).validate());
  json j = base;
  j["colour"] = 1;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["model"] = {{"omega0_i", 0.0}};
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["n_range"] = "10:20";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = base;
  j["dt"] = -1.0;
  EXPECT_THROW(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = base;
  j.erase("t_end");
  EXPECT_THROW(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = base;
  j["protocol"] = "ramp";
  j["tau"] = 1.0;
  j["dt"] = 0.3;
  EXPECT_THROW(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = base;
  j["protocol"] = "spectrum";
  j["N"] = 80;
  EXPECT_THROW(ExperimentConfig::from_json(j).validate(), ConfigError);
  j = base;
  j["protocol"] = "teleport";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
}

TEST(Config, LoadFromFileWithComments) {
  const fs::path dir = testing::scratch_dir("load");
  std::ofstream(dir / "c.json") << "{ // quench\n \"protocol\": \"quench\", \"model\": {\"omega0_i\": 0, \"omega0_f\": -1},"
                                   " \"N\": 12, \"t_end\": 2 }\n";
  EXPECT_EQ(*load_config(dir / "c.json").N, 12);
  std::ofstream(dir / "bad.json") << "{ protocol: }";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
}

TEST(Parsing, RangesWindowsGrids) {
  EXPECT_EQ(parse_n_range("50:300:10").values().size(), 26u);
  EXPECT_EQ(parse_n_range("5:7").values(), (std::vector<int>{5, 6, 7}));
  EXPECT_THROW(parse_n_range("5:x"), ConfigError);
  EXPECT_THROW(parse_n_range("9:5:1"), ConfigError);
  EXPECT_THROW(parse_n_range("5:9:0"), ConfigError);
  EXPECT_EQ(parse_fit_window("1045:2900"), std::make_pair(1045, 2900));
  EXPECT_THROW(parse_fit_window("1045"), ConfigError);
  EXPECT_EQ(parse_b_grid("2, 2.25,2.5"), (std::vector<double>{2.0, 2.25, 2.5}));
  EXPECT_THROW(parse_b_grid("2,,3"), ConfigError);
  EXPECT_FALSE(version_tag().empty());
}

TEST(Reports, LateWindow) {
  std::vector<double> t, sz;
  for (int k = 0; k <= 1000; ++k) {
    t.push_back(0.1 * k);
    sz.push_back(k < 750 ? 0.0 : 0.2 * std::sin(0.1 * k));
  }
  const MagnetizationReport r = late_window_report(t, sz);
  EXPECT_NEAR(r.window_start, 75.0, 1e-12);
  EXPECT_EQ(r.samples, 251u);
  EXPECT_NEAR(r.peak_to_peak, 0.4, 1e-3);
  EXPECT_NEAR(r.stddev, 0.2 / std::sqrt(2.0), 1e-2);
  EXPECT_THROW(late_window_report({}, {}), ConfigError);
}

TEST(Reports, SpectrumSpinHalf) {
  const SpectrumReport r = analyze_spectrum({0.0, -0.1, -0.1, -0.2}, 2);
  EXPECT_EQ(r.zero_count, 1);
  EXPECT_NEAR(r.gap, 0.1, 1e-15);
  EXPECT_EQ(r.slow_modes, 1u);
}

TEST(Drivers, SpectrumBtcHasFasterSlowOscillation) {
  auto run_at = [](double w0) {
    ExperimentConfig c = ExperimentConfig::from_json(
        json{{"protocol", "spectrum"}, {"model", {{"omega0", w0}}}, {"N", 20}, {"write_series", false}});
    return spectrum_size(c, 20).spectrum.value();
  };
  const SpectrumReport btc = run_at(-1.0), still = run_at(0.0);
  EXPECT_EQ(btc.zero_count, 1);
  EXPECT_EQ(still.zero_count, 1);
  EXPECT_LE(btc.max_real, 1e-10);
  EXPECT_GT(btc.max_imag_slow, still.max_imag_slow);
}

TEST(Drivers, TrivialQuenchHasNoZeros) {
  const fs::path dir = testing::scratch_dir("trivial");
  ExperimentConfig c = quench_config(dir, 8, 3.0);
  c.lambda_i = c.lambda_f = -1.0;
  c.model.kappa = 0.0;
  const RunSummary s = run(c);
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_TRUE(s.records[0].zeros.empty());
  EXPECT_EQ(s.exit_code(), kExitOk);
  std::ifstream is(dir / s.records[0].series_file);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "time,echo,rate,sz");
  while (std::getline(is, line)) {
    const double echo = std::stod(line.substr(line.find(',') + 1));
    EXPECT_NEAR(echo, 1.0, 1e-9);
  }
}

TEST(Drivers, ClosedMagnetizationIsConstant) {
  const fs::path dir = testing::scratch_dir("magnet");
  ExperimentConfig c = ExperimentConfig::from_json(json{{"protocol", "magnetization"},
                                                        {"model", {{"omega0", -1.0}, {"kappa", 0.0}}},
                                                        {"N", 10},
                                                        {"t_end", 5.0},
                                                        {"sample_stride", 10},
                                                        {"output_dir", dir.string()}});
  const SizeRecord r = magnetization_size(c, 10);
  ASSERT_TRUE(r.magnetization);
  EXPECT_LT(r.magnetization->peak_to_peak, 1e-9);
}

TEST(Drivers, SeriesCsvMarksDivergence) {
  const fs::path dir = testing::scratch_dir("csv");
  EchoSeries s;
  s.N = 4;
  s.push(0.0, 1.0, 0.5);
  s.push(0.001, 0.0, 0.25);
  write_series_csv(dir / "s.csv", s);
  EXPECT_EQ(slurp(dir / "s.csv"), "time,echo,rate,sz\n0,1,0,0.5\n0.001,0,inf,0.25\n");
}

TEST(Drivers, SweepTableRoundTrip) {
  const fs::path dir = testing::scratch_dir("table");
  std::vector<SizeRecord> recs(3);
  const double tc[] = {3.0515, 3.0325, 3.0265};
  for (int i = 0; i < 3; ++i) {
    recs[i].N = 50 + 10 * i;
    recs[i].ok = true;
    CriticalTime z;
    z.t_down = tc[i] - 1.0 / 3.0;
    z.t_up = tc[i] + 1.0 / 3.0;
    z.t_c = tc[i];
    recs[i].zeros.push_back(z);
  }
  SizeRecord missing;
  missing.N = 80;
  missing.ok = true;
  recs.push_back(missing);
  write_sweep_csv(dir / "t.csv", recs);
  const ScalingDataset d = read_sweep_csv(dir / "t.csv");
  ASSERT_EQ(d.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(d.t_c[i], tc[i]);
  EXPECT_NE(slurp(dir / "t.csv").find("80,,,"), std::string::npos);
}

TEST(Summary, ExitCodes) {
  RunSummary s;
  s.config.protocol = RunProtocol::sweep;
  s.records.resize(2);
  s.records[0].ok = true;
  EXPECT_EQ(s.exit_code(), kExitPartial);
  s.config.protocol = RunProtocol::quench;
  s.records[1].error_code = kExitNumerical;
  EXPECT_EQ(s.exit_code(), kExitNumerical);
  s.records[1].ok = true;
  EXPECT_EQ(s.exit_code(), kExitOk);
}

TEST(Summary, QuenchRoundTripsLosslessly) {
  const fs::path dir = testing::scratch_dir("roundtrip");
  ExperimentConfig c = quench_config(dir, 40, 6.0);
  c.stop_after_zeros = 1;
  c.fit.enabled = false;
  const RunSummary s = run(c);
  ASSERT_EQ(s.records.size(), 1u);
  ASSERT_FALSE(s.records[0].zeros.empty());
  ASSERT_TRUE(s.records[0].cusp);
  const json j = json::parse(slurp(dir / s.summary_file));
  EXPECT_EQ(j, s.to_json());
  const RunSummary back = RunSummary::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(back.records[0].zeros[0].t_c, s.records[0].zeros[0].t_c);
  EXPECT_EQ(back.records[0].cusp->right.b, s.records[0].cusp->right.b);
  EXPECT_TRUE(fs::exists(dir / s.records[0].series_file));
}

TEST(Summary, FitAndOpenZeroRoundTrip) {
  RunSummary s;
  s.config = quench_config("x", 10);
  SizeRecord r;
  r.N = 10;
  r.ok = true;
  CriticalTime z;
  z.t_down = 20.1;
  z.t_c = 20.1;
  z.epsilon = 1e-15;
  r.zeros.push_back(z);
  s.records.push_back(r);
  FitResult f;
  f.params = {{"a", -1.1940000000000002}, {"b", 0.354}, {"c", 3.225}};
  f.param_errors = {{"a", 0.1}, {"c", 0.01}};
  f.fixed_params = {{"b", 0.354}};
  f.rms = 1.234e-4;
  s.fit = f;
  const json j = s.to_json();
  EXPECT_TRUE(j["records"][0]["t_up"].is_null());
  EXPECT_TRUE(j["records"][0]["open"].get<bool>());
  EXPECT_EQ(j["fit"]["reported"]["params"]["a"].get<double>(), -1.194);
  const RunSummary back = RunSummary::from_json(json::parse(j.dump()));
  EXPECT_TRUE(back.records[0].zeros[0].open());
  EXPECT_EQ(back.fit->params.at("a"), -1.1940000000000002);
  EXPECT_EQ(back.to_json(), j);
}

std::string record_json_string(const RunSummary& s) {
  json r = s.to_json()["records"][0];
  r.erase("wall_seconds");
  return r.dump();
}

TEST(Sweep, DeterministicAndWorkerIndependent) {
  const fs::path d1 = testing::scratch_dir("sweep1"), d2 = testing::scratch_dir("sweep2"),
                 d3 = testing::scratch_dir("sweep3");
  ExperimentConfig c = quench_config(d1, 0, 5.0);
  c.protocol = RunProtocol::sweep;
  c.N.reset();
  c.n_range = NRange{30, 50, 10};
  c.stop_after_zeros = 1;
  const RunSummary a = run(c);
  c.output_dir = d2.string();
  const RunSummary b = run(c);
  c.output_dir = d3.string();
  c.workers = 3;
  const RunSummary w = run(c);
  ASSERT_EQ(a.records.size(), 3u);
  for (const char* f : {"sweep_quench.csv", "quench_N30.csv", "quench_N40.csv", "quench_N50.csv"}) {
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
    EXPECT_EQ(slurp(d1 / f), slurp(d3 / f)) << f;
  }
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.records[i].N, w.records[i].N);
    ASSERT_EQ(a.records[i].zeros.size(), w.records[i].zeros.size());
    if (!a.records[i].zeros.empty()) {
      EXPECT_EQ(a.records[i].zeros[0].t_c, w.records[i].zeros[0].t_c);
    }
  }
}

TEST(Sweep, SingleSizeMatchesSingleRun) {
  const fs::path d1 = testing::scratch_dir("one_sweep"), d2 = testing::scratch_dir("one_run");
  ExperimentConfig c = quench_config(d1, 0, 5.0);
  c.protocol = RunProtocol::sweep;
  c.N.reset();
  c.n_range = NRange{40, 40, 1};
  const RunSummary s = run(c);
  const RunSummary q = run(quench_config(d2, 40, 5.0));
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_EQ(record_json_string(s), record_json_string(q));
}

TEST(Config, ShippedConfigsLoad) {
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(BTC_DQPT_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    const ExperimentConfig c = load_config(e.path());
    EXPECT_NO_THROW(c.validate()) << e.path();
    EXPECT_FALSE(c.sizes().empty()) << e.path();
    ++count;
  }
  EXPECT_GT(count, 0u);
}

}  // namespace
}  // namespace btc
