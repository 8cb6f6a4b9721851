#include <fmt/format.h>
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <sstream>

#include "cli/commands.hpp"
#include "cli/config.hpp"
#include "cli/io.hpp"

namespace {

namespace fs = std::filesystem;
using namespace opent::cli;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("opent_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path config(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / (name + ".json");
    spit(p, body);
    return p;
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "opent");
    out_.str("");
    err_.str("");
    return run_main(args, out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

const char* kSinglet = R"({"schema_version": 1, "model": {"J": 1, "gamma": 0.25, "dt": 0.5},
  "state": "singlet_pairs", "chi_max": 24, "t_max": 5, "checkpoint_every": 4})";

TEST(Config, Defaults) {
  const auto c = parse_config(R"({"schema_version": 1})");
  EXPECT_EQ(c, RunConfig{});
  EXPECT_FALSE(c.oracle);
}

TEST(Config, CanonicalRoundTrip) {
  const auto c = parse_config(R"({"schema_version": 1, "model": {"J": 1.5, "gamma": 0.05, "dt": 0.25},
    "state": "neel", "chi_max": 512, "eps_trunc": 1e-14, "t_max": 60.5, "observe_every": 2, "bonds": [1],
    "output_dir": "runs/a", "checkpoint_every": 10, "oracle": {"n_sites": 6, "tol": 1e-11}})");
  const std::string text = serialize_config(c);
  EXPECT_EQ(parse_config(text), c);
  EXPECT_EQ(serialize_config(parse_config(text)), text);
  EXPECT_EQ(text.back(), '\n');
  EXPECT_LT(text.find("schema_version"), text.find("model"));
  EXPECT_LT(text.find("\"J\""), text.find("\"gamma\""));
}

TEST(Config, NumbersSurviveRoundTrip) {
  RunConfig c;
  c.model.gamma = 0.1 + 0.2;
  c.eps_trunc = 1.0 / 3.0 * 1e-9;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"schema_version": 1, "model": {"gamma": -0.1}})").find("gamma"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "model": {"dt": 0}})").find("dt"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "chi_max": 0})").find("chi_max"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "chi_max": 2.5})").find("chi_max"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "eps_trunc": 1})").find("eps_trunc"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "t_max": -1})").find("t_max"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "observe_every": 0})").find("observe_every"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "bonds": [2]})").find("bonds"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "bonds": [1, 1]})").find("bonds"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "bonds": []})").find("bonds"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "state": "ferro"})").find("state"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "oracle": {"n_sites": 9}})").find("n_sites"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "oracle": {"n_sites": 7}})").find("n_sites"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "oracle": {"tol": 0}})").find("tol"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "chi": 4})").find("chi"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "model": {"g": 4}})").find("model.g"), std::string::npos);
  EXPECT_NE(message(R"({"model": {}})").find("schema_version"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 2})").find("schema_version"), std::string::npos);
  EXPECT_NE(message("{").find("JSON"), std::string::npos);
}

TEST(Io, NumbersAreShortestRoundTrip) {
  EXPECT_EQ(num(0.5), "0.5");
  EXPECT_EQ(num(3.0), "3");
  EXPECT_EQ(num(1e-5), "1e-05");
  const double x = 0.1 + 0.2;
  EXPECT_EQ(std::stod(num(x)), x);
}

TEST(Io, GoldenSnapshotRows) {
  opent::observables::SpectrumSnapshot s;
  s.time = 1.5;
  s.bond = 0;
  s.entries = {{1, 1, 0.5}, {1, -1, 0.5}, {-1, 1, 0.5}, {-1, -1, 0.5}};
  s.diag = {0.25, 0.0, 0.0, 4};
  const auto rows = format_snapshot(s);
  EXPECT_EQ(rows.spectra,
            "1.5,0,1,1,0.5\n"
            "1.5,0,1,-1,0.5\n"
            "1.5,0,-1,1,0.5\n"
            "1.5,0,-1,-1,0.5\n");
  EXPECT_EQ(rows.observables, "1.5,0,2,1,0.25,0,0,4\n");
  EXPECT_EQ(rows.sectors,
            "1.5,0,Sz,-1,0.5,1\n"
            "1.5,0,Sz,1,0.5,1\n"
            "1.5,0,S,1,1,2\n");
}

TEST(Io, SmallSectorsHaveNoResolvedEntropy) {
  opent::observables::SpectrumSnapshot s;
  s.entries = {{0, 0, std::sqrt(1 - 4e-5)}, {2, 2, std::sqrt(4e-5)}};
  s.canonicalize_order();
  const auto rows = format_snapshot(s);
  EXPECT_NE(rows.sectors.find("0,0,Sz,2,4e-05,\n"), std::string::npos) << rows.sectors;
  EXPECT_EQ(rows.sectors.find(",S,"), std::string::npos);  // unmatched entries: no spin rows
}

TEST_F(Cli, WriterLeavesNoFinalFilesOnAbort) {
  spit(dir_ / kObservablesFile, "stale\n");
  {
    RunWriter w(dir_);
    opent::observables::SpectrumSnapshot s;
    s.entries = {{0, 0, 1.0}};
    w.push({s});
    w.sync();
    w.abort();
  }
  EXPECT_FALSE(fs::exists(dir_ / kObservablesFile));
  EXPECT_TRUE(fs::exists(dir_ / (std::string(kObservablesFile) + ".partial")));
  EXPECT_EQ(first_line(dir_ / (std::string(kSpectraFile) + ".partial")), kSpectraHeader);
}

TEST_F(Cli, WriterKeepsTimeOrder) {
  {
    RunWriter w(dir_);
    for (int k = 0; k < 50; ++k) {
      opent::observables::SpectrumSnapshot s;
      s.time = k;
      s.entries = {{0, 0, 1.0}};
      w.push({s});
    }
    w.commit();
  }
  const auto t = read_csv(dir_ / kObservablesFile);
  ASSERT_EQ(t.rows.size(), 50u);
  for (int k = 0; k < 50; ++k) EXPECT_EQ(t.rows[k][0], std::to_string(k));
}

TEST_F(Cli, ReadCsvRejectsRaggedRows) {
  spit(dir_ / "x.csv", "a,b\n1,2\n3\n");
  EXPECT_THROW(read_csv(dir_ / "x.csv"), IoError);
  spit(dir_ / "y.csv", "a,b\n1,\n");
  EXPECT_EQ(read_csv(dir_ / "y.csv").rows[0][1], "");
  EXPECT_THROW(read_csv(dir_ / "missing.csv"), IoError);
}

TEST_F(Cli, GoldenHeaders) {
  const auto cfg = config("id", R"({"schema_version": 1, "state": "identity", "t_max": 1})");
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "run").string(), "--quiet"}), 0);
  EXPECT_EQ(first_line(dir_ / "run" / "spectra.csv"), "time,bond,qk,qb,lambda");
  EXPECT_EQ(first_line(dir_ / "run" / "observables.csv"),
            "time,bond,S_op,shannon_Sz,trace_dev,herm_dev,trunc_weight,chi_used");
  EXPECT_EQ(first_line(dir_ / "run" / "sectors.csv"), "time,bond,sector_type,sector_value,p,S_resolved");
  ASSERT_EQ(run({"analyze", (dir_ / "run").string()}), 0);
  EXPECT_EQ(first_line(dir_ / "run" / "fits.csv"),
            "kind,bond,time,window_lo,window_hi,params,residual,status,note");
}

TEST_F(Cli, IdentityStateStaysUnentangled) {
  const auto cfg = config("id", R"({"schema_version": 1, "model": {"gamma": 0.25, "dt": 0.5},
    "state": "identity", "t_max": 5})");
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "run").string(), "--quiet"}), 0);
  const auto t = read_csv(dir_ / "run" / "observables.csv");
  ASSERT_EQ(t.rows.size(), 22u);
  for (const auto& r : t.rows) EXPECT_LT(std::abs(std::stod(r[t.column("S_op")])), 1e-8);
  const auto meta = nlohmann::json::parse(slurp(dir_ / "run" / "run.json"));
  EXPECT_EQ(meta["status"], "ok");
  EXPECT_EQ(meta["exit_code"], 0);
  EXPECT_EQ(meta["steps"], 10);
  EXPECT_FALSE(fs::exists(dir_ / "run" / "observables.csv.partial"));
}

TEST_F(Cli, InvalidGammaIsConfigError) {
  const auto cfg = config("bad", R"({"schema_version": 1, "model": {"gamma": -0.25}})");
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "run").string()}), 2);
  EXPECT_NE(err_.str().find("gamma"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "run" / "observables.csv"));
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"evolve"}), 2);
  EXPECT_EQ(run({"evolve", "--config", (dir_ / "none.json").string()}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_NE(out_.str().find("evolve"), std::string::npos);
}

TEST_F(Cli, OracleRejectsNineSites) {
  const auto cfg = config("n9", R"({"schema_version": 1, "oracle": {"n_sites": 9}})");
  EXPECT_EQ(run({"oracle", "--config", cfg.string(), "--out", (dir_ / "ed").string()}), 2);
  EXPECT_NE(err_.str().find("n_sites"), std::string::npos);
}

TEST_F(Cli, OracleNeedsSettings) {
  const auto cfg = config("none", R"({"schema_version": 1})");
  EXPECT_EQ(run({"oracle", "--config", cfg.string(), "--out", (dir_ / "ed").string()}), 2);
}

TEST_F(Cli, OracleSingletPairIsConstant) {
  const auto cfg = config("n2", R"({"schema_version": 1, "state": "singlet_pairs", "t_max": 10,
    "oracle": {"n_sites": 2}})");
  ASSERT_EQ(run({"oracle", "--config", cfg.string(), "--out", (dir_ / "ed").string(), "--quiet"}), 0);
  const auto t = read_csv(dir_ / "ed" / "spectra.csv");
  ASSERT_FALSE(t.rows.empty());
  std::map<std::pair<std::string, std::string>, double> first;
  for (const auto& r : t.rows) {
    EXPECT_EQ(r[1], "0");  // no cut between pairs on two sites
    const auto key = std::make_pair(r[2], r[3]);
    const double lam = std::stod(r[4]);
    if (!first.contains(key)) first[key] = lam;
    EXPECT_NEAR(lam, first[key], 1e-10);
  }
  EXPECT_EQ(first.size(), 4u);
}

TEST_F(Cli, OracleNeelTraceIsExact) {
  const auto cfg = config("n6", R"({"schema_version": 1, "model": {"gamma": 0.5, "dt": 0.25},
    "state": "neel", "t_max": 2, "observe_every": 2, "oracle": {"n_sites": 6}})");
  ASSERT_EQ(run({"oracle", "--config", cfg.string(), "--out", (dir_ / "ed").string(), "--quiet"}), 0);
  const auto t = read_csv(dir_ / "ed" / "observables.csv");
  ASSERT_EQ(t.rows.size(), 10u);
  for (const auto& r : t.rows) EXPECT_LT(std::stod(r[t.column("trace_dev")]), 1e-10);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  const auto cfg = config("s", kSinglet);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "full").string(), "--quiet"}), 0);

  // Interrupted run: stop at t=2 (checkpoint after 4 steps), then continue to t=5.
  auto short_cfg = parse_config(kSinglet);
  short_cfg.t_max = 2.0;
  const auto cfg_short = config("short", serialize_config(short_cfg));
  const auto part = dir_ / "part";
  ASSERT_EQ(run({"evolve", "--config", cfg_short.string(), "--out", part.string(), "--quiet"}), 0);
  // Rows beyond the checkpoint from a crashed attempt must be dropped on resume.
  for (const char* f : {kSpectraFile, kObservablesFile, kSectorsFile}) {
    fs::rename(part / f, part / (std::string(f) + ".partial"));
    std::ofstream(part / (std::string(f) + ".partial"), std::ios::app) << "9.5,1,garbage\n";
  }
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", part.string(), "--quiet", "--resume",
                 (part / "checkpoint.bin").string()}),
            0)
      << err_.str();
  for (const char* f : {kSpectraFile, kObservablesFile, kSectorsFile})
    EXPECT_EQ(slurp(part / f), slurp(dir_ / "full" / f)) << f;
  EXPECT_EQ(slurp(part / "checkpoint.bin"), slurp(dir_ / "full" / "checkpoint.bin"));
  const auto meta = nlohmann::json::parse(slurp(part / "run.json"));
  EXPECT_FALSE(meta["resumed_from"].is_null());
}

TEST_F(Cli, ResumeRejectsOtherModel) {
  const auto cfg = config("s", kSinglet);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "a").string(), "--quiet"}), 0);
  auto other = parse_config(kSinglet);
  other.model.gamma = 0.5;
  const auto cfg2 = config("o", serialize_config(other));
  EXPECT_EQ(run({"evolve", "--config", cfg2.string(), "--out", (dir_ / "a").string(), "--quiet", "--resume",
                 (dir_ / "a" / "checkpoint.bin").string()}),
            2);
}

TEST_F(Cli, DamagedCheckpointIsIoError) {
  spit(dir_ / "junk.bin", "not a checkpoint");
  const auto cfg = config("s", kSinglet);
  EXPECT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "a").string(), "--quiet", "--resume",
                 (dir_ / "junk.bin").string()}),
            4);
}

TEST_F(Cli, CompareRunWithItself) {
  const auto cfg = config("s", kSinglet);
  ASSERT_EQ(run({"evolve", "--config", cfg.string(), "--out", (dir_ / "a").string(), "--quiet"}), 0);
  ASSERT_EQ(run({"compare", (dir_ / "a").string(), (dir_ / "a").string(), "--tol", "1e-300", "--p-tol", "1e-300"}), 0)
      << err_.str();
  const auto rep = nlohmann::json::parse(out_.str());
  EXPECT_TRUE(rep["pass"].get<bool>());
  ASSERT_EQ(rep["bonds"].size(), 2u);
  for (const auto& b : rep["bonds"]) {
    EXPECT_EQ(b["max_dS_op"].get<double>(), 0.0);
    EXPECT_EQ(b["max_dp_Sz"].get<double>(), 0.0);
    EXPECT_EQ(b["shared_times"].get<int>(), 11);
  }
}

TEST_F(Cli, CompareDetectsDeviationAndDisjointGrids) {
  auto c = parse_config(kSinglet);
  const auto a = config("a", serialize_config(c));
  c.chi_max = 8;
  const auto b = config("b", serialize_config(c));
  ASSERT_EQ(run({"evolve", "--config", a.string(), "--out", (dir_ / "a").string(), "--quiet"}), 0);
  ASSERT_EQ(run({"evolve", "--config", b.string(), "--out", (dir_ / "b").string(), "--quiet"}), 0);
  const auto report = dir_ / "report.json";
  EXPECT_EQ(run({"compare", (dir_ / "a").string(), (dir_ / "b").string(), "--report", report.string()}), 1);
  EXPECT_FALSE(nlohmann::json::parse(slurp(report))["pass"].get<bool>());
  // Restricting the window to t = 0 leaves only identical product states.
  EXPECT_EQ(run({"compare", (dir_ / "a").string(), (dir_ / "b").string(), "--t-max", "0"}), 0);
  EXPECT_EQ(run({"compare", (dir_ / "a").string(), (dir_ / "b").string(), "--t-min", "100"}), 2);
}

TEST_F(Cli, AnalyzeSyntheticLogarithm) {
  fs::create_directories(dir_ / "syn");
  std::string obs = std::string(kObservablesHeader) + "\n";
  for (int k = 1; k <= 40; ++k) {
    const double t = 0.5 * k;
    obs += fmt::format("{},1,{},0,0,0,0,1\n", t, 0.3 * std::log2(t) + 1.0);
  }
  spit(dir_ / "syn" / kObservablesFile, obs);
  ASSERT_EQ(run({"analyze", (dir_ / "syn").string()}), 0) << err_.str();
  const auto t = read_csv(dir_ / "syn" / kFitsFile);
  int tangents = 0, flagged_gaussian = 0;
  for (const auto& r : t.rows) {
    if (r[0] == "log_tangent") {
      ++tangents;
      EXPECT_EQ(r[t.column("status")], "ok");
      const auto params = r[t.column("params")];
      const double eta = std::stod(params.substr(params.find("eta=") + 4));
      EXPECT_NEAR(eta, 0.3, 1e-12);
    }
    if (r[0] == "gaussian") {
      ++flagged_gaussian;
      EXPECT_EQ(r[t.column("status")], "flagged");
      EXPECT_NE(r[t.column("note")].find("sectors.csv"), std::string::npos);
    }
  }
  EXPECT_EQ(tangents, 38);
  EXPECT_EQ(flagged_gaussian, 1);
}

TEST_F(Cli, AnalyzeSectorFits) {
  fs::create_directories(dir_ / "syn");
  std::string obs = std::string(kObservablesHeader) + "\n";
  std::string sec = std::string(kSectorsHeader) + "\n";
  const double a = 2.4964, b = 0.2554, c = 1.1228;
  for (int k = 0; k <= 60; ++k) {
    const double t = k;
    obs += fmt::format("{},1,1,0,0,0,0,1\n", t);
    const double delta = 2.0 * std::pow(std::max(t, 1.0), 0.25);
    for (int sz = -12; sz <= 12; ++sz) {
      const double p = std::exp(-sz * sz / (2 * delta * delta)) / std::sqrt(2 * std::numbers::pi * delta * delta);
      // S_resolved chosen so that (S_{Sz=1} - S_0) / 1^2 follows the decay law.
      const double s = sz == 1 ? 3.0 + std::pow(a + b * t, -c) : 3.0;
      sec += fmt::format("{},1,Sz,{},{},{}\n", t, 2 * sz, p, s);
    }
  }
  spit(dir_ / "syn" / kObservablesFile, obs);
  spit(dir_ / "syn" / kSectorsFile, sec);
  ASSERT_EQ(run({"analyze", (dir_ / "syn").string(), "--decay-sz", "2"}), 0) << err_.str();
  const auto t = read_csv(dir_ / "syn" / kFitsFile);
  bool power = false, decay = false;
  int trial_flagged = 0;
  for (const auto& r : t.rows) {
    const auto params = r[t.column("params")];
    auto param = [&](const std::string& name) {
      return std::stod(params.substr(params.find(name + "=") + name.size() + 1));
    };
    if (r[0] == "power_law") {
      power = true;
      EXPECT_NEAR(param("alpha"), 0.25, 1e-3);
      EXPECT_EQ(r[t.column("window_lo")], "20");
    }
    if (r[0] == "decay") {
      decay = true;
      EXPECT_EQ(r[t.column("status")], "ok");
      EXPECT_NEAR(param("a"), a, 1e-4);
      EXPECT_NEAR(param("b"), b, 1e-4);
      EXPECT_NEAR(param("c"), c, 1e-4);
    }
    if (r[0] == "trial_pS") ++trial_flagged;
  }
  EXPECT_TRUE(power);
  EXPECT_TRUE(decay);
  EXPECT_EQ(trial_flagged, 61);  // no spin rows in the fixture
}

TEST_F(Cli, AnalyzeWithoutObservablesIsIoError) {
  fs::create_directories(dir_ / "empty");
  EXPECT_EQ(run({"analyze", (dir_ / "empty").string()}), 4);
}

}  // namespace
