#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "modeheat/config.hpp"
#include "modeheat/experiments.hpp"

using namespace modeheat;
namespace fs = std::filesystem;

namespace {

std::string config_path(const std::string& name) {
  const char* dir = std::getenv("MODEHEAT_CONFIG_DIR");
  return std::string(dir ? dir : MODEHEAT_SOURCE_DIR "/configs") + "/" + name + ".json";
}

Json config_json(const std::string& name) {
  std::ifstream in(config_path(name));
  return Json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("modeheat_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string failures(const ExperimentResult& r) {
  std::string s;
  for (const auto& c : r.checks) {
    if (!c.passed) s += c.name + ": " + c.detail + "\n";
  }
  return s;
}

}  // namespace

TEST(Experiments, PaperNumbersClose) {
  const auto r = run_experiment(load_config(config_path("paper_numbers")));
  EXPECT_TRUE(r.passed()) << failures(r);
  EXPECT_EQ(r.checks.size(), 5u);
}

TEST(Experiments, PaperNumbersDetectInconsistentInput) {
  auto j = config_json("paper_numbers");
  j["parameters"]["mode_delta_t"] = 0.03;  // 50% off the reported gap
  const auto r = run_experiment(parse_config(j));
  EXPECT_FALSE(r.passed());
}

TEST(Experiments, EquipartitionWithoutSimulationIsExact) {
  const auto r = run_experiment(load_config(config_path("equipartition_noise8")));
  EXPECT_TRUE(r.passed()) << failures(r);
  ASSERT_FALSE(r.tables.empty());
  const auto& t = r.tables[0];
  const auto col = [&](const std::string& n) {
    return static_cast<std::size_t>(std::find(t.columns.begin(), t.columns.end(), n) - t.columns.begin());
  };
  ASSERT_LT(col("T_pos_lyap"), t.columns.size());
  // Doubling the noise intensity doubles the mode temperature.
  EXPECT_NEAR(t.rows[0][col("T_pos_lyap")], 600.0, 600.0 * 1e-8);
  EXPECT_NEAR(t.rows[0][col("T_kin_lyap")], 600.0, 600.0 * 1e-8);
}

TEST(Experiments, EquipartitionRejectsUnequalBaths) {
  auto j = config_json("equipartition");
  j["model"]["oscillators"].push_back(
      {{"label", "B"}, {"mass", 1e-12}, {"frequency_hz", 100}, {"gamma", 10}, {"temperature", 200}});
  EXPECT_THROW(run_experiment(parse_config(j)), Error);
}

TEST(Experiments, ShippedMonteCarloConfigsPass) {
  for (const char* name : {"cold_damping", "coupled_transfer", "spectrum", "spectrum_splitting"}) {
    const auto r = run_experiment(load_config(config_path(name)), 2);
    EXPECT_TRUE(r.passed()) << name << "\n" << failures(r);
  }
}

TEST(Experiments, ZeroDampingIsRejected) {
  auto j = config_json("coupled_transfer");
  j["model"]["oscillators"][1]["gamma"] = 0;
  try {
    run_experiment(parse_config(j));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroDamping);
  }
}

// A coarse Euler-Maruyama step heats the mode by O(Omega dt); the verdict has
// to notice rather than report agreement.
TEST(Experiments, BiasedIntegratorFailsVerdict) {
  auto j = config_json("cold_damping");
  const double omega = 2.0 * std::numbers::pi * 100.0;
  j["sim"]["integrator"] = "euler_maruyama";
  j["sim"]["dt"] = 0.3 / omega;
  j["sim"]["allow_coarse_step"] = true;
  const auto r = run_experiment(parse_config(j));
  EXPECT_FALSE(r.passed());
}

TEST(Experiments, OutputsIdenticalAcrossThreadCounts) {
  const auto cfg = load_config(config_path("coupled_transfer"));
  const auto a = scratch("threads1");
  const auto b = scratch("threads3");
  write_outputs(cfg, run_experiment(cfg, 1), a);
  write_outputs(cfg, run_experiment(cfg, 3), b);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    if (name == "manifest.json") continue;  // carries a timestamp
    EXPECT_EQ(slurp(entry.path()), slurp(b / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 3u);
}

TEST(Experiments, SeedChangesResults) {
  auto j = config_json("cold_damping");
  const auto first = run_experiment(parse_config(j));
  j["sim"]["seed"] = 12345;
  const auto second = run_experiment(parse_config(j));
  ASSERT_EQ(first.tables.size(), second.tables.size());
  EXPECT_NE(first.tables[0].rows, second.tables[0].rows);
}

TEST(Experiments, WriteOutputsProducesManifestAndTables) {
  const auto cfg = load_config(config_path("cold_damping"));
  const auto r = run_experiment(cfg);
  const auto dir = scratch("outputs");
  write_outputs(cfg, r, dir);
  for (const char* f : {"manifest.json", "results.json", "verdict.txt"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  for (const auto& t : r.tables) {
    const auto csv = slurp(dir / (t.name + ".csv"));
    const auto header = csv.substr(0, csv.find('\n'));
    std::string expected;
    for (const auto& c : t.columns) expected += (expected.empty() ? "" : ",") + c;
    EXPECT_EQ(header, expected);
  }
  const auto manifest = Json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["experiment"], "cold_damping");
  EXPECT_EQ(manifest["seed"], kDefaultSeed);
  EXPECT_EQ(manifest["config_hash"], hex64(config_hash(cfg.source)));
  EXPECT_EQ(manifest["modeheat_version"], kVersion);
  EXPECT_TRUE(manifest.contains("eigen_version"));
  EXPECT_NE(manifest["rng"].get<std::string>().find("Philox4x32-10"), std::string::npos);
  EXPECT_EQ(manifest["config"], cfg.source);
  const auto results = Json::parse(slurp(dir / "results.json"));
  EXPECT_EQ(results["verdict"], r.passed() ? "PASS" : "FAIL");
  EXPECT_EQ(results["checks"].size(), r.checks.size());
  EXPECT_EQ(slurp(dir / "verdict.txt").substr(0, 4), r.passed() ? "PASS" : "FAIL");
}

TEST(Experiments, FormatSelectionIsHonoured) {
  auto j = config_json("paper_numbers");
  j["output"] = {{"formats", {"json"}}};
  const auto cfg = parse_config(j);
  const auto dir = scratch("formats");
  write_outputs(cfg, run_experiment(cfg), dir);
  EXPECT_TRUE(fs::exists(dir / "results.json"));
  EXPECT_FALSE(fs::exists(dir / "closure.csv"));
}

TEST(Experiments, TrajectoryExportRoundTrips) {
  auto j = config_json("spectrum");
  j["sim"] = {{"ensemble_size", 1}, {"duration", 2.0}, {"record_stride", 16}, {"initial", "stationary"}, {"burn_in", 0}};
  j["analysis"] = {{"segment_length", 128}};
  j["output"] = {{"trajectory", true}};
  const auto cfg = parse_config(j);
  const auto r = run_experiment(cfg);
  ASSERT_TRUE(r.trajectory);
  const auto& tr = *r.trajectory;
  // Member 0 replayed directly from the simulator.
  const auto replay = Simulator(*cfg.model, resolve_sim(*cfg.sim, *cfg.model)).trajectory(0);
  EXPECT_EQ(replay.states, tr.states);

  const auto dir = scratch("trajectory");
  write_outputs(cfg, r, dir);
  std::istringstream csv(slurp(dir / "trajectory.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_NE(line.find("model_fingerprint=" + hex64(fingerprint(*cfg.model))), std::string::npos);
  EXPECT_NE(line.find("seed=" + std::to_string(kDefaultSeed)), std::string::npos);
  std::getline(csv, line);
  EXPECT_EQ(line, "time,u_1,v_1");
  std::getline(csv, line);
  std::istringstream first(line);
  std::string cell;
  std::vector<double> values;
  while (std::getline(first, cell, ',')) values.push_back(std::stod(cell));
  ASSERT_EQ(values.size(), 3u);
  EXPECT_EQ(values[0], tr.times[0]);
  EXPECT_EQ(values[1], tr.states(0, 0));
  EXPECT_EQ(values[2], tr.states(0, 1));

  const auto bin = slurp(dir / "trajectory.bin");
  ASSERT_GE(bin.size(), 48u);
  EXPECT_EQ(bin.substr(0, 8), "MHTRAJ01");
  std::uint64_t fp = 0, seed = 0, rows = 0, cols = 0;
  double dt = 0.0;
  std::memcpy(&fp, bin.data() + 8, 8);
  std::memcpy(&seed, bin.data() + 16, 8);
  std::memcpy(&dt, bin.data() + 24, 8);
  std::memcpy(&rows, bin.data() + 32, 8);
  std::memcpy(&cols, bin.data() + 40, 8);
  EXPECT_EQ(fp, tr.fingerprint);
  EXPECT_EQ(seed, tr.seed);
  EXPECT_EQ(dt, tr.dt);
  EXPECT_EQ(rows, tr.samples());
  EXPECT_EQ(cols, 3u);
  ASSERT_EQ(bin.size(), 48 + 8 * rows * cols);
  const std::size_t last = rows - 1;
  double u = 0.0, v = 0.0;
  std::memcpy(&u, bin.data() + 48 + 8 * (last * cols + 1), 8);
  std::memcpy(&v, bin.data() + 48 + 8 * (last * cols + 2), 8);
  EXPECT_EQ(u, tr.states(static_cast<Eigen::Index>(last), 0));
  EXPECT_EQ(v, tr.states(static_cast<Eigen::Index>(last), 1));
}
