#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "modeheat/config.hpp"

using namespace modeheat;

namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for: " << text;
  return ErrorCode::IllConditioned;
}

const char* kMinimal = R"({
  "experiment": "equipartition",
  "model": {"oscillators": [{"label": "A", "mass": 1e-12, "frequency_hz": 100, "gamma": 10, "temperature": 300}]}
})";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, MinimalConfigParses) {
  const auto c = parse_config_text(kMinimal);
  EXPECT_EQ(c.kind, ExperimentKind::Equipartition);
  ASSERT_TRUE(c.model);
  EXPECT_FALSE(c.sim);
  EXPECT_DOUBLE_EQ(c.model->oscillators[0].omega, 2.0 * std::numbers::pi * 100.0);
  EXPECT_DOUBLE_EQ(c.model->noise_factor, 4.0);
  EXPECT_EQ(c.output.directory, "out");
}

TEST(Config, MalformedJsonIsConfigError) {
  EXPECT_EQ(code_of("{\"experiment\": "), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("[1, 2"), ErrorCode::ConfigError);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_EQ(code_of(R"({"experiment": "paper_numbers", "extra": 1})"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(R"({"experiment": "equipartition", "model": {"oscillators": [{"label": "A", "mass": 1,
      "omega": 1, "gamma": 1, "temperature": 1, "colour": 3}]}})"),
            ErrorCode::ConfigError);
  auto j = Json::parse(kMinimal);
  j["sim"] = {{"dtt", 1e-6}};
  EXPECT_THROW(parse_config(j), Error);
  j = Json::parse(kMinimal);
  j["analysis"] = {{"windw", "hann"}};
  EXPECT_THROW(parse_config(j), Error);
}

TEST(Config, UnknownExperimentAndMissingModel) {
  EXPECT_EQ(code_of(R"({"experiment": "boil_water"})"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(R"({"experiment": "spectrum"})"), ErrorCode::ConfigError);
  EXPECT_NO_THROW(parse_config_text(R"({"experiment": "paper_numbers"})"));
}

TEST(Config, TypeAndRangeErrors) {
  auto bad = [](const char* path, Json value) {
    auto j = Json::parse(kMinimal);
    j[Json::json_pointer(path)] = std::move(value);
    EXPECT_THROW(parse_config(j), Error) << path;
  };
  bad("/model/oscillators/0/mass", "heavy");
  bad("/model/oscillators/0/mass", -1.0);
  bad("/model/oscillators/0/omega", 5.0);  // both omega and frequency_hz
  bad("/sim/dt", -1e-6);
  bad("/sim/ensemble_size", -3);
  bad("/sim/integrator", "rk4");
  bad("/sim/initial", "hot");
  bad("/analysis/overlap", 0.95);
  bad("/analysis/window", "kaiser");
  bad("/analysis/band_hz", Json::array({1.0}));
  bad("/output/formats", Json::array({"xml"}));
  bad("/output/trajectory", "yes");
  auto j = Json::parse(kMinimal);
  j["sim"] = {{"duration", 1.0}, {"n_steps", 100}};
  EXPECT_THROW(parse_config(j), Error);
}

TEST(Config, CouplingByGMatchesSpringConstant) {
  auto j = Json::parse(R"({"experiment": "coupled_transfer", "model": {
    "oscillators": [{"label": "A", "mass": 1e-12, "frequency_hz": 1000, "gamma": 10, "temperature": 400},
                    {"label": "B", "mass": 2e-12, "frequency_hz": 1000, "gamma": 10, "temperature": 200}],
    "couplings": [{"pair": ["A", "B"], "g": 50}]}})");
  const auto by_g = parse_config(j);
  const auto& a = by_g.model->oscillators[0];
  const auto& b = by_g.model->oscillators[1];
  // Spring form: g = k / (2 sqrt(m_a m_b) Omega) for equal frequencies.
  const double k = 50.0 * 2.0 * std::sqrt(a.mass * b.mass) * a.omega;
  EXPECT_NEAR(by_g.model->couplings[0].spring_constant, k, 1e-12 * k);
  j["model"]["couplings"][0] = {{"pair", {"A", "B"}}, {"spring_constant", k}};
  EXPECT_NEAR(parse_config(j).model->couplings[0].spring_constant, k, 1e-12 * k);
  j["model"]["couplings"][0]["g"] = 50;
  EXPECT_THROW(parse_config(j), Error);
  j["model"]["couplings"][0] = {{"pair", {"A", "C"}}, {"g", 1}};
  EXPECT_THROW(parse_config(j), Error);
}

TEST(Config, FeedbackLabelsMustExist) {
  auto j = Json::parse(kMinimal);
  j["model"]["feedback"] = {{"Z", {{"velocity_gain", -1e-11}}}};
  try {
    parse_config(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownLabel);
  }
}

TEST(Config, ResolveSimDefaults) {
  const auto model = modeheat::testing::single(1e-12, 2.0 * std::numbers::pi * 100.0, 10.0, 300.0);
  SimSettings s;
  const auto c = resolve_sim(s, model);
  const double rate = max_rate(compile(model));
  EXPECT_DOUBLE_EQ(c.dt, 0.05 / rate);
  // Burn-in of 10 damping times of the slowest bath coupling.
  EXPECT_EQ(c.burn_in, static_cast<std::uint64_t>(std::ceil(10.0 / (10.0 * c.dt))));
  // 100 amplitude decay times; the amplitude decays at gamma.
  EXPECT_NEAR(static_cast<double>(c.n_steps) * c.dt, 100.0 / 10.0, 2.0 * c.dt);
  EXPECT_EQ(c.seed, kDefaultSeed);
  EXPECT_EQ(c.integrator, Integrator::Exact);

  s.duration = 2.0;
  s.dt = 1e-4;
  s.burn_in = 7;
  const auto d = resolve_sim(s, model);
  EXPECT_EQ(d.n_steps, 20000u);
  EXPECT_EQ(d.burn_in, 7u);
  s.duration.reset();
  s.n_steps = 3;
  s.record_stride = 4;
  EXPECT_THROW(resolve_sim(s, model), Error);
}

TEST(Config, ModelJsonRoundTrip) {
  modeheat::testing::ModelGenerator gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = gen.any(1 + trial % 4);
    gen.add_random_feedback(m);
    m.noise_factor = trial % 2 ? 4.0 : 8.0;
    const auto back = parse_model(Json::parse(model_to_json(m).dump()));
    EXPECT_EQ(fingerprint(back), fingerprint(m)) << trial;
  }
}

TEST(Config, EmbeddedSchemaMatchesDocsCopy) {
  const std::string docs = read_file(std::string(MODEHEAT_SOURCE_DIR) + "/docs/config.schema.json");
  ASSERT_FALSE(docs.empty());
  EXPECT_EQ(Json::parse(docs), Json::parse(kConfigSchema));
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"equipartition", "equipartition_noise8", "cold_damping", "coupled_transfer",
                           "strong_coupling_sweep", "spectrum", "spectrum_splitting", "paper_numbers"}) {
    EXPECT_NO_THROW(load_config(std::string(MODEHEAT_SOURCE_DIR) + "/configs/" + name + ".json")) << name;
  }
  EXPECT_THROW(load_config("/nonexistent/config.json"), Error);
}
