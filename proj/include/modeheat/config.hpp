#pragma once

// JSON experiment configuration: parsing with strict key checking, model
// serialization, and the schema document printed by `modeheat schema`.

#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "modeheat/errors.hpp"
#include "modeheat/langevin.hpp"
#include "modeheat/model.hpp"
#include "modeheat/spectra.hpp"

namespace modeheat {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { Equipartition, ColdDamping, CoupledTransfer, StrongCouplingSweep, Spectrum, PaperNumbers };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Equipartition: return "equipartition";
    case ExperimentKind::ColdDamping: return "cold_damping";
    case ExperimentKind::CoupledTransfer: return "coupled_transfer";
    case ExperimentKind::StrongCouplingSweep: return "strong_coupling_sweep";
    case ExperimentKind::Spectrum: return "spectrum";
    case ExperimentKind::PaperNumbers: return "paper_numbers";
  }
  return "unknown";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::Equipartition, ExperimentKind::ColdDamping, ExperimentKind::CoupledTransfer,
                 ExperimentKind::StrongCouplingSweep, ExperimentKind::Spectrum, ExperimentKind::PaperNumbers}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::ConfigError, "unknown experiment '" + s + "'");
}

/// Simulation settings as written in the config; unset fields get defaults
/// that depend on the compiled model.
struct SimSettings {
  std::optional<double> dt;
  std::optional<double> duration;        // s, recorded time per member
  std::optional<std::uint64_t> n_steps;  // alternative to duration
  std::optional<std::uint64_t> burn_in;
  std::uint64_t seed = kDefaultSeed;
  std::size_t ensemble_size = 16;
  std::size_t record_stride = 1;
  Integrator integrator = Integrator::Exact;
  InitialState initial = InitialState::Zero;
  bool allow_coarse_step = false;
};

struct AnalysisOptions {
  std::size_t segment_length = 0;  // 0: default_segment_length
  double overlap = 0.5;
  Window window = Window::Hann;
  double band_linewidths = 20.0;
  std::optional<Band> band;
  double max_relative_se = 0.0;  // 0: no limit checked
};

struct OutputOptions {
  std::string directory = "out";
  bool csv = true;
  bool json = true;
  bool trajectory = false;  // export member 0 as CSV
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::PaperNumbers;
  std::optional<SystemModel> model;
  std::optional<SimSettings> sim;  // absent: exact analysis only
  AnalysisOptions analysis;
  OutputOptions output;
  Json parameters = Json::object();  // experiment-specific
  Json source;                       // the document as read
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) throw Error(ErrorCode::ConfigError, where + ": unknown key '" + item.key() + "'");
  }
}

inline double get_number(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorCode::ConfigError, where + ": missing '" + key + "'");
  const auto& v = j.at(key);
  if (!v.is_number()) throw Error(ErrorCode::ConfigError, where + "." + key + " must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw Error(ErrorCode::ConfigError, where + "." + key + " must be finite");
  return x;
}

inline double get_number(const Json& j, const std::string& key, const std::string& where, double fallback) {
  return j.contains(key) ? get_number(j, key, where) : fallback;
}

inline std::uint64_t get_count(const Json& j, const std::string& key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw Error(ErrorCode::ConfigError, where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline std::string get_string(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw Error(ErrorCode::ConfigError, where + "." + key + " must be a string");
  }
  return j.at(key).get<std::string>();
}

inline bool get_bool(const Json& j, const std::string& key, const std::string& where, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw Error(ErrorCode::ConfigError, where + "." + key + " must be true or false");
  return j.at(key).get<bool>();
}

}  // namespace detail

inline SystemModel parse_model(const Json& j) {
  using namespace detail;
  check_keys(j, "model", {"oscillators", "couplings", "feedback", "noise_factor"});
  SystemModel m;
  if (!j.contains("oscillators") || !j["oscillators"].is_array() || j["oscillators"].empty()) {
    throw Error(ErrorCode::ConfigError, "model.oscillators must be a non-empty array");
  }
  for (const auto& o : j["oscillators"]) {
    const std::string where = "model.oscillators[" + std::to_string(m.size()) + "]";
    check_keys(o, where, {"label", "mass", "omega", "frequency_hz", "gamma", "temperature"});
    OscillatorSpec s;
    s.label = get_string(o, "label", where);
    s.mass = get_number(o, "mass", where);
    if (o.contains("omega") == o.contains("frequency_hz")) {
      throw Error(ErrorCode::ConfigError, where + ": give exactly one of omega, frequency_hz");
    }
    s.omega = o.contains("omega") ? get_number(o, "omega", where)
                                  : 2.0 * std::numbers::pi * get_number(o, "frequency_hz", where);
    s.gamma = get_number(o, "gamma", where);
    s.bath_temperature = get_number(o, "temperature", where);
    m.oscillators.push_back(s);
  }
  if (j.contains("couplings")) {
    if (!j["couplings"].is_array()) throw Error(ErrorCode::ConfigError, "model.couplings must be an array");
    for (const auto& c : j["couplings"]) {
      const std::string where = "model.couplings[" + std::to_string(m.couplings.size()) + "]";
      check_keys(c, where, {"pair", "spring_constant", "g"});
      if (!c.contains("pair") || !c["pair"].is_array() || c["pair"].size() != 2 || !c["pair"][0].is_string() ||
          !c["pair"][1].is_string()) {
        throw Error(ErrorCode::ConfigError, where + ".pair must be two labels");
      }
      CouplingSpec s{c["pair"][0].get<std::string>(), c["pair"][1].get<std::string>(), 0.0};
      if (c.contains("spring_constant") == c.contains("g")) {
        throw Error(ErrorCode::ConfigError, where + ": give exactly one of spring_constant, g");
      }
      if (c.contains("spring_constant")) {
        s.spring_constant = get_number(c, "spring_constant", where);
      } else {
        s.spring_constant = spring_constant_for_g(m.oscillators.at(m.index_of(s.first)),
                                                  m.oscillators.at(m.index_of(s.second)), get_number(c, "g", where));
      }
      m.couplings.push_back(s);
    }
  }
  if (j.contains("feedback")) {
    const auto& f = j["feedback"];
    if (!f.is_object()) throw Error(ErrorCode::ConfigError, "model.feedback must map labels to feedback gains");
    for (const auto& item : f.items()) {
      const std::string where = "model.feedback." + item.key();
      check_keys(item.value(), where, {"position_gain", "velocity_gain", "noise_psd"});
      m.index_of(item.key());
      m.feedbacks[item.key()] = {get_number(item.value(), "position_gain", where, 0.0),
                                 get_number(item.value(), "velocity_gain", where, 0.0),
                                 get_number(item.value(), "noise_psd", where, 0.0)};
    }
  }
  m.noise_factor = get_number(j, "noise_factor", "model", kDefaultNoiseFactor);
  validate(m);
  return m;
}

inline Json model_to_json(const SystemModel& m) {
  Json j;
  j["oscillators"] = Json::array();
  for (const auto& o : m.oscillators) {
    j["oscillators"].push_back(
        {{"label", o.label}, {"mass", o.mass}, {"omega", o.omega}, {"gamma", o.gamma}, {"temperature", o.bath_temperature}});
  }
  j["couplings"] = Json::array();
  for (const auto& c : m.couplings) {
    j["couplings"].push_back({{"pair", {c.first, c.second}}, {"spring_constant", c.spring_constant}});
  }
  j["feedback"] = Json::object();
  for (const auto& [label, f] : m.feedbacks) {
    j["feedback"][label] = {{"position_gain", f.position_gain}, {"velocity_gain", f.velocity_gain},
                            {"noise_psd", f.noise_psd}};
  }
  j["noise_factor"] = m.noise_factor;
  return j;
}

inline SimSettings parse_sim(const Json& j) {
  using namespace detail;
  check_keys(j, "sim", {"dt", "duration", "n_steps", "burn_in", "seed", "ensemble_size", "record_stride", "integrator",
                        "initial", "allow_coarse_step"});
  SimSettings s;
  if (j.contains("dt")) s.dt = get_number(j, "dt", "sim");
  if (j.contains("duration")) s.duration = get_number(j, "duration", "sim");
  if (j.contains("n_steps")) s.n_steps = get_count(j, "n_steps", "sim");
  if (s.duration && s.n_steps) throw Error(ErrorCode::ConfigError, "sim: give at most one of duration, n_steps");
  if (j.contains("burn_in")) s.burn_in = get_count(j, "burn_in", "sim");
  if (j.contains("seed")) s.seed = get_count(j, "seed", "sim");
  if (j.contains("ensemble_size")) s.ensemble_size = get_count(j, "ensemble_size", "sim");
  if (j.contains("record_stride")) s.record_stride = get_count(j, "record_stride", "sim");
  if (j.contains("integrator")) {
    const auto v = get_string(j, "integrator", "sim");
    if (v == "exact") {
      s.integrator = Integrator::Exact;
    } else if (v == "euler_maruyama") {
      s.integrator = Integrator::EulerMaruyama;
    } else {
      throw Error(ErrorCode::ConfigError, "sim.integrator must be 'exact' or 'euler_maruyama'");
    }
  }
  if (j.contains("initial")) {
    const auto v = get_string(j, "initial", "sim");
    if (v == "zero") {
      s.initial = InitialState::Zero;
    } else if (v == "stationary") {
      s.initial = InitialState::Stationary;
    } else {
      throw Error(ErrorCode::ConfigError, "sim.initial must be 'zero' or 'stationary'");
    }
  }
  s.allow_coarse_step = get_bool(j, "allow_coarse_step", "sim", false);
  if (s.dt && !(*s.dt > 0.0)) throw Error(ErrorCode::ConfigError, "sim.dt must be > 0");
  if (s.duration && !(*s.duration > 0.0)) throw Error(ErrorCode::ConfigError, "sim.duration must be > 0");
  if (s.ensemble_size == 0 || s.record_stride == 0) {
    throw Error(ErrorCode::ConfigError, "sim.ensemble_size and sim.record_stride must be >= 1");
  }
  return s;
}

/// Resolves defaults against the model: dt at the 0.05 phase limit, burn-in of
/// 10 / gamma_min, and 100 damping times of recording.
inline SimConfig resolve_sim(const SimSettings& s, const SystemModel& model) {
  const auto matrices = compile(model);
  SimConfig c;
  c.dt = s.dt.value_or(kMaxStepPhase / max_rate(matrices));
  c.seed = s.seed;
  c.ensemble_size = s.ensemble_size;
  c.record_stride = s.record_stride;
  c.integrator = s.integrator;
  c.initial = s.initial;
  c.allow_coarse_step = s.allow_coarse_step;
  c.burn_in = s.burn_in.value_or(default_burn_in(model, c.dt));
  if (s.n_steps) {
    c.n_steps = *s.n_steps;
  } else {
    const double rate = slowest_decay_rate(matrices);
    const double duration = s.duration.value_or(rate > 0.0 ? 100.0 / rate : 0.0);
    c.n_steps = static_cast<std::uint64_t>(std::llround(duration / c.dt));
  }
  if (c.n_steps < c.record_stride) throw Error(ErrorCode::ConfigError, "sim records no samples");
  return c;
}

inline AnalysisOptions parse_analysis(const Json& j) {
  using namespace detail;
  check_keys(j, "analysis", {"segment_length", "overlap", "window", "band_linewidths", "band_hz", "max_relative_se"});
  AnalysisOptions a;
  if (j.contains("segment_length")) a.segment_length = get_count(j, "segment_length", "analysis");
  a.overlap = get_number(j, "overlap", "analysis", 0.5);
  if (!(a.overlap >= 0.0 && a.overlap <= 0.9)) throw Error(ErrorCode::ConfigError, "analysis.overlap must lie in [0, 0.9]");
  if (j.contains("window")) {
    const auto w = get_string(j, "window", "analysis");
    if (w == "hann") {
      a.window = Window::Hann;
    } else if (w == "rectangular") {
      a.window = Window::Rectangular;
    } else {
      throw Error(ErrorCode::ConfigError, "analysis.window must be 'hann' or 'rectangular'");
    }
  }
  a.band_linewidths = get_number(j, "band_linewidths", "analysis", 20.0);
  if (!(a.band_linewidths > 0.0)) throw Error(ErrorCode::ConfigError, "analysis.band_linewidths must be > 0");
  if (j.contains("band_hz")) {
    const auto& b = j["band_hz"];
    if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
      throw Error(ErrorCode::ConfigError, "analysis.band_hz must be [lo, hi]");
    }
    a.band = Band{b[0].get<double>(), b[1].get<double>()};
  }
  a.max_relative_se = get_number(j, "max_relative_se", "analysis", 0.0);
  return a;
}

inline OutputOptions parse_output(const Json& j) {
  using namespace detail;
  check_keys(j, "output", {"directory", "formats", "trajectory"});
  OutputOptions o;
  if (j.contains("directory")) o.directory = get_string(j, "directory", "output");
  if (j.contains("formats")) {
    const auto& f = j["formats"];
    if (!f.is_array()) throw Error(ErrorCode::ConfigError, "output.formats must be an array");
    o.csv = o.json = false;
    for (const auto& v : f) {
      if (v == "csv") {
        o.csv = true;
      } else if (v == "json") {
        o.json = true;
      } else {
        throw Error(ErrorCode::ConfigError, "output.formats entries must be 'csv' or 'json'");
      }
    }
  }
  o.trajectory = get_bool(j, "trajectory", "output", false);
  return o;
}

inline ExperimentConfig parse_config(const Json& j) {
  using namespace detail;
  check_keys(j, "config", {"experiment", "model", "sim", "analysis", "output", "parameters", "description"});
  ExperimentConfig c;
  c.source = j;
  c.kind = parse_experiment_kind(get_string(j, "experiment", "config"));
  if (j.contains("model")) c.model = parse_model(j["model"]);
  if (j.contains("sim")) c.sim = parse_sim(j["sim"]);
  if (j.contains("analysis")) c.analysis = parse_analysis(j["analysis"]);
  if (j.contains("output")) c.output = parse_output(j["output"]);
  if (j.contains("parameters")) {
    if (!j["parameters"].is_object()) throw Error(ErrorCode::ConfigError, "parameters must be an object");
    c.parameters = j["parameters"];
  }
  if (c.kind != ExperimentKind::PaperNumbers && !c.model) {
    throw Error(ErrorCode::ConfigError, "experiment '" + to_string(c.kind) + "' needs a model");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// JSON Schema (draft 2020-12) for experiment configs. Versioned with the
/// project; `docs/config.schema.json` is a copy.
inline constexpr const char* kConfigSchema = R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "$id": "modeheat/config.schema.json",
  "title": "modeheat experiment config",
  "version": "1",
  "type": "object",
  "required": ["experiment"],
  "additionalProperties": false,
  "properties": {
    "experiment": {
      "enum": ["equipartition", "cold_damping", "coupled_transfer", "strong_coupling_sweep", "spectrum", "paper_numbers"]
    },
    "description": {"type": "string"},
    "model": {
      "type": "object",
      "required": ["oscillators"],
      "additionalProperties": false,
      "properties": {
        "oscillators": {
          "type": "array",
          "minItems": 1,
          "items": {
            "type": "object",
            "required": ["label", "mass", "gamma", "temperature"],
            "additionalProperties": false,
            "properties": {
              "label": {"type": "string"},
              "mass": {"type": "number", "exclusiveMinimum": 0, "description": "kg"},
              "omega": {"type": "number", "exclusiveMinimum": 0, "description": "rad/s; or give frequency_hz"},
              "frequency_hz": {"type": "number", "exclusiveMinimum": 0},
              "gamma": {"type": "number", "minimum": 0, "description": "1/s, the equation of motion carries 2 gamma du/dt"},
              "temperature": {"type": "number", "minimum": 0, "description": "bath temperature, K"}
            }
          }
        },
        "couplings": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["pair"],
            "additionalProperties": false,
            "properties": {
              "pair": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
              "spring_constant": {"type": "number", "description": "N/m; force on i is -k (u_i - u_j)"},
              "g": {"type": "number", "description": "rad/s; converted with k = 2 sqrt(m_i m_j) sqrt(omega_i omega_j) g"}
            }
          }
        },
        "feedback": {
          "type": "object",
          "additionalProperties": {
            "type": "object",
            "additionalProperties": false,
            "properties": {
              "position_gain": {"type": "number", "description": "A, N/m"},
              "velocity_gain": {"type": "number", "description": "B, N s/m"},
              "noise_psd": {"type": "number", "minimum": 0, "description": "double-sided, N^2/Hz"}
            }
          }
        },
        "noise_factor": {"type": "number", "exclusiveMinimum": 0, "default": 4}
      }
    },
    "sim": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "dt": {"type": "number", "exclusiveMinimum": 0, "description": "s; default 0.05 / max|eig(M)|"},
        "duration": {"type": "number", "exclusiveMinimum": 0, "description": "recorded seconds per member; default 100 slowest decay times"},
        "n_steps": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0, "description": "steps; default 10 / gamma_min"},
        "seed": {"type": "integer", "minimum": 0, "default": 20191219},
        "ensemble_size": {"type": "integer", "minimum": 1, "default": 16},
        "record_stride": {"type": "integer", "minimum": 1, "default": 1},
        "integrator": {"enum": ["exact", "euler_maruyama"], "default": "exact"},
        "initial": {"enum": ["zero", "stationary"], "default": "zero"},
        "allow_coarse_step": {"type": "boolean", "default": false}
      }
    },
    "analysis": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "segment_length": {"type": "integer", "minimum": 2},
        "overlap": {"type": "number", "minimum": 0, "maximum": 0.9, "default": 0.5},
        "window": {"enum": ["hann", "rectangular"], "default": "hann"},
        "band_linewidths": {"type": "number", "exclusiveMinimum": 0, "default": 20},
        "band_hz": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "max_relative_se": {"type": "number", "minimum": 0}
      }
    },
    "output": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "directory": {"type": "string", "default": "out"},
        "formats": {"type": "array", "items": {"enum": ["csv", "json"]}},
        "trajectory": {"type": "boolean", "default": false}
      }
    },
    "parameters": {
      "type": "object",
      "description": "experiment-specific settings",
      "properties": {
        "g_over_gamma": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "pair": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
        "mode_gamma": {"type": "number"},
        "mode_delta_t": {"type": "number"},
        "mode_flux": {"type": "number"},
        "bulk_flux": {"type": "number"},
        "bulk_delta_t": {"type": "number"},
        "bulk_thermal_resistance": {"type": "number"}
      }
    }
  }
}
)json";

}  // namespace modeheat
