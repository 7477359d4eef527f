// modeheat command line: run experiments, print the config schema, report versions.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "modeheat/config.hpp"
#include "modeheat/experiments.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitOracle = 4;

int fail(const std::string& code, const std::string& message, int status) {
  std::cerr << "code=" << code << " " << message << '\n';
  return status;
}

int run(const std::string& path, std::optional<std::uint64_t> seed, const std::string& out, std::size_t threads) {
  using namespace modeheat;
  ExperimentConfig cfg;
  std::filesystem::path dir;
  try {
    cfg = load_config(path);
    if (seed) {
      if (!cfg.sim) cfg.sim = SimSettings{};
      cfg.sim->seed = *seed;
      cfg.source["sim"]["seed"] = *seed;
    }
    dir = out.empty() ? std::filesystem::path(cfg.output.directory) : std::filesystem::path(out);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
      throw Error(ErrorCode::ConfigError, "output directory '" + dir.string() + "' is not writable");
    }
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what(), kExitConfig);
  }

  try {
    const auto result = run_experiment(cfg, threads);
    write_outputs(cfg, result, dir);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& t : result.tables) std::cout << render_table(t) << '\n';
    if (result.has_verdict()) {
      std::cout << verdict_text(result);
      if (!result.passed()) return fail("OracleFail", "verdict FAIL, see " + (dir / "verdict.txt").string(), kExitOracle);
    }
    std::cout << "outputs in " << dir.string() << '\n';
    return 0;
  } catch (const Error& e) {
    return fail(std::string(to_string(e.code())), e.what(), e.is_config_error() ? kExitConfig : kExitNumerical);
  } catch (const std::exception& e) {
    return fail("InternalError", e.what(), kExitNumerical);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"modeheat: heat transfer between thermally driven, coupled oscillators"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "run the experiment described by a JSON config");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  run_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
  run_cmd->add_option("--seed", seed, "override sim.seed");
  run_cmd->add_option("--out", out, "output directory (overrides output.directory)");
  run_cmd->add_option("--threads", threads, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);

  auto* schema_cmd = app.add_subcommand("schema", "print the config JSON schema");
  auto* version_cmd = app.add_subcommand("version", "print versions and the RNG algorithm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "code=UsageError " << e.what() << '\n';
    return kExitConfig;
  }

  if (*schema_cmd) {
    std::cout << modeheat::kConfigSchema;
    return 0;
  }
  if (*version_cmd) {
    std::cout << "modeheat " << modeheat::kVersion << '\n'
              << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n'
              << "rng " << modeheat::kRngAlgorithm << '\n';
    return 0;
  }
  return run(config_path, seed, out, threads);
}
