#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "perturbvamp/cli.hpp"

namespace {

int default_threads() {
  if (const char* env = std::getenv("PERTURBVAMP_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t >= 1) return t;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse recovery under structured sensing-matrix perturbation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> modes_arg;
  int threads = default_threads();

  CLI::App* run = app.add_subcommand("run", "Run an experiment described by a config file");
  run->add_option("-c,--config", config_path, "key = value experiment config")->required();
  run->add_option("-o,--out", out_dir, "output directory for trace.csv/aggregate.csv/manifest.txt");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--modes", modes_arg, "override the mode list, e.g. oracle,pi,pc");
  run->add_option("--threads", threads, "worker threads for Monte-Carlo trials");

  std::uint64_t demo_seed = 1;
  std::optional<std::string> demo_modes;
  int demo_threads = default_threads();
  CLI::App* demo = app.add_subcommand("demo", "Single-realization NMSE-vs-iteration comparison");
  demo->add_option("--seed", demo_seed, "realization seed");
  demo->add_option("--modes", demo_modes, "mode list, e.g. oracle,pi,pc");
  demo->add_option("--threads", demo_threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      pvamp::CliOverrides ov;
      ov.seed = seed;
      ov.threads = threads;
      if (modes_arg) ov.modes = pvamp::cli_detail::parse_modes(*modes_arg);
      return pvamp::cmd_run(config_path, out_dir, ov);
    }
    std::vector<pvamp::SolveMode> modes = {pvamp::SolveMode::Oracle, pvamp::SolveMode::PI,
                                           pvamp::SolveMode::PC};
    if (demo_modes) modes = pvamp::cli_detail::parse_modes(*demo_modes);
    return pvamp::cmd_demo(demo_seed, modes, demo_threads);
  } catch (const pvamp::config_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
}
