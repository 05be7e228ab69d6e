// SPDX-License-Identifier: MIT

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "qep/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"entropy production experiments for open quantum systems"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  long long trajectories = 0;
  bool have_seed = false;
  bool have_traj = false;

  CLI::App* run_cmd = app.add_subcommand("run", "run one configured experiment");
  run_cmd->add_option("--config", config_path, "path to the JSON config")
      ->required();
  run_cmd->add_option("--out", out_dir, "directory for the emitted files")
      ->required();
  run_cmd->add_option("--seed", seed, "override the configured seed");
  run_cmd->add_option("--trajectories", trajectories,
                      "override the configured trajectory count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  have_seed = run_cmd->count("--seed") > 0;
  have_traj = run_cmd->count("--trajectories") > 0;

  std::string text;
  {
    std::ifstream f(config_path, std::ios::binary);
    if (!f) {
      std::cerr << "qep: cannot read config '" << config_path << "'\n";
      return 1;
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }

  qep::ExperimentConfig config;
  try {
    config = qep::parse_config(text);
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  if (have_seed) {
    config.seed = seed;
    config.overrides.push_back("seed=" + std::to_string(seed));
  }
  if (have_traj) {
    if (trajectories < 1) {
      std::cerr << "qep: --trajectories must be at least 1\n";
      return 1;
    }
    config.trajectories = trajectories;
    config.overrides.push_back("trajectories=" + std::to_string(trajectories));
  }

  try {
    const qep::ResultBundle bundle = qep::run(config);
    qep::emit(bundle, out_dir);
    std::cerr << "qep: run " << bundle.hash << " finished in "
              << bundle.wall_seconds << " s (" << bundle.steps << " steps)\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}
