// mmfg: solver and simulation front end for major-minor LQG mean field games.
//
//   mmfg validate|solve|simulate|chaos|nash|measure-rate|example6 --config FILE
//        [--seed S] [--out DIR]

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mmfg/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"LQG major-minor mean field game solver and simulation laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  const char* help[] = {
      "check model data and report every violation",
      "solve the Riccati decoupling and check invertibility of Gamma22",
      "simulate the finite game, limit particles or conditional mean",
      "propagation-of-chaos experiment over N_list",
      "approximate Nash deviation experiment over N_list",
      "empirical-measure W2 rate (d = 1)",
      "scalar example: scheme comparison and finite-to-limit convergence"};
  int idx = 0;
  for (const char* name :
       {"validate", "solve", "simulate", "chaos", "nash", "measure-rate", "example6"}) {
    CLI::App* sub = app.add_subcommand(name, help[idx++]);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--seed", seed, "override mc.seed");
    sub->add_option("--out", out_dir, "override output_dir");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mmfg::cli::kConfigError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const auto experiment = mmfg::io::parse_experiment(name);

  mmfg::io::RunConfig cfg;
  try {
    cfg = mmfg::io::load_config(config_path);
  } catch (const mmfg::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mmfg::cli::exit_code_for(e.kind());
  }
  if (seed) cfg.seed = *seed;
  if (out_dir) cfg.output_dir = *out_dir;
  return mmfg::cli::run(cfg, *experiment);
}
