// Command-line driver: run grids, build reports, list the vocabularies.
#include "dalr/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace dalr;
  CLI::App app{"Deep active learning for regression: experiment driver"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "run an experiment grid");
  std::string config_path, out_dir, preset_name;
  std::size_t workers = 0;
  bool resume = false;
  run_cmd->add_option("--config", config_path, "grid description (JSON)")->required();
  run_cmd->add_option("--out", out_dir, "results directory (overrides the config)");
  run_cmd->add_option("--workers", workers, "parallel cells (overrides the config)");
  run_cmd->add_option("--preset", preset_name, "desk or full")
      ->check(CLI::IsMember({"desk", "full"}));
  run_cmd->add_flag("--resume", resume, "skip cells with a completed record");

  auto* report_cmd = app.add_subcommand("report", "aggregate run records into tables");
  std::string in_dir, report_dir;
  report_cmd->add_option("--in", in_dir, "results directory")->required();
  report_cmd->add_option("--out", report_dir, "report directory")->required();

  auto* ls_strat = app.add_subcommand("list-strategies", "print strategy names");
  auto* ls_prob = app.add_subcommand("list-problems", "print problem names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      std::optional<harness::Preset> preset;
      if (!preset_name.empty()) preset = harness::parse_preset(preset_name);
      auto grid = harness::load_grid(config_path, preset);
      if (!out_dir.empty()) grid.output_dir = out_dir;
      if (workers > 0) grid.workers = workers;
      if (!resume && std::filesystem::exists(grid.output_dir) &&
          !std::filesystem::is_empty(grid.output_dir)) {
        std::cerr << "error: " << grid.output_dir << " is not empty; pass --resume to continue it\n";
        return 2;
      }
      const auto result = harness::run_grid(grid, &std::cerr);
      std::cerr << "cells: " << result.records.size() << " executed: " << result.executed
                << " skipped: " << result.skipped << " failed: " << result.failed << "\n";
      return result.failed == 0 ? 0 : 1;
    }
    if (*report_cmd) {
      const auto bundle = harness::report(harness::load_records(in_dir));
      harness::write_report(bundle, report_dir);
      return 0;
    }
    if (*ls_strat) {
      for (const auto& [kind, name] : acquisition::kStrategyNames) std::cout << name << "\n";
      return 0;
    }
    if (*ls_prob) {
      for (const auto& name : oracles::problem_names()) std::cout << name << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
