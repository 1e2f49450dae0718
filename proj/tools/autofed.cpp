// autofed: run, sweep and self-check federated aggregation experiments.
//
//   autofed run experiment.yaml [--jobs 4] [--output out/]
//   autofed sweep experiment.yaml --key t0 --values 1 5 10 20
//   autofed check [--full]

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "autofed/checks.hpp"
#include "autofed/config.hpp"
#include "autofed/runner.hpp"

namespace {

using namespace autofed;

int load(const std::string& path, cli::RunDescriptor& d) {
  try {
    d = cli::parse_config(path);
    return cli::kExitOk;
  } catch (...) {
    return cli::exit_code_for_current_exception(std::cerr);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with learned aggregation weights"};
  app.require_subcommand(1);

  std::string config;
  std::size_t jobs = 1;
  std::string output;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Execute every strategy and seed of a config");
  run->add_option("config", config, "YAML run description")->required();
  run->add_option("--jobs,-j", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  run->add_option("--output,-o", output, "Override the output directory");
  run->add_flag("--quiet,-q", quiet, "No progress lines");

  std::string key;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Run a config once per value of one key");
  sweep->add_option("config", config, "YAML run description")->required();
  sweep->add_option("--key", key, "Key to sweep")
      ->required()
      ->check(CLI::IsMember(cli::sweepable_keys()));
  sweep->add_option("--values", values, "Values to try")->required();
  sweep->add_option("--jobs,-j", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--output,-o", output, "Override the output directory");
  sweep->add_flag("--quiet,-q", quiet, "No progress lines");

  bool full = false;
  std::string scratch = (std::filesystem::temp_directory_path() / "autofed-check").string();
  auto* check = app.add_subcommand("check", "Run the gradient, distribution and protocol checks");
  check->add_flag("--full", full, "Include the multi-seed end-to-end experiments");
  check->add_option("--scratch", scratch, "Directory for temporary artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  cli::RunOptions opts;
  opts.jobs = jobs;
  opts.log = quiet ? nullptr : &std::cerr;

  if (*check) {
    return checks::run_all(full, scratch, std::cout) == 0 ? 0 : 1;
  }

  cli::RunDescriptor d;
  if (const int rc = load(config, d); rc != cli::kExitOk) return rc;
  if (!output.empty()) d.output = output;

  if (*sweep) return cli::run_sweep(d, key, values, opts);
  return cli::run(d, opts);
}
