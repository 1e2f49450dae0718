#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "autofed/config.hpp"
#include "autofed/fedsim.hpp"

namespace autofed::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitNumerical = 3,
  kExitIo = 4,
};

struct RunOptions {
  std::size_t jobs = 1;      // concurrent (strategy, seed) runs
  std::ostream* log = nullptr;
};

struct SummaryRow {
  std::string strategy;
  std::size_t runs = 0;
  double global_test_avg_mean = 0.0;
  double global_test_avg_std = 0.0;
  double local_avg_mean = 0.0;
  double local_avg_std = 0.0;
  double local_gen_mean = 0.0;
  double local_gen_std = 0.0;
};

struct LabeledMetrics {
  std::string strategy;
  std::uint64_t seed = 0;
  fed::MetricsMatrix metrics;
};

// Mean and sample standard deviation (n - 1 denominator; 0 for one run) per
// strategy, in first-appearance order.
std::vector<SummaryRow> summarize(const std::vector<LabeledMetrics>& runs);

void write_rounds_csv(const std::filesystem::path& path, const std::vector<fed::RoundLog>& history);
void write_metrics_csv(const std::filesystem::path& path, const fed::MetricsMatrix& m);
fed::MetricsMatrix read_metrics_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& rows);

// Long-format (round, series, value) plot data from a run directory's
// rounds.csv, written next to it as trajectories.csv.
void emit_trajectories(const std::filesystem::path& run_dir);

// Runs every (strategy, seed) pair of `d` under `outdir`:
//   outdir/<strategy>/<seed>/{rounds,metrics,trajectories}.csv + checkpoints
//   outdir/summary.csv
std::vector<SummaryRow> execute(const RunDescriptor& d, const std::filesystem::path& outdir,
                                const RunOptions& opts);

// Sweeps one key; each value gets its own subtree plus a row block in
// outdir/sweep.csv.
void execute_sweep(const RunDescriptor& d, const std::string& key, const std::vector<double>& values,
                   const RunOptions& opts);

// Error-to-exit-code mapping around execute / execute_sweep.
int run(const RunDescriptor& d, const RunOptions& opts);
int run_sweep(const RunDescriptor& d, const std::string& key, const std::vector<double>& values,
              const RunOptions& opts);
int exit_code_for_current_exception(std::ostream& err);

}  // namespace autofed::cli
