#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "autofed/config.hpp"

// Self-checks shared by `autofed check` and the acceptance binary. Every
// tolerance lives here as a named constant.
namespace autofed::checks {

inline constexpr double kModeTol = 1e-12;
inline constexpr double kModeGridStep = 0.005;
inline constexpr double kModelGradRelTol = 1e-5;
inline constexpr double kSoftmaxJacAbsTol = 1e-8;
inline constexpr double kAlphaGradRelTol = 1e-5;
inline constexpr double kReparamRelTol = 1e-2;
inline constexpr std::size_t kReparamSamples = 2000;
inline constexpr std::size_t kDirichletDraws = 10000;
inline constexpr double kSigmaBand = 3.0;
inline constexpr double kBetaByteShare = 0.01;
inline constexpr double kEquivalenceSeconds = 30.0;
inline constexpr double kGradientSeconds = 120.0;
inline constexpr double kEndToEndSeconds = 300.0;

struct Result {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

Result protocol_equivalence();
Result communication_law();
Result dirichlet_mode();
Result gradient_suites();
Result distribution_statistics();
Result end_to_end_direction(const std::filesystem::path& scratch);
Result interval_degradation(const std::filesystem::path& scratch);
Result determinism(const std::filesystem::path& scratch);

// Scenario behind the end-to-end and interval checks: 3 clients sized
// 671:88:186 with label skew and covariate shift, 5 seeds.
cli::RunDescriptor skewed_three_client_descriptor();

struct Entry {
  std::string name;
  bool slow = false;
  std::function<Result(const std::filesystem::path&)> run;
};

const std::vector<Entry>& registry();

// Runs the registry (skipping slow entries unless `full`) and prints one
// PASS/FAIL line per check. Returns the number of failures.
int run_all(bool full, const std::filesystem::path& scratch, std::ostream& out);

}  // namespace autofed::checks
