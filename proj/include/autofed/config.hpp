#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "autofed/datagen.hpp"
#include "autofed/fedsim.hpp"
#include "autofed/nn.hpp"

namespace autofed::cli {

struct ModelSection {
  std::vector<std::size_t> hidden{32};
  nn::Activation activation = nn::Activation::kTanh;
  std::optional<nn::LossKind> loss;  // defaults from the dataset task

  nn::ModelSpec build(const datagen::DatasetSpec& data) const;
};

// One strategy entry: a label plus the FLConfig fields it overrides.
struct StrategyEntry {
  std::string label;
  fed::Strategy strategy = fed::Strategy::kFedAvgSized;
  double mu = 0.0;
  agg::Parameterization parameterization = agg::Parameterization::kDirichlet;
  agg::Granularity granularity = agg::Granularity::kNetwork;
  std::optional<std::vector<double>> beta_init;
  std::optional<double> beta_lr;
  std::optional<nn::OptKind> beta_opt;
  std::optional<std::size_t> interval;
  std::optional<bool> reinit_each_session;
  bool pin_alpha_sized = false;
};

struct SweepSpec {
  std::string key;
  std::vector<double> values;
};

struct RunDescriptor {
  datagen::DatasetSpec dataset;
  bool dataset_seed_fixed = false;
  ModelSection model;
  fed::FLConfig federated;
  std::vector<StrategyEntry> strategies;
  std::filesystem::path output = "out";
  std::vector<std::uint64_t> seeds{1};
  std::optional<SweepSpec> sweep;

  // Effective configuration of one (strategy, seed) run.
  fed::FLConfig config_for(const StrategyEntry& s, std::uint64_t seed) const;
  datagen::DatasetSpec dataset_for(std::uint64_t seed) const;
  void validate() const;
};

// Keys accepted by `sweep`.
const std::vector<std::string>& sweepable_keys();
// Returns a copy of `d` with the sweep key set to `value`.
RunDescriptor with_sweep_value(const RunDescriptor& d, const std::string& key, double value);

RunDescriptor parse_config(const std::filesystem::path& path);
RunDescriptor parse_config_text(const std::string& text);

std::string default_label(const StrategyEntry& s);

}  // namespace autofed::cli
