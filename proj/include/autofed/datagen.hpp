#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "autofed/nn.hpp"

// Synthetic federated datasets with label skew (Dirichlet class proportions
// per client) and covariate shift (per-client affine feature transform).
namespace autofed::datagen {

enum class Task { kClassification, kToySegmentation };

struct Split {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct DatasetSpec {
  Task task = Task::kClassification;
  std::size_t num_classes = 4;
  std::size_t feature_dim = 8;
  std::size_t clients = 3;
  // Samples per client; overridden per client by `client_sizes` when set.
  std::size_t samples_per_client = 200;
  std::vector<std::size_t> client_sizes;
  // Symmetric Dirichlet concentration for per-client class proportions.
  double skew = 1.0;
  // Per-client affine shift x' = scale * x + offset, drawn per feature as
  // scale = exp(shift_scale * N(0,1)), offset = shift_offset * N(0,1).
  double shift_scale = 0.0;
  double shift_offset = 0.0;
  // Distance scale of the class centers and within-class noise.
  double class_sep = 2.0;
  double noise = 1.0;
  Split split;
  std::uint64_t seed = 0;

  std::size_t size_of(std::size_t client) const {
    return client_sizes.empty() ? samples_per_client : client_sizes[client];
  }
  void validate() const;
};

struct ClientShard {
  std::size_t client_id = 0;
  nn::Batch train;
  nn::Batch val;
  nn::Batch test;
  // Per-sample class of the train split (segmentation: width bucket).
  std::vector<std::size_t> train_classes;

  std::size_t n() const { return train.size(); }
  bool operator==(const ClientShard& o) const;
};

std::vector<ClientShard> generate(const DatasetSpec& spec);

struct ClientSizes {
  std::vector<std::size_t> n_k;
  std::size_t n = 0;
  std::vector<double> fractions;
};

ClientSizes client_sizes(const std::vector<ClientShard>& shards);
ClientSizes client_sizes(const std::vector<std::size_t>& sizes);

// Histogram of class membership over all splits of one client, normalized.
std::vector<double> class_histogram(const ClientShard& shard, std::size_t num_classes);

// Shard file: "AFSH" magic, u32 version, u64 client_id, u64 feature_dim,
// u64 target kind (0 labels, 1 masks), u64 target width, u64 counts of
// train/val/test, then per split the inputs row-major followed by targets,
// followed by the train class tags; all values as little-endian doubles.
std::string encode_shard(const ClientShard& shard);
ClientShard decode_shard(std::string_view bytes);
void dump_shards(const std::vector<ClientShard>& shards, const std::filesystem::path& dir);
std::vector<ClientShard> load_shards(const std::filesystem::path& dir, std::size_t clients);

}  // namespace autofed::datagen
