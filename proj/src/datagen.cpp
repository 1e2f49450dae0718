#include "autofed/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "autofed/binary_io.hpp"
#include "autofed/errors.hpp"

namespace autofed::datagen {

namespace {

constexpr std::string_view kShardMagic = "AFSH";
constexpr std::uint32_t kShardVersion = 1;

struct Sample {
  std::vector<double> x;
  std::size_t label = 0;
  std::vector<double> mask;
};

std::vector<double> dirichlet_symmetric(Rng& rng, std::size_t k, double conc) {
  std::vector<double> p(k);
  double sum = 0.0;
  for (auto& v : p) {
    v = rng.gamma(conc);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed; fall back to a single random vertex.
    std::fill(p.begin(), p.end(), 0.0);
    p[rng.below(k)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t categorical(Rng& rng, const std::vector<double>& p) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

// Class centers are shared by all clients and drawn from the dataset seed.
std::vector<std::vector<double>> class_centers(const DatasetSpec& spec) {
  Rng rng(mix_seed(spec.seed, {static_cast<std::uint64_t>(Phase::kData), 0xC1A55ULL}));
  std::vector<std::vector<double>> centers(spec.num_classes, std::vector<double>(spec.feature_dim));
  for (auto& c : centers) {
    for (auto& v : c) v = spec.class_sep * rng.normal();
  }
  return centers;
}

// Segmentation: a foreground interval whose width falls in bucket `label`.
void segmentation_sample(const DatasetSpec& spec, Rng& rng, Sample& s) {
  const std::size_t len = spec.feature_dim;
  const std::size_t buckets = spec.num_classes;
  const std::size_t min_w = 1;
  const std::size_t max_w = std::max<std::size_t>(min_w, len / 2);
  const double span = static_cast<double>(max_w - min_w + 1) / static_cast<double>(buckets);
  const auto lo = min_w + static_cast<std::size_t>(std::floor(span * static_cast<double>(s.label)));
  auto hi = min_w + static_cast<std::size_t>(std::floor(span * static_cast<double>(s.label + 1)));
  hi = std::max(hi, lo + 1);
  const std::size_t width = std::min(lo + rng.below(hi - lo), len);
  const std::size_t start = rng.below(len - width + 1);
  s.mask.assign(len, 0.0);
  s.x.assign(len, 0.0);
  for (std::size_t i = start; i < start + width; ++i) s.mask[i] = 1.0;
  for (std::size_t i = 0; i < len; ++i) {
    s.x[i] = spec.class_sep * s.mask[i] + spec.noise * rng.normal();
  }
}

nn::Batch to_batch(const DatasetSpec& spec, const std::vector<Sample>& samples,
                   std::span<const std::size_t> idx) {
  nn::Batch b;
  b.inputs = nn::Matrix(idx.size(), spec.feature_dim);
  if (spec.task == Task::kToySegmentation) b.masks = nn::Matrix(idx.size(), spec.feature_dim);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& s = samples[idx[r]];
    std::copy(s.x.begin(), s.x.end(), b.inputs.row(r).begin());
    if (spec.task == Task::kToySegmentation) {
      std::copy(s.mask.begin(), s.mask.end(), b.masks.row(r).begin());
    } else {
      b.labels.push_back(s.label);
    }
  }
  return b;
}

ClientShard make_client(const DatasetSpec& spec, std::size_t client,
                        const std::vector<std::vector<double>>& centers) {
  Rng rng(mix_seed(spec.seed, {static_cast<std::uint64_t>(Phase::kData), client}));
  const auto proportions = dirichlet_symmetric(rng, spec.num_classes, spec.skew);

  Rng shift_rng(mix_seed(spec.seed, {static_cast<std::uint64_t>(Phase::kShift), client}));
  std::vector<double> scale(spec.feature_dim), offset(spec.feature_dim);
  for (std::size_t j = 0; j < spec.feature_dim; ++j) {
    scale[j] = std::exp(spec.shift_scale * shift_rng.normal());
    offset[j] = spec.shift_offset * shift_rng.normal();
  }

  const std::size_t n = spec.size_of(client);
  std::vector<Sample> samples(n);
  for (auto& s : samples) {
    s.label = categorical(rng, proportions);
    if (spec.task == Task::kClassification) {
      s.x.resize(spec.feature_dim);
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        s.x[j] = centers[s.label][j] + spec.noise * rng.normal();
      }
    } else {
      segmentation_sample(spec, rng, s);
    }
    for (std::size_t j = 0; j < spec.feature_dim; ++j) s.x[j] = scale[j] * s.x[j] + offset[j];
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(mix_seed(spec.seed, {static_cast<std::uint64_t>(Phase::kSplit), client}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);

  const auto n_val = static_cast<std::size_t>(std::llround(spec.split.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(spec.split.test * static_cast<double>(n)));
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n) {
    throw ConfigError("client " + std::to_string(client) + " with " + std::to_string(n) +
                      " samples leaves an empty split");
  }
  const std::size_t n_train = n - n_val - n_test;
  std::span<const std::size_t> all(order);

  ClientShard shard;
  shard.client_id = client;
  shard.train = to_batch(spec, samples, all.subspan(0, n_train));
  shard.val = to_batch(spec, samples, all.subspan(n_train, n_val));
  shard.test = to_batch(spec, samples, all.subspan(n_train + n_val, n_test));
  for (std::size_t i = 0; i < n_train; ++i) shard.train_classes.push_back(samples[order[i]].label);
  return shard;
}

void put_matrix(std::string& out, const nn::Matrix& m) {
  for (double v : m.data) bin::put_f64(out, v);
}

nn::Matrix read_matrix(bin::Reader& in, std::size_t rows, std::size_t cols) {
  nn::Matrix m(rows, cols);
  for (auto& v : m.data) v = in.f64();
  return m;
}

}  // namespace

void DatasetSpec::validate() const {
  if (clients < 2) throw ConfigError("dataset.clients must be >= 2");
  if (!(skew > 0.0)) throw ConfigError("dataset.skew must be > 0");
  if (num_classes < 1) throw ConfigError("dataset.num_classes must be >= 1");
  if (feature_dim < 1) throw ConfigError("dataset.feature_dim must be >= 1");
  if (!client_sizes.empty() && client_sizes.size() != clients) {
    throw ConfigError("dataset.client_sizes has " + std::to_string(client_sizes.size()) +
                      " entries but dataset.clients is " + std::to_string(clients));
  }
  if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0)) {
    throw ConfigError("dataset.split fractions must be positive");
  }
  if (std::fabs(split.train + split.val + split.test - 1.0) > 1e-9) {
    throw ConfigError("dataset.split fractions must sum to 1");
  }
  if (shift_scale < 0.0 || shift_offset < 0.0 || noise < 0.0) {
    throw ConfigError("dataset shift/noise magnitudes must be non-negative");
  }
}

bool ClientShard::operator==(const ClientShard& o) const {
  auto eq = [](const nn::Batch& a, const nn::Batch& b) {
    return a.inputs == b.inputs && a.labels == b.labels && a.masks == b.masks;
  };
  return client_id == o.client_id && eq(train, o.train) && eq(val, o.val) &&
         eq(test, o.test) && train_classes == o.train_classes;
}

std::vector<ClientShard> generate(const DatasetSpec& spec) {
  spec.validate();
  const auto centers = class_centers(spec);
  std::vector<ClientShard> shards;
  shards.reserve(spec.clients);
  for (std::size_t k = 0; k < spec.clients; ++k) shards.push_back(make_client(spec, k, centers));
  return shards;
}

ClientSizes client_sizes(const std::vector<std::size_t>& sizes) {
  ClientSizes out;
  out.n_k = sizes;
  out.n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  for (auto s : sizes) {
    out.fractions.push_back(static_cast<double>(s) / static_cast<double>(out.n));
  }
  return out;
}

ClientSizes client_sizes(const std::vector<ClientShard>& shards) {
  std::vector<std::size_t> sizes;
  for (const auto& s : shards) sizes.push_back(s.n());
  return client_sizes(sizes);
}

std::vector<double> class_histogram(const ClientShard& shard, std::size_t num_classes) {
  std::vector<double> h(num_classes, 0.0);
  for (auto c : shard.train_classes) h.at(c) += 1.0;
  const double total = static_cast<double>(shard.train_classes.size());
  for (auto& v : h) v /= total;
  return h;
}

std::string encode_shard(const ClientShard& shard) {
  const bool masks = shard.train.masks.rows > 0;
  std::string out;
  bin::put_bytes(out, kShardMagic);
  bin::put_u32(out, kShardVersion);
  bin::put_u64(out, shard.client_id);
  bin::put_u64(out, shard.train.inputs.cols);
  bin::put_u64(out, masks ? 1 : 0);
  bin::put_u64(out, masks ? shard.train.masks.cols : 1);
  for (const auto* b : {&shard.train, &shard.val, &shard.test}) bin::put_u64(out, b->size());
  for (const auto* b : {&shard.train, &shard.val, &shard.test}) {
    put_matrix(out, b->inputs);
    if (masks) {
      put_matrix(out, b->masks);
    } else {
      for (auto y : b->labels) bin::put_f64(out, static_cast<double>(y));
    }
  }
  for (auto c : shard.train_classes) bin::put_f64(out, static_cast<double>(c));
  return out;
}

ClientShard decode_shard(std::string_view bytes) {
  bin::Reader in(bytes);
  if (in.bytes(kShardMagic.size()) != kShardMagic) throw IoError("bad shard file magic");
  if (in.u32() != kShardVersion) throw IoError("unsupported shard file version");
  ClientShard shard;
  shard.client_id = in.u64();
  const auto dim = in.u64();
  const bool masks = in.u64() == 1;
  const auto width = in.u64();
  std::size_t counts[3];
  for (auto& c : counts) c = in.u64();
  nn::Batch* parts[3] = {&shard.train, &shard.val, &shard.test};
  for (int i = 0; i < 3; ++i) {
    parts[i]->inputs = read_matrix(in, counts[i], dim);
    if (masks) {
      parts[i]->masks = read_matrix(in, counts[i], width);
    } else {
      for (std::size_t r = 0; r < counts[i]; ++r) {
        parts[i]->labels.push_back(static_cast<std::size_t>(in.f64()));
      }
    }
  }
  for (std::size_t r = 0; r < counts[0]; ++r) {
    shard.train_classes.push_back(static_cast<std::size_t>(in.f64()));
  }
  if (!in.done()) throw IoError("trailing bytes after shard payload");
  return shard;
}

void dump_shards(const std::vector<ClientShard>& shards, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : shards) {
    const auto path = dir / ("client_" + std::to_string(s.client_id) + ".shard");
    std::ofstream f(path, std::ios::binary);
    const auto bytes = encode_shard(s);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("cannot write " + path.string());
  }
}

std::vector<ClientShard> load_shards(const std::filesystem::path& dir, std::size_t clients) {
  std::vector<ClientShard> out;
  for (std::size_t k = 0; k < clients; ++k) {
    const auto path = dir / ("client_" + std::to_string(k) + ".shard");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    out.push_back(decode_shard(ss.str()));
  }
  return out;
}

}  // namespace autofed::datagen
