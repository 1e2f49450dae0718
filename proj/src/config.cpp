#include "autofed/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "autofed/errors.hpp"

namespace autofed::cli {

namespace {

std::string where(const YAML::Node& n) {
  const auto mark = n.Mark();
  if (mark.line < 0) return "";
  return "line " + std::to_string(mark.line + 1) + ": ";
}

// Strict view over a mapping node: every key must be consumed or it is
// reported as unknown.
class Section {
public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (!node_.IsMap()) throw ConfigError(where(node_) + "'" + name_ + "' must be a mapping");
  }

  YAML::Node get(const std::string& key) {
    seen_.insert(key);
    const YAML::Node& n = node_;
    return n[key];
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    auto n = get(key);
    if (!n) return;
    try {
      out = n.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(n) + "key '" + path(key) + "' has the wrong type");
    }
  }

  template <typename T>
  void read_opt(const std::string& key, std::optional<T>& out) {
    auto n = get(key);
    if (!n) return;
    T v{};
    read(key, v);
    out = v;
  }

  // Scalar or sequence of scalars.
  template <typename T>
  void read_list(const std::string& key, std::vector<T>& out) {
    auto n = get(key);
    if (!n) return;
    try {
      if (n.IsSequence()) {
        out = n.as<std::vector<T>>();
      } else {
        out = {n.as<T>()};
      }
    } catch (const YAML::Exception&) {
      throw ConfigError(where(n) + "key '" + path(key) + "' has the wrong type");
    }
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void finish() const {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) {
        throw ConfigError(where(kv.first) + "unknown key '" + path(key) + "'");
      }
    }
  }

  const YAML::Node& node() const { return node_; }

private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const YAML::Node& n, const std::string& key,
             std::initializer_list<std::pair<const char*, E>> options) {
  const auto s = n.as<std::string>();
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(where(n) + "key '" + key + "' has invalid value '" + s + "' (expected one of " +
                    names + ")");
}

template <typename E>
void read_enum(Section& sec, const std::string& key, E& out,
               std::initializer_list<std::pair<const char*, E>> options) {
  auto n = sec.get(key);
  if (n) out = parse_enum(n, sec.path(key), options);
}

void parse_dataset(Section sec, RunDescriptor& d) {
  auto& ds = d.dataset;
  read_enum(sec, "task", ds.task,
            {{"classification", datagen::Task::kClassification},
             {"toy_segmentation", datagen::Task::kToySegmentation}});
  sec.read("num_classes", ds.num_classes);
  sec.read("feature_dim", ds.feature_dim);
  sec.read("clients", ds.clients);
  sec.read("samples_per_client", ds.samples_per_client);
  auto sizes = sec.get("client_sizes");
  if (sizes) {
    sec.read_list("client_sizes", ds.client_sizes);
    if (!sec.node()["clients"]) ds.clients = ds.client_sizes.size();
  }
  sec.read("skew", ds.skew);
  sec.read("shift_scale", ds.shift_scale);
  sec.read("shift_offset", ds.shift_offset);
  sec.read("class_sep", ds.class_sep);
  sec.read("noise", ds.noise);
  if (auto n = sec.get("seed")) {
    sec.read("seed", ds.seed);
    d.dataset_seed_fixed = true;
  }
  if (auto n = sec.get("split")) {
    Section split(n, sec.path("split"));
    split.read("train", ds.split.train);
    split.read("val", ds.split.val);
    split.read("test", ds.split.test);
    split.finish();
  }
  sec.finish();
}

void parse_model(Section sec, ModelSection& m) {
  sec.read_list("hidden", m.hidden);
  read_enum(sec, "activation", m.activation,
            {{"tanh", nn::Activation::kTanh}, {"sigmoid", nn::Activation::kSigmoid}});
  if (auto n = sec.get("loss")) {
    m.loss = parse_enum(n, sec.path("loss"),
                        {std::pair{"cross_entropy", nn::LossKind::kCrossEntropy},
                         std::pair{"soft_dice", nn::LossKind::kSoftDice}});
  }
  sec.finish();
}

void parse_optimizer(Section sec, nn::OptConfig& o) {
  read_enum(sec, "kind", o.kind, {{"sgd", nn::OptKind::kSgd}, {"adam", nn::OptKind::kAdam}});
  sec.read("lr", o.learning_rate);
  sec.read("beta1", o.beta1);
  sec.read("beta2", o.beta2);
  sec.read("eps", o.eps);
  sec.finish();
}

void parse_federated(Section sec, fed::FLConfig& f) {
  sec.read("rounds", f.rounds);
  sec.read("t0", f.interval);
  sec.read("agg_steps", f.agg_steps);
  sec.read_list("local_iters", f.local_iters);
  sec.read("batch_size", f.batch_size);
  sec.read("agg_batch_size", f.agg_batch_size);
  if (auto n = sec.get("optimizer")) parse_optimizer(Section(n, sec.path("optimizer")), f.local_opt);
  sec.read("beta_lr", f.beta_lr);
  read_enum(sec, "beta_optimizer", f.beta_opt, {{"sgd", nn::OptKind::kSgd}, {"adam", nn::OptKind::kAdam}});
  sec.read_list("beta_init", f.beta_init);
  sec.read("reinit_each_session", f.reinit_each_session);
  read_enum(sec, "agg_split", f.agg_split,
            {{"train", fed::AggDataSplit::kTrain}, {"val", fed::AggDataSplit::kVal}});
  sec.read("threads", f.threads);
  sec.finish();
}

StrategyEntry parse_strategy(Section sec) {
  StrategyEntry s;
  auto name = sec.get("name");
  if (!name) throw ConfigError(where(sec.node()) + "strategy entry needs a 'name'");
  s.strategy = parse_enum(name, sec.path("name"),
                          {std::pair{"fedavg_sized", fed::Strategy::kFedAvgSized},
                           std::pair{"fedavg_even", fed::Strategy::kFedAvgEven},
                           std::pair{"fedprox", fed::Strategy::kFedProx},
                           std::pair{"autofedavg", fed::Strategy::kAutoFedAvg},
                           std::pair{"local_only", fed::Strategy::kLocalOnly}});
  sec.read("label", s.label);
  std::optional<double> mu;
  sec.read_opt("mu", mu);
  // FedProx defaults to the proximal weight reported best on real data.
  s.mu = mu.value_or(s.strategy == fed::Strategy::kFedProx ? 0.001 : 0.0);
  read_enum(sec, "parameterization", s.parameterization,
            {{"softmax", agg::Parameterization::kSoftmax},
             {"dirichlet", agg::Parameterization::kDirichlet}});
  read_enum(sec, "granularity", s.granularity,
            {{"network", agg::Granularity::kNetwork}, {"layer", agg::Granularity::kLayer}});
  if (sec.get("beta_init")) {
    std::vector<double> v;
    sec.read_list("beta_init", v);
    s.beta_init = v;
  }
  sec.read_opt("beta_lr", s.beta_lr);
  if (sec.get("beta_optimizer")) {
    nn::OptKind k = nn::OptKind::kSgd;
    read_enum(sec, "beta_optimizer", k, {{"sgd", nn::OptKind::kSgd}, {"adam", nn::OptKind::kAdam}});
    s.beta_opt = k;
  }
  sec.read_opt("t0", s.interval);
  sec.read_opt("reinit_each_session", s.reinit_each_session);
  sec.read("pin_alpha_sized", s.pin_alpha_sized);
  sec.finish();
  if (s.label.empty()) s.label = default_label(s);
  if (s.label.find_first_of("/\\, \t") != std::string::npos) {
    throw ConfigError(where(sec.node()) + "strategy label '" + s.label +
                      "' may not contain separators or whitespace");
  }
  return s;
}

RunDescriptor parse_root(const YAML::Node& root) {
  if (!root || root.IsNull()) throw ConfigError("configuration is empty");
  Section sec(root, "");
  RunDescriptor d;
  if (auto n = sec.get("dataset")) parse_dataset(Section(n, "dataset"), d);
  if (auto n = sec.get("model")) parse_model(Section(n, "model"), d.model);
  if (auto n = sec.get("federated")) parse_federated(Section(n, "federated"), d.federated);
  if (auto n = sec.get("strategies")) {
    if (!n.IsSequence()) throw ConfigError(where(n) + "'strategies' must be a list");
    for (std::size_t i = 0; i < n.size(); ++i) {
      d.strategies.push_back(parse_strategy(Section(n[i], "strategies[" + std::to_string(i) + "]")));
    }
  }
  if (d.strategies.empty()) {
    StrategyEntry s;
    s.label = default_label(s);
    d.strategies.push_back(s);
  }
  std::string out;
  sec.read("output", out);
  if (!out.empty()) d.output = out;
  std::optional<std::size_t> repeat;
  sec.read_opt("repeat", repeat);
  auto seeds_node = sec.get("seeds");
  if (seeds_node) {
    sec.read_list("seeds", d.seeds);
    if (repeat && *repeat != d.seeds.size()) {
      throw ConfigError(where(seeds_node) + "'repeat' (" + std::to_string(*repeat) +
                        ") does not match the length of 'seeds' (" +
                        std::to_string(d.seeds.size()) + ")");
    }
  } else if (repeat) {
    d.seeds.clear();
    for (std::size_t i = 1; i <= *repeat; ++i) d.seeds.push_back(i);
  }
  if (auto n = sec.get("sweep")) {
    Section sw(n, "sweep");
    SweepSpec s;
    sw.read("key", s.key);
    sw.read_list("values", s.values);
    sw.finish();
    d.sweep = s;
  }
  sec.finish();
  d.validate();
  return d;
}

bool is_integral_key(const std::string& key) {
  return key == "t0" || key == "rounds" || key == "agg_steps" || key == "local_iters";
}

}  // namespace

nn::ModelSpec ModelSection::build(const datagen::DatasetSpec& data) const {
  const bool seg = data.task == datagen::Task::kToySegmentation;
  const auto kind = loss.value_or(seg ? nn::LossKind::kSoftDice : nn::LossKind::kCrossEntropy);
  if (seg && kind != nn::LossKind::kSoftDice) {
    throw ConfigError("model.loss must be soft_dice for toy_segmentation");
  }
  if (!seg && kind != nn::LossKind::kCrossEntropy) {
    throw ConfigError("model.loss must be cross_entropy for classification");
  }
  const std::size_t out = seg ? data.feature_dim : data.num_classes;
  return nn::ModelSpec::mlp(data.feature_dim, hidden, out, activation, kind);
}

std::string default_label(const StrategyEntry& s) {
  if (s.strategy != fed::Strategy::kAutoFedAvg) return fed::strategy_name(s.strategy);
  std::string label = "autofedavg-";
  label += s.granularity == agg::Granularity::kNetwork ? "N-" : "L-";
  label += s.parameterization == agg::Parameterization::kDirichlet ? "dirichlet" : "softmax";
  return label;
}

fed::FLConfig RunDescriptor::config_for(const StrategyEntry& s, std::uint64_t seed) const {
  fed::FLConfig c = federated;
  c.strategy = s.strategy;
  c.mu = s.mu;
  c.parameterization = s.parameterization;
  c.granularity = s.granularity;
  if (s.beta_init) c.beta_init = *s.beta_init;
  if (s.beta_lr) c.beta_lr = *s.beta_lr;
  if (s.beta_opt) c.beta_opt = *s.beta_opt;
  if (s.interval) c.interval = *s.interval;
  if (s.reinit_each_session) c.reinit_each_session = *s.reinit_each_session;
  c.pin_alpha_sized = s.pin_alpha_sized;
  c.seed = seed;
  return c;
}

datagen::DatasetSpec RunDescriptor::dataset_for(std::uint64_t seed) const {
  auto ds = dataset;
  if (!dataset_seed_fixed) ds.seed = mix_seed(seed, {static_cast<std::uint64_t>(Phase::kData)});
  return ds;
}

void RunDescriptor::validate() const {
  dataset.validate();
  (void)model.build(dataset);
  std::set<std::string> labels;
  for (const auto& s : strategies) {
    if (!labels.insert(s.label).second) {
      throw ConfigError("duplicate strategy label '" + s.label + "'");
    }
    config_for(s, 0).validate(dataset.clients);
  }
  if (seeds.empty()) throw ConfigError("'seeds' must not be empty");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("'seeds' contains duplicates");
  if (sweep) {
    const auto& keys = sweepable_keys();
    if (std::find(keys.begin(), keys.end(), sweep->key) == keys.end()) {
      throw ConfigError("sweep.key '" + sweep->key + "' is not sweepable");
    }
    if (sweep->values.empty()) throw ConfigError("sweep.values must not be empty");
    for (double v : sweep->values) with_sweep_value(*this, sweep->key, v);
  }
}

const std::vector<std::string>& sweepable_keys() {
  static const std::vector<std::string> keys = {
      "t0", "rounds", "agg_steps", "local_iters", "beta_lr", "mu", "skew", "shift_scale", "shift_offset"};
  return keys;
}

RunDescriptor with_sweep_value(const RunDescriptor& d, const std::string& key, double value) {
  RunDescriptor out = d;
  out.sweep.reset();
  if (is_integral_key(key) && (value < 1.0 || value != std::floor(value))) {
    throw ConfigError("sweep value " + std::to_string(value) + " for '" + key +
                      "' must be a positive integer");
  }
  const auto as_size = static_cast<std::size_t>(value);
  if (key == "t0") {
    out.federated.interval = as_size;
    for (auto& s : out.strategies) s.interval.reset();
  } else if (key == "rounds") {
    out.federated.rounds = as_size;
  } else if (key == "agg_steps") {
    out.federated.agg_steps = as_size;
  } else if (key == "local_iters") {
    out.federated.local_iters = {as_size};
  } else if (key == "beta_lr") {
    out.federated.beta_lr = value;
    for (auto& s : out.strategies) s.beta_lr.reset();
  } else if (key == "mu") {
    for (auto& s : out.strategies) s.mu = value;
  } else if (key == "skew") {
    out.dataset.skew = value;
  } else if (key == "shift_scale") {
    out.dataset.shift_scale = value;
  } else if (key == "shift_offset") {
    out.dataset.shift_offset = value;
  } else {
    throw ConfigError("'" + key + "' is not sweepable");
  }
  for (const auto& s : out.strategies) out.config_for(s, 0).validate(out.dataset.clients);
  out.dataset.validate();
  return out;
}

RunDescriptor parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": malformed configuration: " +
                      e.msg);
  }
  return parse_root(root);
}

RunDescriptor parse_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open configuration file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace autofed::cli
