#include "autofed/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "autofed/errors.hpp"

namespace autofed::fed {

namespace {

// Runs fn(0..n-1) on up to `threads` workers. Results are written by index,
// so completion order never matters; the lowest-index failure is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run_one = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    const std::size_t workers = std::min(threads, n);
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run_one(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t weight_columns(const nn::ModelSpec& spec, agg::Granularity g) {
  return g == agg::Granularity::kNetwork ? 1 : spec.num_param_layers();
}

agg::Concentration initial_beta(const nn::ModelSpec& spec, const FLConfig& cfg, std::size_t k) {
  const std::size_t cols = weight_columns(spec, cfg.granularity);
  agg::Concentration c{cfg.parameterization, agg::WeightTable(k, cols)};
  for (std::size_t p = 0; p < cols; ++p) {
    for (std::size_t i = 0; i < k; ++i) {
      c.values.at(i, p) = cfg.beta_init.size() == 1 ? cfg.beta_init[0] : cfg.beta_init[i];
    }
  }
  agg::clamp_concentration(c);
  return c;
}

std::vector<double> size_column(std::span<const datagen::ClientShard> shards) {
  std::vector<double> col;
  for (const auto& s : shards) col.push_back(static_cast<double>(s.n()));
  return col;
}

const nn::Batch& agg_batch_source(const datagen::ClientShard& shard, AggDataSplit split) {
  return split == AggDataSplit::kTrain ? shard.train : shard.val;
}

// beta^{s,k} for one client at one step.
agg::WeightTable client_beta_step(const nn::ModelSpec& spec,
                                  std::span<const nn::ParamVector> models,
                                  const agg::Concentration& beta, const nn::Batch& batch,
                                  nn::OptState& opt, Rng& rng) {
  const std::size_t cols = beta.values.columns();
  const std::size_t k_count = models.size();
  agg::WeightTable dbeta(k_count, cols);
  if (beta.parameterization == agg::Parameterization::kSoftmax) {
    const auto a = agg::softmax_map(beta);
    const auto mixed = agg::mix_models(models, a);
    const auto [value, g] = nn::loss_and_grad(spec, mixed, batch);
    if (!std::isfinite(value)) throw NumericalError("non-finite weight-learning loss");
    const auto dalpha = agg::alpha_grad(g, models, agg::granularity_for(cols));
    dbeta = agg::softmax_backward(dalpha, a);
  } else {
    agg::AggWeights a{agg::granularity_for(cols), agg::WeightTable(k_count, cols)};
    std::vector<nn::Matrix> jacobians;
    for (std::size_t p = 0; p < cols; ++p) {
      const auto draw = agg::dirichlet_sample(beta.values.column(p), rng);
      std::copy(draw.alpha.begin(), draw.alpha.end(), a.values.column(p).begin());
      jacobians.push_back(agg::dirichlet_sample_grad(beta.values.column(p), draw.z));
    }
    const auto mixed = agg::mix_models(models, a);
    const auto [value, g] = nn::loss_and_grad(spec, mixed, batch);
    if (!std::isfinite(value)) throw NumericalError("non-finite weight-learning loss");
    const auto dalpha = agg::alpha_grad(g, models, agg::granularity_for(cols));
    for (std::size_t p = 0; p < cols; ++p) {
      const auto col = agg::dirichlet_backward(dalpha.column(p), jacobians[p]);
      std::copy(col.begin(), col.end(), dbeta.column(p).begin());
    }
  }
  const nn::Layout layout{{"beta", 0, beta.values.flat().size()}};
  const auto bv = beta.values.flat();
  const auto gv = dbeta.flat();
  nn::ParamVector w(layout, {bv.begin(), bv.end()});
  std::tie(w, opt) = nn::opt_step(std::move(opt), std::move(w), nn::ParamVector(layout, {gv.begin(), gv.end()}));
  agg::Concentration next = beta;
  std::copy(w.values().begin(), w.values().end(), next.values.flat().begin());
  agg::clamp_concentration(next);
  for (double v : next.values.flat()) {
    if (!std::isfinite(v)) throw NumericalError("non-finite concentration update");
  }
  return next.values;
}

double checked_score(const nn::ModelSpec& spec, const nn::ParamVector& w, const nn::Batch& b) {
  const double s = nn::score(spec, w, b);
  if (!std::isfinite(s)) throw NumericalError("non-finite validation score");
  return s;
}

}  // namespace

void FLConfig::validate(std::size_t clients) const {
  if (rounds < 1) throw ConfigError("federated.rounds must be >= 1");
  if (interval < 1 || interval > rounds) {
    throw ConfigError("federated.t0 (" + std::to_string(interval) +
                      ") must satisfy 1 <= t0 <= federated.rounds (" + std::to_string(rounds) + ")");
  }
  if (agg_steps < 1) throw ConfigError("federated.agg_steps must be >= 1");
  if (local_iters.empty() || (local_iters.size() != 1 && local_iters.size() != clients)) {
    throw ConfigError("federated.local_iters needs 1 or K entries");
  }
  if (batch_size < 1 || agg_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(mu >= 0.0)) throw ConfigError("strategy mu must be >= 0");
  if (!(beta_lr >= 0.0) || !std::isfinite(beta_lr)) throw ConfigError("beta_lr must be >= 0");
  if (!(local_opt.learning_rate >= 0.0)) throw ConfigError("local learning rate must be >= 0");
  if (beta_init.empty() || (beta_init.size() != 1 && beta_init.size() != clients)) {
    throw ConfigError("beta_init needs 1 or K entries");
  }
  for (double b : beta_init) {
    if (!std::isfinite(b)) throw ConfigError("beta_init must be finite");
    if (strategy == Strategy::kAutoFedAvg &&
        parameterization == agg::Parameterization::kDirichlet && !(b > 1.0)) {
      throw ConfigError("Dirichlet beta_init must exceed 1 so the mode is defined");
    }
  }
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kFedAvgSized:
      return "fedavg_sized";
    case Strategy::kFedAvgEven:
      return "fedavg_even";
    case Strategy::kFedProx:
      return "fedprox";
    case Strategy::kAutoFedAvg:
      return "autofedavg";
    case Strategy::kLocalOnly:
      return "local_only";
  }
  return "unknown";
}

RoundComm& CommLedger::round(std::size_t t) {
  if (rounds_.empty() || rounds_.back().round != t) {
    if (!rounds_.empty() && rounds_.back().round > t) {
      throw InvariantError("ledger rounds must be recorded in order");
    }
    rounds_.push_back(RoundComm{t});
  }
  return rounds_.back();
}

std::size_t CommLedger::base_model_transfers() const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += r.model_down + r.model_up;
  return n;
}

std::size_t CommLedger::extra_model_transfers() const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += r.model_extra;
  return n;
}

std::size_t CommLedger::beta_transfers() const {
  std::size_t n = 0;
  for (const auto& r : rounds_) n += r.beta_down + r.beta_up;
  return n;
}

std::size_t CommLedger::model_bytes_through(std::size_t t) const {
  std::size_t n = 0;
  for (const auto& r : rounds_) {
    if (r.round <= t) n += r.model_down + r.model_up + r.model_extra;
  }
  return n * model_bytes_;
}

std::size_t CommLedger::beta_bytes_through(std::size_t t) const {
  std::size_t n = 0;
  for (const auto& r : rounds_) {
    if (r.round <= t) n += r.beta_down + r.beta_up;
  }
  return n * beta_bytes_;
}

std::size_t CommLedger::total_model_bytes() const {
  return (base_model_transfers() + extra_model_transfers()) * model_bytes_;
}

std::size_t CommLedger::total_beta_bytes() const { return beta_transfers() * beta_bytes_; }

double extra_comm_ratio(std::size_t clients, std::size_t interval) {
  return static_cast<double>(clients - 1) / (2.0 * static_cast<double>(interval));
}

double ledger_ratio(const CommLedger& ledger) {
  const auto base = ledger.base_model_transfers();
  if (base == 0) return 0.0;
  return static_cast<double>(ledger.extra_model_transfers()) / static_cast<double>(base);
}

std::string RoundLog::phase_flags() const {
  std::string s;
  if (local_trained) s += 'L';
  if (weights_learned) s += 'W';
  if (aggregated) s += 'A';
  return s;
}

void MetricsMatrix::summarize() {
  const std::size_t k = local.rows;
  if (k == 0 || local.cols != k || global_row.size() != k) {
    throw ConfigError("metrics matrix must be K x K with a K-entry global row");
  }
  double g = 0.0, diag = 0.0, off = 0.0;
  for (std::size_t j = 0; j < k; ++j) g += global_row[j];
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) {
        diag += local(i, j);
      } else {
        off += local(i, j);
      }
    }
  }
  const double kd = static_cast<double>(k);
  global_test_avg = g / kd;
  local_avg = diag / kd;
  local_gen = k > 1 ? off / (kd * (kd - 1.0)) : local_avg;
}

BatchSampler::BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), perm_(n), pos_(n) {
  if (n == 0) throw ConfigError("cannot sample batches from an empty split");
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  batch = std::min(batch, perm_.size());
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (pos_ == perm_.size()) {
      for (std::size_t i = perm_.size(); i > 1; --i) std::swap(perm_[i - 1], perm_[rng_.below(i)]);
      pos_ = 0;
    }
    out.push_back(perm_[pos_++]);
  }
  return out;
}

std::pair<double, nn::ParamVector> proximal_loss_and_grad(const nn::ModelSpec& spec,
                                                          const nn::ParamVector& w,
                                                          const nn::ParamVector& anchor,
                                                          double mu, const nn::Batch& b) {
  auto [value, g] = nn::loss_and_grad(spec, w, b);
  if (mu == 0.0) return {value, std::move(g)};
  if (!w.same_layout(anchor)) throw ConfigError("proximal anchor layout mismatch");
  double sq = 0.0;
  auto gv = g.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w[i] - anchor[i];
    sq += d * d;
    gv[i] += mu * d;
  }
  return {value + 0.5 * mu * sq, std::move(g)};
}

LocalResult local_train(const nn::ModelSpec& spec, const datagen::ClientShard& shard,
                        const nn::ParamVector& w_init, const nn::ParamVector& anchor,
                        const FLConfig& cfg, std::size_t client, std::size_t round) {
  const double mu = cfg.strategy == Strategy::kFedProx ? cfg.mu : 0.0;
  const std::uint64_t seed = mix_seed(
      cfg.seed, {round, client, static_cast<std::uint64_t>(Phase::kLocalTrain)});
  BatchSampler sampler(shard.train.size(), seed);
  auto state = nn::OptState::fresh(cfg.local_opt, w_init.size());
  nn::ParamVector w = w_init;
  const std::size_t steps = cfg.local_iters_for(client);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto rows = sampler.next(cfg.batch_size);
    const auto batch = nn::gather(shard.train, rows);
    try {
      auto [value, g] = proximal_loss_and_grad(spec, w, anchor, mu, batch);
      if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
      std::tie(w, state) = nn::opt_step(std::move(state), std::move(w), g);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " (round " + std::to_string(round) +
                           ", client " + std::to_string(client) + ", step " +
                           std::to_string(s) + ")");
    }
  }
  const double train_loss = nn::loss(spec, nn::forward(spec, w, shard.train), shard.train);
  return {std::move(w), train_loss};
}

SessionResult learn_agg_weights(const nn::ModelSpec& spec, std::span<const nn::ParamVector> models,
                                const agg::Concentration& c0,
                                std::span<const datagen::ClientShard> shards, const FLConfig& cfg,
                                std::size_t round, CommLedger* ledger) {
  const std::size_t k_count = models.size();
  if (shards.size() != k_count || c0.clients() != k_count) {
    throw ConfigError("learn_agg_weights: clients, shards and concentration disagree");
  }
  if (ledger) ledger->round(round).model_extra += k_count * (k_count - 1);

  std::vector<BatchSampler> samplers;
  std::vector<Rng> rngs;
  for (std::size_t k = 0; k < k_count; ++k) {
    const std::uint64_t seed =
        mix_seed(cfg.seed, {round, k, static_cast<std::uint64_t>(Phase::kAggLearn)});
    samplers.emplace_back(agg_batch_source(shards[k], cfg.agg_split).size(), seed);
    rngs.emplace_back(splitmix64(seed));
  }

  const nn::OptConfig beta_opt{cfg.beta_opt, cfg.beta_lr};
  std::vector<nn::OptState> opt(k_count, nn::OptState::fresh(beta_opt, c0.values.flat().size()));

  SessionResult result{c0};
  std::vector<agg::WeightTable> local(k_count);
  for (std::size_t s = 0; s < cfg.agg_steps; ++s) {
    if (ledger) {
      auto& r = ledger->round(round);
      r.beta_down += k_count;
      r.beta_up += k_count;
    }
    try {
      parallel_for(k_count, cfg.threads, [&](std::size_t k) {
        const auto& source = agg_batch_source(shards[k], cfg.agg_split);
        const auto batch = nn::gather(source, samplers[k].next(cfg.agg_batch_size));
        local[k] = client_beta_step(spec, models, result.beta, batch, opt[k], rngs[k]);
      });
    } catch (const NumericalError& e) {
      result.beta = c0;
      result.aborted = true;
      result.event = "round " + std::to_string(round) + ": weight-learning session aborted at step " +
                     std::to_string(s) + ": " + e.what();
      return result;
    }
    // Mean as beta_0 + sum_k (beta_k - beta_0) / K: identical inputs average
    // to themselves exactly.
    auto out = result.beta.values.flat();
    const auto first = local[0].flat();
    for (std::size_t i = 0; i < out.size(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 1; k < k_count; ++k) acc += local[k].flat()[i] - first[i];
      out[i] = first[i] + acc / static_cast<double>(k_count);
    }
    agg::clamp_concentration(result.beta);
  }
  return result;
}

RunResult run_federated(const nn::ModelSpec& spec, const FLConfig& cfg,
                        std::span<const datagen::ClientShard> shards) {
  const std::size_t k_count = shards.size();
  if (k_count < 2) throw ConfigError("run_federated needs at least 2 clients");
  cfg.validate(k_count);
  for (const auto& s : shards) {
    if (s.train.inputs.cols != spec.input_dim()) {
      throw ConfigError("client " + std::to_string(s.client_id) +
                        " feature dimension does not match the model input");
    }
  }

  const std::size_t cols = weight_columns(spec, cfg.granularity);
  RunResult out;
  out.ledger = CommLedger(nn::serialized_size(spec.layout()), 8 * k_count * cols);

  Rng init_rng(mix_seed(cfg.seed, {static_cast<std::uint64_t>(Phase::kInit)}));
  nn::ParamVector global = nn::init_params(spec, init_rng);

  const auto sizes = size_column(shards);
  const std::vector<double> ones(k_count, 1.0);
  const bool learning = cfg.strategy == Strategy::kAutoFedAvg;
  const bool federated = cfg.strategy != Strategy::kLocalOnly;

  agg::Concentration beta = initial_beta(spec, cfg, k_count);
  const agg::Concentration beta0 = beta;
  agg::AggWeights alpha;
  if (cfg.strategy == Strategy::kFedAvgEven) {
    alpha = agg::fixed_weights(ones, cols);
  } else if (!learning || cfg.pin_alpha_sized) {
    alpha = agg::fixed_weights(sizes, cols);
  } else {
    alpha = agg::gamma_map(beta);
  }
  alpha.check();

  std::vector<nn::ParamVector> local(k_count, global);
  std::vector<double> train_loss(k_count);
  out.best_local.resize(k_count);
  out.best_global.val_score = -1.0;
  for (auto& c : out.best_local) c.val_score = -1.0;

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundLog log;
    log.round = t;
    auto& comm = out.ledger.round(t);
    if (federated) comm.model_down += k_count;

    const std::vector<nn::ParamVector> starts = federated ? std::vector<nn::ParamVector>(k_count, global) : local;
    parallel_for(k_count, cfg.threads, [&](std::size_t k) {
      auto r = local_train(spec, shards[k], starts[k], starts[k], cfg, k, t);
      local[k] = std::move(r.w);
      train_loss[k] = r.train_loss;
    });
    log.local_trained = true;
    if (federated) out.ledger.round(t).model_up += k_count;

    if (learning && t % cfg.interval == 0) {
      const agg::Concentration start = cfg.reinit_each_session ? beta0 : beta;
      auto session = learn_agg_weights(spec, local, start, shards, cfg, t, &out.ledger);
      log.beta_in = start.values;
      log.weights_learned = true;
      if (session.aborted) {
        out.events.push_back(session.event);
      } else {
        beta = std::move(session.beta);
        if (!cfg.pin_alpha_sized) alpha = agg::gamma_map(beta);
      }
      log.beta_out = beta.values;
      alpha.check();
    }

    global = agg::mix_models(local, alpha);
    log.aggregated = federated;
    log.alpha = alpha.values;
    log.train_loss = train_loss;

    log.val.resize(k_count);
    log.local_val.resize(k_count);
    parallel_for(k_count, cfg.threads, [&](std::size_t k) {
      log.val[k] = checked_score(spec, global, shards[k].val);
      log.local_val[k] = checked_score(spec, local[k], shards[k].val);
    });
    log.global_val_avg =
        std::accumulate(log.val.begin(), log.val.end(), 0.0) / static_cast<double>(k_count);
    log.cumulative_model_bytes = out.ledger.model_bytes_through(t);
    log.cumulative_beta_bytes = out.ledger.beta_bytes_through(t);

    if (log.global_val_avg > out.best_global.val_score) {
      out.best_global = {t, log.global_val_avg, global};
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      if (log.local_val[k] > out.best_local[k].val_score) {
        out.best_local[k] = {t, log.local_val[k], local[k]};
      }
    }
    out.history.push_back(std::move(log));
  }
  out.final_w = std::move(global);
  out.final_beta = std::move(beta);
  return out;
}

MetricsMatrix select_and_evaluate(const nn::ModelSpec& spec, const RunResult& run,
                                  std::span<const datagen::ClientShard> shards) {
  if (run.history.empty()) throw ConfigError("select_and_evaluate: empty history");
  const std::size_t k_count = shards.size();
  if (run.best_local.size() != k_count) {
    throw ConfigError("select_and_evaluate: checkpoint count does not match clients");
  }
  MetricsMatrix m;
  m.local = nn::Matrix(k_count, k_count);
  m.global_row.resize(k_count);
  for (std::size_t j = 0; j < k_count; ++j) {
    m.global_row[j] = checked_score(spec, run.best_global.w, shards[j].test);
    for (std::size_t i = 0; i < k_count; ++i) {
      m.local(i, j) = checked_score(spec, run.best_local[i].w, shards[j].test);
    }
  }
  m.summarize();
  return m;
}

}  // namespace autofed::fed
