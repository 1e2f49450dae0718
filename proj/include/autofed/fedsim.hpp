#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autofed/aggregate.hpp"
#include "autofed/datagen.hpp"
#include "autofed/nn.hpp"

// Round-based federated protocol: local training, optional aggregation
// weight learning every t0 rounds, weighted aggregation, per-round
// validation and communication accounting.
namespace autofed::fed {

enum class Strategy { kFedAvgSized, kFedAvgEven, kFedProx, kAutoFedAvg, kLocalOnly };

// Which local split clients draw mini-batches from while learning weights.
enum class AggDataSplit { kTrain, kVal };

struct FLConfig {
  std::size_t rounds = 20;     // T
  std::size_t interval = 1;    // t0
  std::size_t agg_steps = 50;  // S
  // Local optimizer steps per round (M_k); one entry broadcasts to all.
  std::vector<std::size_t> local_iters{20};
  std::size_t batch_size = 16;
  std::size_t agg_batch_size = 16;
  nn::OptConfig local_opt{nn::OptKind::kAdam, 1e-3, 0.5, 0.99, 1e-8};
  double beta_lr = 0.01;
  // Client-side concentration update; adam moments live for one session.
  nn::OptKind beta_opt = nn::OptKind::kSgd;
  Strategy strategy = Strategy::kFedAvgSized;
  double mu = 0.0;
  agg::Parameterization parameterization = agg::Parameterization::kDirichlet;
  agg::Granularity granularity = agg::Granularity::kNetwork;
  // One value (symmetric) or one per client.
  std::vector<double> beta_init{6.0};
  bool reinit_each_session = false;
  // Aggregate with n_k / n regardless of the learned concentration.
  bool pin_alpha_sized = false;
  AggDataSplit agg_split = AggDataSplit::kTrain;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  std::size_t local_iters_for(std::size_t client) const {
    return local_iters.size() == 1 ? local_iters[0] : local_iters.at(client);
  }
  void validate(std::size_t clients) const;
};

std::string strategy_name(Strategy s);

// Transfers of one round, counted in payloads.
struct RoundComm {
  std::size_t round = 0;
  std::size_t model_down = 0;   // global model broadcast
  std::size_t model_up = 0;     // local model upload
  std::size_t model_extra = 0;  // peer models shipped for weight learning
  std::size_t beta_down = 0;
  std::size_t beta_up = 0;
};

class CommLedger {
public:
  CommLedger() = default;
  CommLedger(std::size_t model_payload_bytes, std::size_t beta_payload_bytes)
      : model_bytes_(model_payload_bytes), beta_bytes_(beta_payload_bytes) {}

  RoundComm& round(std::size_t t);
  const std::vector<RoundComm>& rounds() const { return rounds_; }

  std::size_t model_payload_bytes() const { return model_bytes_; }
  std::size_t beta_payload_bytes() const { return beta_bytes_; }

  std::size_t base_model_transfers() const;
  std::size_t extra_model_transfers() const;
  std::size_t beta_transfers() const;
  // Cumulative totals through round t (inclusive).
  std::size_t model_bytes_through(std::size_t t) const;
  std::size_t beta_bytes_through(std::size_t t) const;
  std::size_t total_model_bytes() const;
  std::size_t total_beta_bytes() const;

private:
  std::size_t model_bytes_ = 0;
  std::size_t beta_bytes_ = 0;
  std::vector<RoundComm> rounds_;
};

// (K - 1) / (2 t0)
double extra_comm_ratio(std::size_t clients, std::size_t interval);
// Extra model-sized transfers over FedAvg's broadcast + upload transfers.
double ledger_ratio(const CommLedger& ledger);

struct RoundLog {
  std::size_t round = 0;
  bool local_trained = false;
  bool weights_learned = false;
  bool aggregated = false;
  agg::WeightTable alpha;
  std::vector<double> train_loss;  // local model on its own train split
  std::vector<double> val;         // global model on each client's val split
  double global_val_avg = 0.0;
  std::vector<double> local_val;   // local model k on val split k
  std::size_t cumulative_model_bytes = 0;
  std::size_t cumulative_beta_bytes = 0;
  // Present on rounds that ran a weight-learning session.
  std::optional<agg::WeightTable> beta_in;
  std::optional<agg::WeightTable> beta_out;

  std::string phase_flags() const;
};

struct Checkpoint {
  std::size_t round = 0;
  double val_score = 0.0;
  nn::ParamVector w;
};

struct RunResult {
  std::vector<RoundLog> history;
  nn::ParamVector final_w;
  CommLedger ledger;
  Checkpoint best_global;
  std::vector<Checkpoint> best_local;
  agg::Concentration final_beta;
  std::vector<std::string> events;
};

struct MetricsMatrix {
  // local(i, j): best local model of client i on client j's test split.
  nn::Matrix local;
  std::vector<double> global_row;
  double global_test_avg = 0.0;
  double local_avg = 0.0;
  double local_gen = 0.0;

  // Recomputes the three aggregates from the entries.
  void summarize();
};

// Deterministic mini-batch sampler cycling through shuffled epochs.
class BatchSampler {
public:
  BatchSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

private:
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_;
};

// Training loss plus (mu / 2) * ||w - anchor||^2 and its gradient.
std::pair<double, nn::ParamVector> proximal_loss_and_grad(const nn::ModelSpec& spec,
                                                          const nn::ParamVector& w,
                                                          const nn::ParamVector& anchor,
                                                          double mu, const nn::Batch& b);

struct LocalResult {
  nn::ParamVector w;
  double train_loss = 0.0;
};

// M_k optimizer steps from `w_init` on the shard's train split. `anchor` is
// the FedProx reference (the round's global model).
LocalResult local_train(const nn::ModelSpec& spec, const datagen::ClientShard& shard,
                        const nn::ParamVector& w_init, const nn::ParamVector& anchor,
                        const FLConfig& cfg, std::size_t client, std::size_t round);

struct SessionResult {
  agg::Concentration beta;
  bool aborted = false;
  std::string event;
};

// One aggregation-weight learning session over frozen local models.
// `ledger` may be null.
SessionResult learn_agg_weights(const nn::ModelSpec& spec, std::span<const nn::ParamVector> models,
                                const agg::Concentration& c0,
                                std::span<const datagen::ClientShard> shards, const FLConfig& cfg,
                                std::size_t round, CommLedger* ledger);

RunResult run_federated(const nn::ModelSpec& spec, const FLConfig& cfg,
                        std::span<const datagen::ClientShard> shards);

MetricsMatrix select_and_evaluate(const nn::ModelSpec& spec, const RunResult& run,
                                  std::span<const datagen::ClientShard> shards);

}  // namespace autofed::fed
