#include <cmath>
#include <numeric>

#include <doctest.h>

#include "autofed/errors.hpp"
#include "autofed/fedsim.hpp"

using namespace autofed;
using namespace autofed::fed;

namespace {

struct Setup {
  nn::ModelSpec spec;
  std::vector<datagen::ClientShard> shards;
};

Setup make_setup(std::vector<std::size_t> sizes = {80, 40, 60}, std::uint64_t seed = 1) {
  datagen::DatasetSpec d;
  d.clients = sizes.size();
  d.client_sizes = sizes;
  d.skew = 0.7;
  d.shift_scale = 0.3;
  d.shift_offset = 0.5;
  d.seed = seed;
  return {nn::ModelSpec::mlp(d.feature_dim, {6}, d.num_classes, nn::Activation::kTanh,
                             nn::LossKind::kCrossEntropy),
          datagen::generate(d)};
}

FLConfig quick(Strategy s) {
  FLConfig c;
  c.strategy = s;
  c.rounds = 6;
  c.local_iters = {4};
  c.agg_steps = 4;
  c.seed = 9;
  return c;
}

std::vector<nn::ParamVector> trained_locals(const Setup& st, const FLConfig& cfg) {
  Rng rng(2);
  const auto w0 = nn::init_params(st.spec, rng);
  std::vector<nn::ParamVector> out;
  for (std::size_t k = 0; k < st.shards.size(); ++k) {
    out.push_back(local_train(st.spec, st.shards[k], w0, w0, cfg, k, 1).w);
  }
  return out;
}

}  // namespace

TEST_CASE("communication ratio formula") {
  CHECK(extra_comm_ratio(3, 10) == 0.1);
  CHECK(extra_comm_ratio(3, 5) == 0.2);
  CHECK(extra_comm_ratio(3, 1000000) < 1e-5);
  CommLedger empty(100, 8);
  CHECK(ledger_ratio(empty) == 0.0);
}

TEST_CASE("fixed-weight strategies aggregate with fixed alpha") {
  const auto st = make_setup({671, 88, 186});
  auto run = run_federated(st.spec, quick(Strategy::kFedAvgSized), st.shards);
  double n = 0;
  for (const auto& s : st.shards) n += static_cast<double>(s.n());
  for (const auto& r : run.history) {
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(r.alpha.at(k, 0) - static_cast<double>(st.shards[k].n()) / n) < 1e-15);
    }
    CHECK(r.phase_flags() == "LA");
  }
  run = run_federated(st.spec, quick(Strategy::kFedAvgEven), st.shards);
  for (const auto& r : run.history) {
    for (std::size_t k = 0; k < 3; ++k) CHECK(r.alpha.at(k, 0) == 1.0 / 3);
  }
}

TEST_CASE("autofedavg without learning equals fedavg_even bit for bit") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.beta_lr = 0.0;
  const auto a = run_federated(st.spec, cfg, st.shards);
  cfg.parameterization = agg::Parameterization::kSoftmax;
  cfg.beta_init = {0.0};
  const auto s = run_federated(st.spec, cfg, st.shards);
  const auto e = run_federated(st.spec, quick(Strategy::kFedAvgEven), st.shards);
  CHECK(a.final_w == e.final_w);
  CHECK(s.final_w == e.final_w);
  for (std::size_t t = 0; t < a.history.size(); ++t) CHECK(a.history[t].val == e.history[t].val);
}

TEST_CASE("pinned autofedavg reproduces fedavg_sized") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.pin_alpha_sized = true;
  cfg.rounds = 20;
  auto base = quick(Strategy::kFedAvgSized);
  base.rounds = 20;
  CHECK(run_federated(st.spec, cfg, st.shards).final_w == run_federated(st.spec, base, st.shards).final_w);
}

TEST_CASE("ledger counts transfers per the protocol") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.interval = 3;
  const auto run = run_federated(st.spec, cfg, st.shards);
  const auto& led = run.ledger;
  CHECK(led.base_model_transfers() == 2 * 3 * 6);
  CHECK(led.extra_model_transfers() == 2 * 3 * 2);
  CHECK(led.beta_transfers() == 2 * cfg.agg_steps * 2 * 3);
  CHECK(ledger_ratio(led) == extra_comm_ratio(3, 3));
  std::size_t prev = 0;
  for (const auto& r : run.history) {
    CHECK(r.cumulative_model_bytes >= prev);
    prev = r.cumulative_model_bytes;
    CHECK(r.phase_flags() == (r.round % 3 == 0 ? "LWA" : "LA"));
  }
  CHECK(led.total_model_bytes() == (36 + 12) * nn::serialized_size(st.spec.layout()));
}

TEST_CASE("local_train") {
  const auto st = make_setup();
  Rng rng(3);
  const auto w0 = nn::init_params(st.spec, rng);
  auto cfg = quick(Strategy::kFedAvgSized);
  cfg.local_iters = {0};
  CHECK(local_train(st.spec, st.shards[0], w0, w0, cfg, 0, 1).w == w0);

  cfg.local_iters = {30};
  const auto plain = local_train(st.spec, st.shards[0], w0, w0, cfg, 0, 1).w;
  CHECK(local_train(st.spec, st.shards[0], w0, w0, cfg, 0, 1).w == plain);
  CHECK_FALSE(local_train(st.spec, st.shards[0], w0, w0, cfg, 0, 2).w == plain);

  auto prox = cfg;
  prox.strategy = Strategy::kFedProx;
  prox.local_opt = {nn::OptKind::kSgd, 0.1};
  auto sgd = prox;
  sgd.mu = 0.0;
  prox.mu = 0.001;
  auto dist = [&](const nn::ParamVector& w) {
    double s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - w0[i]) * (w[i] - w0[i]);
    return std::sqrt(s);
  };
  const double d0 = dist(local_train(st.spec, st.shards[0], w0, w0, sgd, 0, 1).w);
  const double d1 = dist(local_train(st.spec, st.shards[0], w0, w0, prox, 0, 1).w);
  CHECK(d1 < d0);
}

TEST_CASE("proximal gradient matches finite differences") {
  const auto st = make_setup();
  Rng rng(4);
  const auto w = nn::init_params(st.spec, rng);
  auto anchor = w;
  for (double& v : anchor.values()) v += 0.3 * rng.normal();
  const auto& b = st.shards[0].train;
  const double mu = 0.5;
  const auto [value, g] = proximal_loss_and_grad(st.spec, w, anchor, mu, b);
  const auto [plain, gp] = nn::loss_and_grad(st.spec, w, b);
  for (std::size_t i = 0; i < w.size(); i += 7) {
    // The proximal part is quadratic, so its central difference is exact up
    // to rounding.
    const double h = 1e-4;
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    auto prox = [&](const nn::ParamVector& x) {
      double s = 0;
      for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - anchor[j]) * (x[j] - anchor[j]);
      return 0.5 * mu * s;
    };
    const double fd = (prox(wp) - prox(wm)) / (2 * h);
    const double term = g[i] - gp[i];
    CHECK(std::abs(term - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
  CHECK(value > plain);
}

TEST_CASE("weight learning session") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.agg_steps = 10;
  const auto models = trained_locals(st, cfg);
  const auto before = models;
  auto c0 = agg::Concentration::constant(agg::Parameterization::kDirichlet, 3, 1, 6.0);

  SUBCASE("zero learning rate returns c0") {
    cfg.beta_lr = 0.0;
    const auto r = learn_agg_weights(st.spec, models, c0, st.shards, cfg, 1, nullptr);
    CHECK(r.beta.values == c0.values);
    CHECK_FALSE(r.aborted);
  }
  SUBCASE("models are frozen and the ledger records the session") {
    CommLedger led(100, 24);
    cfg.beta_lr = 0.5;
    const auto r = learn_agg_weights(st.spec, models, c0, st.shards, cfg, 1, &led);
    CHECK(models == before);
    CHECK(led.extra_model_transfers() == 6);
    CHECK(led.beta_transfers() == 2 * 3 * 10);
    CHECK_FALSE(r.beta.values == c0.values);
    for (double v : r.beta.values.flat()) CHECK(v >= 1.0 + agg::kConcentrationMargin);
  }
  SUBCASE("serial and threaded sessions agree") {
    cfg.beta_lr = 0.5;
    auto threaded = cfg;
    threaded.threads = 3;
    const auto a = learn_agg_weights(st.spec, models, c0, st.shards, cfg, 2, nullptr);
    const auto b = learn_agg_weights(st.spec, models, c0, st.shards, threaded, 2, nullptr);
    CHECK(a.beta.values == b.beta.values);
  }
  SUBCASE("identical clients are a fixed point of averaging") {
    std::vector<datagen::ClientShard> same(3, st.shards[0]);
    std::vector<nn::ParamVector> one_model(3, models[0]);
    auto soft = cfg;
    soft.parameterization = agg::Parameterization::kSoftmax;
    auto s0 = agg::Concentration::constant(agg::Parameterization::kSoftmax, 3, 1, 0.0);
    soft.beta_lr = 1.0;
    const auto r = learn_agg_weights(st.spec, one_model, s0, same, soft, 1, nullptr);
    // Same data and models: each client's step is the same, and identical
    // models mean a zero gradient on the simplex tangent.
    for (double v : r.beta.values.flat()) CHECK(std::abs(v) < 1e-12);
  }
  SUBCASE("a single client is degenerate") {
    std::vector<nn::ParamVector> solo{models[0]};
    std::vector<datagen::ClientShard> shard{st.shards[0]};
    auto c1 = agg::Concentration::constant(agg::Parameterization::kDirichlet, 1, 1, 6.0);
    cfg.beta_lr = 0.5;
    const auto r = learn_agg_weights(st.spec, solo, c1, shard, cfg, 1, nullptr);
    CHECK(agg::gamma_map(r.beta).values.at(0, 0) == 1.0);
    agg::AggWeights one{agg::Granularity::kNetwork, agg::WeightTable(1, 1, 1.0)};
    CHECK(agg::mix_models(solo, one) == models[0]);
  }
}

TEST_CASE("non-finite updates abort the session and keep beta") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.parameterization = agg::Parameterization::kSoftmax;
  cfg.beta_lr = 1e308;
  auto models = trained_locals(st, cfg);
  for (double& v : models[1].values()) v *= 1e3;
  auto c0 = agg::Concentration::constant(agg::Parameterization::kSoftmax, 3, 1, 0.0);
  const auto r = learn_agg_weights(st.spec, models, c0, st.shards, cfg, 4, nullptr);
  CHECK(r.aborted);
  CHECK(r.beta.values == c0.values);
  CHECK(r.event.find("round 4") != std::string::npos);
}

TEST_CASE("carry-over and re-initialization between sessions") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.interval = 2;
  cfg.beta_lr = 0.5;
  const auto run = run_federated(st.spec, cfg, st.shards);
  std::optional<agg::WeightTable> last;
  for (const auto& r : run.history) {
    if (!r.weights_learned) continue;
    if (last) CHECK(*r.beta_in == *last);
    last = r.beta_out;
  }
  cfg.reinit_each_session = true;
  const auto re = run_federated(st.spec, cfg, st.shards);
  for (const auto& r : re.history) {
    if (r.weights_learned) {
      for (double v : r.beta_in->flat()) CHECK(v == 6.0);
    }
  }
}

TEST_CASE("layer-wise runs keep every alpha column on the simplex") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.granularity = agg::Granularity::kLayer;
  cfg.beta_lr = 0.5;
  const auto run = run_federated(st.spec, cfg, st.shards);
  for (const auto& r : run.history) {
    REQUIRE(r.alpha.columns() == st.spec.num_param_layers());
    for (std::size_t p = 0; p < r.alpha.columns(); ++p) {
      double s = 0;
      for (double v : r.alpha.column(p)) {
        CHECK(v > 0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("threads do not change results") {
  const auto st = make_setup();
  auto cfg = quick(Strategy::kAutoFedAvg);
  cfg.beta_lr = 0.5;
  auto threaded = cfg;
  threaded.threads = 3;
  const auto a = run_federated(st.spec, cfg, st.shards);
  const auto b = run_federated(st.spec, threaded, st.shards);
  CHECK(a.final_w == b.final_w);
  CHECK(a.final_beta.values == b.final_beta.values);
}

TEST_CASE("model selection and metrics") {
  MetricsMatrix m;
  m.local = nn::Matrix(3, 3);
  m.local.data = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  m.global_row = {3, 4, 5};
  m.summarize();
  CHECK(m.local_avg == 5.0);
  CHECK(m.local_gen == 5.0);
  CHECK(m.global_test_avg == 4.0);

  MetricsMatrix c;
  c.local = nn::Matrix(3, 3, 0.7);
  c.global_row = {0.7, 0.7, 0.7};
  c.summarize();
  CHECK(c.local_avg == doctest::Approx(0.7));
  CHECK(c.local_gen == doctest::Approx(0.7));
  CHECK(c.global_test_avg == doctest::Approx(0.7));

  const auto st = make_setup();
  const auto run = run_federated(st.spec, quick(Strategy::kLocalOnly), st.shards);
  for (std::size_t k = 0; k < 3; ++k) {
    double best = -1;
    for (const auto& r : run.history) best = std::max(best, r.local_val[k]);
    CHECK(run.best_local[k].val_score == best);
  }
  CHECK(run.ledger.base_model_transfers() == 0);
  const auto metrics = select_and_evaluate(st.spec, run, st.shards);
  CHECK(metrics.local(1, 1) == nn::score(st.spec, run.best_local[1].w, st.shards[1].test));
  RunResult empty;
  CHECK_THROWS_AS(select_and_evaluate(st.spec, empty, st.shards), ConfigError);
}

TEST_CASE("config validation") {
  FLConfig c;
  c.interval = 30;
  c.rounds = 20;
  CHECK_THROWS_WITH_AS(c.validate(3), doctest::Contains("t0"), ConfigError);
  c = {};
  c.mu = -1;
  CHECK_THROWS_AS(c.validate(3), ConfigError);
  c = {};
  c.strategy = Strategy::kAutoFedAvg;
  c.beta_init = {1.0};
  CHECK_THROWS_AS(c.validate(3), ConfigError);
}
