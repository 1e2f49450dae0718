#include "autofed/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

#include "autofed/aggregate.hpp"
#include "autofed/datagen.hpp"
#include "autofed/errors.hpp"
#include "autofed/fedsim.hpp"
#include "autofed/nn.hpp"
#include "autofed/rng.hpp"
#include "autofed/runner.hpp"

namespace autofed::checks {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

double norm2(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double rel_err(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return norm2(d) / std::max(norm2(b), 1e-300);
}

nn::Batch random_batch(const nn::ModelSpec& spec, std::size_t n, Rng& rng) {
  nn::Batch b;
  b.inputs = nn::Matrix(n, spec.input_dim());
  for (double& x : b.inputs.data) x = rng.normal();
  if (spec.loss() == nn::LossKind::kCrossEntropy) {
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(rng.below(spec.output_dim()));
  } else {
    b.masks = nn::Matrix(n, spec.output_dim());
    for (double& m : b.masks.data) m = rng.uniform() < 0.5 ? 1.0 : 0.0;
  }
  return b;
}

nn::ParamVector random_params(const nn::ModelSpec& spec, Rng& rng, double scale) {
  nn::ParamVector w(spec.layout());
  for (double& v : w.values()) v = scale * rng.normal();
  return w;
}

double eval_loss(const nn::ModelSpec& spec, const nn::ParamVector& w, const nn::Batch& b) {
  return nn::loss(spec, nn::forward(spec, w, b), b);
}

// Small 3-client federation with a tiny MLP, used by the protocol checks.
struct TinyFederation {
  nn::ModelSpec spec;
  std::vector<datagen::ClientShard> shards;
};

TinyFederation tiny_federation(std::size_t clients, std::size_t features, std::size_t hidden,
                               std::size_t samples, std::uint64_t seed) {
  datagen::DatasetSpec d;
  d.clients = clients;
  d.feature_dim = features;
  d.num_classes = 4;
  d.samples_per_client = samples;
  d.skew = 0.5;
  d.shift_scale = 0.3;
  d.shift_offset = 0.5;
  d.seed = seed;
  return {nn::ModelSpec::mlp(features, {hidden}, 4, nn::Activation::kTanh,
                             nn::LossKind::kCrossEntropy),
          datagen::generate(d)};
}

// Walks a directory into relative path -> file bytes.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).generic_string()] =
        std::string(std::istreambuf_iterator<char>(f), {});
  }
  return out;
}

double summary_mean(const std::vector<cli::SummaryRow>& rows, const std::string& label) {
  for (const auto& r : rows) {
    if (r.strategy == label) return r.global_test_avg_mean;
  }
  throw InvariantError("no summary row for " + label);
}

// Beta(a, b) raw moment E[X^n].
double beta_raw_moment(double a, double b, int n) {
  double m = 1.0;
  for (int r = 0; r < n; ++r) m *= (a + r) / (a + b + r);
  return m;
}

}  // namespace

Result protocol_equivalence() {
  Stopwatch clock;
  Result r;
  r.name = "protocol equivalence";
  auto fedn = tiny_federation(3, 6, 8, 60, 11);
  fed::FLConfig base;
  base.rounds = 20;
  base.local_iters = {5};
  base.agg_steps = 5;
  base.seed = 7;
  auto sized = base;
  sized.strategy = fed::Strategy::kFedAvgSized;
  auto pinned = base;
  pinned.strategy = fed::Strategy::kAutoFedAvg;
  pinned.pin_alpha_sized = true;
  pinned.beta_lr = 0.0;

  const auto a = fed::run_federated(fedn.spec, sized, fedn.shards);
  const auto b = fed::run_federated(fedn.spec, pinned, fedn.shards);

  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.final_w.size(); ++i) {
    max_diff = std::max(max_diff, std::abs(a.final_w[i] - b.final_w[i]));
  }
  bool same_history = a.history.size() == b.history.size();
  for (std::size_t t = 0; same_history && t < a.history.size(); ++t) {
    same_history = a.history[t].val == b.history[t].val && a.history[t].alpha == b.history[t].alpha;
  }
  // Oracle weights n_k / n straight from the shards.
  double n = 0.0;
  for (const auto& s : fedn.shards) n += static_cast<double>(s.n());
  double alpha_err = 0.0;
  for (std::size_t k = 0; k < fedn.shards.size(); ++k) {
    alpha_err = std::max(alpha_err, std::abs(b.history.back().alpha.at(k, 0) -
                                             static_cast<double>(fedn.shards[k].n()) / n));
  }
  r.seconds = clock.seconds();
  r.pass = max_diff == 0.0 && same_history && alpha_err < 1e-15 &&
           r.seconds < kEquivalenceSeconds;
  r.detail = "max |w_a - w_b| = " + fmt(max_diff) + ", per-round logs " +
             (same_history ? "identical" : "differ") + ", |alpha - n_k/n| = " + fmt(alpha_err);
  return r;
}

Result communication_law() {
  Stopwatch clock;
  Result r;
  r.name = "communication law";
  struct Case {
    std::size_t k, t0, rounds;
  };
  const Case cases[] = {{3, 10, 30}, {3, 5, 30}, {5, 5, 30}};
  bool ok = true;
  std::ostringstream detail;
  for (const auto& c : cases) {
    // 16 -> 64 -> 4: 1348 parameters, well above 10 * K * P concentrations.
    auto fedn = tiny_federation(c.k, 16, 64, 30, 5);
    fed::FLConfig cfg;
    cfg.strategy = fed::Strategy::kAutoFedAvg;
    cfg.rounds = c.rounds;
    cfg.interval = c.t0;
    cfg.agg_steps = 10;
    cfg.local_iters = {2};
    cfg.seed = 3;
    const auto run = fed::run_federated(fedn.spec, cfg, fedn.shards);
    const auto& led = run.ledger;

    const std::size_t sessions = c.rounds / c.t0;
    const bool counts = led.extra_model_transfers() == sessions * c.k * (c.k - 1) &&
                        led.base_model_transfers() == 2 * c.k * c.rounds &&
                        led.beta_transfers() == sessions * cfg.agg_steps * 2 * c.k;
    const double expected = static_cast<double>(c.k - 1) / static_cast<double>(2 * c.t0);
    const double ratio = fed::ledger_ratio(led);
    const double share = static_cast<double>(led.total_beta_bytes()) /
                         static_cast<double>(led.total_model_bytes());
    const bool case_ok = counts && ratio == expected && fed::extra_comm_ratio(c.k, c.t0) == expected &&
                         share < kBetaByteShare;
    ok = ok && case_ok;
    detail << "(K=" << c.k << ",t0=" << c.t0 << ",T=" << c.rounds << ") ratio " << fmt(ratio)
           << " beta/model " << fmt(share) << (case_ok ? "" : " [bad]") << "; ";
  }
  // The 3-client, t0 = 10 case is the advertised 10% overhead.
  ok = ok && fed::extra_comm_ratio(3, 10) == 0.1;
  r.seconds = clock.seconds();
  r.pass = ok;
  r.detail = detail.str();
  return r;
}

Result dirichlet_mode() {
  Stopwatch clock;
  Result r;
  r.name = "dirichlet mode";
  const std::vector<double> sym{6.0, 6.0, 6.0};
  const auto m = agg::dirichlet_mode(sym);
  double sym_err = 0.0;
  for (double v : m) sym_err = std::max(sym_err, std::abs(v - 1.0 / 3.0));
  bool ok = sym_err <= kModeTol;

  Rng rng(mix_seed(2024, {1}));
  const auto steps = static_cast<int>(std::lround(1.0 / kModeGridStep));
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> beta(3);
    for (double& b : beta) b = 1.05 + 9.0 * rng.uniform();
    const auto mode = agg::dirichlet_mode(beta);
    double best = -INFINITY;
    std::vector<double> arg(3);
    for (int i = 1; i < steps; ++i) {
      for (int j = 1; i + j < steps; ++j) {
        const std::vector<double> a{i * kModeGridStep, j * kModeGridStep,
                                    1.0 - (i + j) * kModeGridStep};
        const double lp = agg::dirichlet_logpdf(a, beta);
        if (lp > best) {
          best = lp;
          arg = a;
        }
      }
    }
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(arg[k] - mode[k]));
    worst = std::max(worst, d);
    // The true mode must also dominate every grid point.
    ok = ok && agg::dirichlet_logpdf(mode, beta) >= best;
  }
  ok = ok && worst <= kModeGridStep;
  r.seconds = clock.seconds();
  r.pass = ok;
  r.detail = "|mode(6,6,6) - 1/3| = " + fmt(sym_err) + ", max |mode - grid argmax| = " + fmt(worst);
  return r;
}

Result gradient_suites() {
  Stopwatch clock;
  Result r;
  r.name = "gradient suites";
  Rng rng(mix_seed(99, {4}));

  // (a) model gradients against central differences.
  double worst_a = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t in = 2 + rng.below(4);
    const std::size_t out = 2 + rng.below(3);
    std::vector<std::size_t> hidden;
    for (std::size_t h = 0, n = 1 + rng.below(2); h < n; ++h) hidden.push_back(2 + rng.below(5));
    const auto act = rng.below(2) == 0 ? nn::Activation::kTanh : nn::Activation::kSigmoid;
    const auto loss = c % 2 == 0 ? nn::LossKind::kCrossEntropy : nn::LossKind::kSoftDice;
    const auto spec = nn::ModelSpec::mlp(in, hidden, out, act, loss);
    const auto w = random_params(spec, rng, 0.7);
    const auto b = random_batch(spec, 1 + rng.below(6), rng);
    const auto g = nn::grad(spec, w, b);
    std::vector<double> fd(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double h = 1e-6 * (std::abs(w[i]) + 1.0);
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      fd[i] = (eval_loss(spec, wp, b) - eval_loss(spec, wm, b)) / (2 * h);
    }
    worst_a = std::max(worst_a, rel_err(g.values(), fd));
  }

  // (b) softmax Jacobian: backward with unit upstream vectors against
  // central differences of the forward map.
  double worst_b = 0.0;
  for (int c = 0; c < 20; ++c) {
    const std::size_t k = 2 + rng.below(4);
    agg::Concentration beta{agg::Parameterization::kSoftmax, agg::WeightTable(k, 1)};
    for (double& v : beta.values.flat()) v = 2.0 * rng.normal();
    const auto a = agg::softmax_map(beta);
    const double h = 1e-6;
    for (std::size_t j = 0; j < k; ++j) {
      auto bp = beta, bm = beta;
      bp.values.at(j, 0) += h;
      bm.values.at(j, 0) -= h;
      const auto ap = agg::softmax_map(bp), am = agg::softmax_map(bm);
      for (std::size_t i = 0; i < k; ++i) {
        agg::WeightTable up(k, 1);
        up.at(i, 0) = 1.0;
        const double analytic = agg::softmax_backward(up, a).at(j, 0);
        const double numeric = (ap.values.at(i, 0) - am.values.at(i, 0)) / (2 * h);
        const double closed = a.values.at(i, 0) * ((i == j ? 1.0 : 0.0) - a.values.at(j, 0));
        worst_b = std::max({worst_b, std::abs(analytic - numeric), std::abs(analytic - closed)});
      }
    }
  }

  // (c) alpha gradient: directional derivatives along e_i - e_j, which keep
  // every column on the simplex.
  double worst_c = 0.0;
  for (int c = 0; c < 20; ++c) {
    const auto spec = nn::ModelSpec::mlp(3, {4}, 3, nn::Activation::kTanh,
                                         c % 2 ? nn::LossKind::kSoftDice : nn::LossKind::kCrossEntropy);
    const std::size_t k = 3;
    std::vector<nn::ParamVector> models;
    for (std::size_t i = 0; i < k; ++i) models.push_back(random_params(spec, rng, 0.8));
    const auto b = random_batch(spec, 5, rng);
    const auto gran = c % 4 < 2 ? agg::Granularity::kNetwork : agg::Granularity::kLayer;
    const std::size_t cols = gran == agg::Granularity::kNetwork ? 1 : spec.num_param_layers();
    agg::AggWeights a{gran, agg::WeightTable(k, cols)};
    for (std::size_t p = 0; p < cols; ++p) {
      auto col = a.values.column(p);
      for (double& v : col) v = 0.2 + rng.uniform();
      agg::renormalize(col);
    }
    const auto mixed = agg::mix_models(models, a);
    const auto ga = agg::alpha_grad(nn::grad(spec, mixed, b), models, gran);
    std::vector<double> analytic, numeric;
    const double h = 1e-5;
    for (std::size_t p = 0; p < cols; ++p) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
          auto ap = a, am = a;
          ap.values.at(i, p) += h;
          ap.values.at(j, p) -= h;
          am.values.at(i, p) -= h;
          am.values.at(j, p) += h;
          numeric.push_back((eval_loss(spec, agg::mix_models(models, ap), b) -
                             eval_loss(spec, agg::mix_models(models, am), b)) /
                            (2 * h));
          analytic.push_back(ga.at(i, p) - ga.at(j, p));
        }
      }
    }
    worst_c = std::max(worst_c, rel_err(analytic, numeric));
  }

  // (d) implicit reparameterization. Gamma draws come from the inverse CDF
  // of fixed uniforms, so perturbing beta moves every sample smoothly and the
  // finite difference uses common random numbers.
  double worst_d = 0.0;
  struct DCase {
    std::vector<double> beta, c;
  };
  const DCase dcases[] = {{{6, 6, 6}, {1, 2, 3}}, {{2, 1, 1}, {3, 1, 2}}, {{0.7, 1.5, 3}, {2, -1, 1}}};
  for (const auto& dc : dcases) {
    const std::size_t k = dc.beta.size();
    std::vector<std::vector<double>> u(kReparamSamples, std::vector<double>(k));
    for (auto& row : u) {
      for (double& x : row) x = rng.uniform_open();
    }
    auto draw = [&](const std::vector<double>& beta, std::size_t s) {
      std::vector<double> z(k);
      for (std::size_t j = 0; j < k; ++j) z[j] = boost::math::gamma_p_inv(beta[j], u[s][j]);
      return z;
    };
    auto objective = [&](const std::vector<double>& z) {
      const double sum = std::accumulate(z.begin(), z.end(), 0.0);
      double l = 0.0;
      for (std::size_t j = 0; j < k; ++j) l += dc.c[j] * (z[j] / sum) * (z[j] / sum);
      return l;
    };
    std::vector<double> implicit(k, 0.0), fd(k, 0.0);
    for (std::size_t s = 0; s < kReparamSamples; ++s) {
      const auto z = draw(dc.beta, s);
      const double sum = std::accumulate(z.begin(), z.end(), 0.0);
      std::vector<double> dl(k);
      for (std::size_t j = 0; j < k; ++j) dl[j] = 2.0 * dc.c[j] * z[j] / sum;
      const auto g = agg::dirichlet_backward(dl, agg::dirichlet_sample_grad(dc.beta, z));
      for (std::size_t j = 0; j < k; ++j) implicit[j] += g[j] / kReparamSamples;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double h = 1e-4 * dc.beta[j];
      auto bp = dc.beta, bm = dc.beta;
      bp[j] += h;
      bm[j] -= h;
      double lp = 0.0, lm = 0.0;
      for (std::size_t s = 0; s < kReparamSamples; ++s) {
        lp += objective(draw(bp, s));
        lm += objective(draw(bm, s));
      }
      fd[j] = (lp - lm) / (2 * h * kReparamSamples);
    }
    worst_d = std::max(worst_d, rel_err(implicit, fd));
  }

  r.seconds = clock.seconds();
  r.pass = worst_a < kModelGradRelTol && worst_b < kSoftmaxJacAbsTol && worst_c < kAlphaGradRelTol &&
           worst_d < kReparamRelTol && r.seconds < kGradientSeconds;
  r.detail = "(a) " + fmt(worst_a) + " (b) " + fmt(worst_b) + " (c) " + fmt(worst_c) + " (d) " +
             fmt(worst_d);
  return r;
}

Result distribution_statistics() {
  Stopwatch clock;
  Result r;
  r.name = "distribution statistics";
  bool ok = true;
  double worst_z = 0.0;
  const std::vector<std::vector<double>> betas{{6, 6, 6}, {2, 1, 1}};
  for (std::size_t bi = 0; bi < betas.size(); ++bi) {
    const auto& beta = betas[bi];
    const std::size_t k = beta.size();
    const double b0 = std::accumulate(beta.begin(), beta.end(), 0.0);
    Rng rng(mix_seed(31, {bi}));
    std::vector<std::vector<double>> draws;
    for (std::size_t n = 0; n < kDirichletDraws; ++n) draws.push_back(agg::dirichlet_sample(beta, rng).alpha);
    const double nd = static_cast<double>(kDirichletDraws);
    for (std::size_t j = 0; j < k; ++j) {
      // Marginal is Beta(beta_j, b0 - beta_j).
      const double a = beta[j], b = b0 - beta[j];
      const double mean = a / b0;
      const double var = a * b / (b0 * b0 * (b0 + 1.0));
      const double m2 = beta_raw_moment(a, b, 2), m3 = beta_raw_moment(a, b, 3),
                   m4 = beta_raw_moment(a, b, 4);
      const double mu4 = m4 - 4 * mean * m3 + 6 * mean * mean * m2 - 3 * std::pow(mean, 4);
      double s1 = 0.0;
      for (const auto& d : draws) s1 += d[j];
      const double smean = s1 / nd;
      double s2 = 0.0;
      for (const auto& d : draws) s2 += (d[j] - smean) * (d[j] - smean);
      const double svar = s2 / (nd - 1.0);
      const double z_mean = std::abs(smean - mean) / std::sqrt(var / nd);
      const double z_var = std::abs(svar - var) / std::sqrt((mu4 - var * var) / nd);
      worst_z = std::max({worst_z, z_mean, z_var});
      ok = ok && z_mean <= kSigmaBand && z_var <= kSigmaBand;
    }
  }
  r.seconds = clock.seconds();
  r.pass = ok;
  r.detail = "worst deviation " + fmt(worst_z) + " sigma";
  return r;
}

cli::RunDescriptor skewed_three_client_descriptor() {
  cli::RunDescriptor d;
  d.dataset.task = datagen::Task::kClassification;
  d.dataset.num_classes = 4;
  d.dataset.feature_dim = 8;
  d.dataset.clients = 3;
  d.dataset.client_sizes = {671, 88, 186};
  d.dataset.skew = 0.5;
  d.dataset.shift_scale = 0.4;
  d.dataset.shift_offset = 1.0;
  d.dataset.class_sep = 1.5;
  d.dataset.noise = 1.0;
  d.model.hidden = {16};
  d.federated.rounds = 20;
  d.federated.interval = 1;
  d.federated.agg_steps = 20;
  d.federated.local_iters = {10};
  d.federated.batch_size = 16;
  d.federated.local_opt = {nn::OptKind::kAdam, 1e-2, 0.5, 0.99, 1e-8};
  d.federated.beta_opt = nn::OptKind::kAdam;
  d.federated.beta_lr = 0.1;
  d.federated.beta_init = {6.0};
  cli::StrategyEntry sized;
  sized.strategy = fed::Strategy::kFedAvgSized;
  sized.label = cli::default_label(sized);
  cli::StrategyEntry autofed;
  autofed.strategy = fed::Strategy::kAutoFedAvg;
  autofed.label = cli::default_label(autofed);
  cli::StrategyEntry local;
  local.strategy = fed::Strategy::kLocalOnly;
  local.label = cli::default_label(local);
  d.strategies = {sized, autofed, local};
  d.seeds = {1, 2, 3, 4, 5};
  return d;
}

Result end_to_end_direction(const fs::path& scratch) {
  Stopwatch clock;
  Result r;
  r.name = "end-to-end direction";
  auto d = skewed_three_client_descriptor();
  const auto out = scratch / "e2e";
  fs::remove_all(out);
  const auto rows = cli::execute(d, out, {});
  const double sized = summary_mean(rows, "fedavg_sized");
  const double autofed = summary_mean(rows, "autofedavg-N-dirichlet");
  // Local-only structure from the per-seed matrices on disk.
  double diag = 0.0, off = 0.0;
  for (auto seed : d.seeds) {
    const auto m = cli::read_metrics_csv(out / "local_only" / std::to_string(seed) / "metrics.csv");
    diag += m.local_avg / static_cast<double>(d.seeds.size());
    off += m.local_gen / static_cast<double>(d.seeds.size());
  }
  r.seconds = clock.seconds();
  r.pass = autofed >= sized && diag > off && r.seconds < kEndToEndSeconds;
  r.detail = "global_test_avg autofedavg " + fmt(autofed) + " vs fedavg_sized " + fmt(sized) +
             "; local-only diagonal " + fmt(diag) + " vs off-diagonal " + fmt(off);
  return r;
}

Result interval_degradation(const fs::path& scratch) {
  Stopwatch clock;
  Result r;
  r.name = "interval degradation";
  auto d = skewed_three_client_descriptor();
  d.strategies.erase(d.strategies.begin() + 2);
  d.strategies.erase(d.strategies.begin());
  d.output = scratch / "t0";
  fs::remove_all(d.output);
  std::map<std::size_t, double> means;
  for (std::size_t t0 : {1, 5, 20}) {
    const auto variant = cli::with_sweep_value(d, "t0", static_cast<double>(t0));
    const auto rows = cli::execute(variant, d.output / ("t0_" + std::to_string(t0)), {});
    means[t0] = rows.front().global_test_avg_mean;
  }
  r.seconds = clock.seconds();
  r.pass = means[1] >= means[20];
  r.detail = "mean global_test_avg t0=1 " + fmt(means[1]) + ", t0=5 " + fmt(means[5]) + ", t0=20 " +
             fmt(means[20]);
  return r;
}

Result determinism(const fs::path& scratch) {
  Stopwatch clock;
  Result r;
  r.name = "determinism";
  auto d = skewed_three_client_descriptor();
  d.federated.rounds = 6;
  d.federated.interval = 2;
  d.seeds = {1, 2};
  d.federated.threads = 3;
  const auto a = scratch / "det_a", b = scratch / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  cli::execute(d, a, {});
  cli::RunOptions parallel;
  parallel.jobs = 3;
  cli::execute(d, b, parallel);
  const auto sa = snapshot(a), sb = snapshot(b);
  r.seconds = clock.seconds();
  r.pass = !sa.empty() && sa == sb;
  r.detail = std::to_string(sa.size()) + " files, trees " + (sa == sb ? "identical" : "differ");
  return r;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"protocol equivalence", false, [](const fs::path&) { return protocol_equivalence(); }},
      {"communication law", false, [](const fs::path&) { return communication_law(); }},
      {"dirichlet mode", false, [](const fs::path&) { return dirichlet_mode(); }},
      {"gradient suites", false, [](const fs::path&) { return gradient_suites(); }},
      {"distribution statistics", false, [](const fs::path&) { return distribution_statistics(); }},
      {"end-to-end direction", true, [](const fs::path& p) { return end_to_end_direction(p); }},
      {"interval degradation", true, [](const fs::path& p) { return interval_degradation(p); }},
      {"determinism", false, [](const fs::path& p) { return determinism(p); }},
  };
  return entries;
}

int run_all(bool full, const fs::path& scratch, std::ostream& out) {
  int failures = 0;
  fs::create_directories(scratch);
  for (const auto& e : registry()) {
    if (e.slow && !full) {
      out << "SKIP " << e.name << " (needs --full)\n";
      continue;
    }
    Result res;
    try {
      res = e.run(scratch);
    } catch (const std::exception& ex) {
      res = {e.name, false, std::string("threw: ") + ex.what()};
    }
    if (!res.pass) ++failures;
    out << (res.pass ? "PASS " : "FAIL ") << res.name << " [" << fmt(res.seconds) << " s] "
        << res.detail << '\n';
    out.flush();
  }
  return failures;
}

}  // namespace autofed::checks
