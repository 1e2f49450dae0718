#include "autofed/runner.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "autofed/csv.hpp"
#include "autofed/errors.hpp"

namespace autofed::cli {

namespace fs = std::filesystem;

namespace {

std::string alpha_column(std::size_t k, std::size_t p) {
  return "alpha_" + std::to_string(k + 1) + "_" + std::to_string(p + 1);
}

void write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("cannot write " + path.string());
}

nlohmann::json alpha_json(const fed::RunResult& run, std::size_t round) {
  const auto& a = run.history.at(round - 1).alpha;
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t p = 0; p < a.columns(); ++p) {
    auto c = a.column(p);
    cols.push_back(std::vector<double>(c.begin(), c.end()));
  }
  return cols;
}

void write_checkpoints(const fs::path& dir, const std::string& label, const fed::RunResult& run,
                       const std::vector<datagen::ClientShard>& shards) {
  nlohmann::json manifest;
  manifest["strategy"] = label;
  manifest["rounds"] = run.history.size();
  // Aggregation uses train-split sizes; totals are kept for reference.
  std::vector<std::size_t> train_sizes, total_sizes;
  for (const auto& s : shards) {
    train_sizes.push_back(s.n());
    total_sizes.push_back(s.train.size() + s.val.size() + s.test.size());
  }
  manifest["client_train_sizes"] = train_sizes;
  manifest["client_total_sizes"] = total_sizes;
  write_file(dir / "final.afpv", nn::serialize(run.final_w));
  write_file(dir / "global.afpv", nn::serialize(run.best_global.w));
  manifest["global"] = {{"file", "global.afpv"},
                        {"round", run.best_global.round},
                        {"val_score", run.best_global.val_score},
                        {"alpha", alpha_json(run, run.best_global.round)}};
  nlohmann::json locals = nlohmann::json::array();
  for (std::size_t k = 0; k < run.best_local.size(); ++k) {
    const auto name = "local_" + std::to_string(k + 1) + ".afpv";
    write_file(dir / name, nn::serialize(run.best_local[k].w));
    locals.push_back({{"file", name},
                      {"round", run.best_local[k].round},
                      {"val_score", run.best_local[k].val_score}});
  }
  manifest["local"] = locals;
  manifest["events"] = run.events;
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

void log_line(const RunOptions& opts, const std::string& s) {
  if (!opts.log) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  *opts.log << s << '\n';
}

std::vector<std::string> summary_header() {
  return {"strategy",       "runs",          "global_test_avg_mean", "global_test_avg_std",
          "local_avg_mean", "local_avg_std", "local_gen_mean",       "local_gen_std"};
}

void summary_cells(csv::Writer& w, const SummaryRow& r) {
  w.cell(r.strategy).cell(r.runs);
  w.cell(r.global_test_avg_mean).cell(r.global_test_avg_std);
  w.cell(r.local_avg_mean).cell(r.local_avg_std);
  w.cell(r.local_gen_mean).cell(r.local_gen_std);
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<LabeledMetrics>& runs) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const fed::MetricsMatrix*>> groups;
  for (const auto& r : runs) {
    if (!groups.count(r.strategy)) order.push_back(r.strategy);
    groups[r.strategy].push_back(&r.metrics);
  }
  std::vector<SummaryRow> out;
  for (const auto& name : order) {
    std::vector<double> g, la, lg;
    for (const auto* m : groups[name]) {
      g.push_back(m->global_test_avg);
      la.push_back(m->local_avg);
      lg.push_back(m->local_gen);
    }
    SummaryRow row;
    row.strategy = name;
    row.runs = g.size();
    row.global_test_avg_mean = mean_of(g);
    row.global_test_avg_std = sample_std(g, row.global_test_avg_mean);
    row.local_avg_mean = mean_of(la);
    row.local_avg_std = sample_std(la, row.local_avg_mean);
    row.local_gen_mean = mean_of(lg);
    row.local_gen_std = sample_std(lg, row.local_gen_mean);
    out.push_back(row);
  }
  return out;
}

void write_rounds_csv(const fs::path& path, const std::vector<fed::RoundLog>& history) {
  if (history.empty()) throw IoError("no rounds to write");
  const std::size_t k_count = history.front().alpha.clients();
  const std::size_t cols = history.front().alpha.columns();
  std::vector<std::string> header = {"round", "phase_flags"};
  for (std::size_t p = 0; p < cols; ++p) {
    for (std::size_t k = 0; k < k_count; ++k) header.push_back(alpha_column(k, p));
  }
  for (std::size_t k = 0; k < k_count; ++k) header.push_back("train_loss_" + std::to_string(k + 1));
  for (std::size_t k = 0; k < k_count; ++k) header.push_back("val_" + std::to_string(k + 1));
  header.insert(header.end(), {"global_val_avg", "cumulative_model_bytes", "cumulative_beta_bytes"});
  csv::Writer w(header);
  for (const auto& r : history) {
    w.cell(r.round).cell(r.phase_flags());
    for (double a : r.alpha.flat()) w.cell(a);
    for (double v : r.train_loss) w.cell(v);
    for (double v : r.val) w.cell(v);
    w.cell(r.global_val_avg).cell(r.cumulative_model_bytes).cell(r.cumulative_beta_bytes);
    w.end_row();
  }
  w.save(path);
}

void write_metrics_csv(const fs::path& path, const fed::MetricsMatrix& m) {
  const std::size_t k_count = m.global_row.size();
  std::vector<std::string> header = {"model"};
  for (std::size_t j = 0; j < k_count; ++j) header.push_back("client_" + std::to_string(j + 1));
  csv::Writer w(header);
  w.cell(std::string_view("global"));
  for (double v : m.global_row) w.cell(v);
  w.end_row();
  for (std::size_t i = 0; i < k_count; ++i) {
    w.cell("local_" + std::to_string(i + 1));
    for (std::size_t j = 0; j < k_count; ++j) w.cell(m.local(i, j));
    w.end_row();
  }
  w.save(path);
}

fed::MetricsMatrix read_metrics_csv(const fs::path& path) {
  const auto t = csv::load(path);
  if (t.header.size() < 2 || t.rows.size() != t.header.size()) {
    throw IoError(path.string() + ": expected a global row and K local rows");
  }
  const std::size_t k_count = t.header.size() - 1;
  fed::MetricsMatrix m;
  m.local = nn::Matrix(k_count, k_count);
  for (const auto& row : t.rows) {
    std::vector<double> vals;
    for (std::size_t j = 1; j < row.size(); ++j) vals.push_back(csv::to_double(row[j]));
    if (row[0] == "global") {
      m.global_row = vals;
    } else if (row[0].rfind("local_", 0) == 0) {
      const auto i = std::stoul(row[0].substr(6)) - 1;
      if (i >= k_count) throw IoError(path.string() + ": local row index out of range");
      for (std::size_t j = 0; j < k_count; ++j) m.local(i, j) = vals[j];
    } else {
      throw IoError(path.string() + ": unexpected row '" + row[0] + "'");
    }
  }
  m.summarize();
  return m;
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  csv::Writer w(summary_header());
  for (const auto& r : rows) {
    summary_cells(w, r);
    w.end_row();
  }
  w.save(path);
}

void emit_trajectories(const fs::path& run_dir) {
  const auto rounds_path = run_dir / "rounds.csv";
  if (!fs::exists(rounds_path)) {
    throw IoError("missing run artifact " + rounds_path.string());
  }
  const auto t = csv::load(rounds_path);
  const auto round_col = t.column("round");
  std::vector<std::size_t> series;
  for (std::size_t c = 0; c < t.header.size(); ++c) {
    const auto& h = t.header[c];
    if (h.rfind("alpha_", 0) == 0 || h.rfind("val_", 0) == 0 || h.rfind("train_loss_", 0) == 0 ||
        h == "global_val_avg") {
      series.push_back(c);
    }
  }
  csv::Writer w({"round", "series", "value"});
  for (const auto& row : t.rows) {
    for (auto c : series) {
      w.cell(row[round_col]).cell(t.header[c]).cell(row[c]);
      w.end_row();
    }
  }
  w.save(run_dir / "trajectories.csv");
}

std::vector<SummaryRow> execute(const RunDescriptor& d, const fs::path& outdir,
                                const RunOptions& opts) {
  d.validate();
  struct Job {
    const StrategyEntry* strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : d.strategies) {
    for (auto seed : d.seeds) jobs.push_back({&s, seed});
  }

  // Datasets depend only on the seed; build each once.
  std::map<std::uint64_t, std::vector<datagen::ClientShard>> data;
  for (auto seed : d.seeds) data.emplace(seed, datagen::generate(d.dataset_for(seed)));
  const auto spec = d.model.build(d.dataset);

  std::vector<LabeledMetrics> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  auto run_job = [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto& label = job.strategy->label;
    try {
      const auto& shards = data.at(job.seed);
      const auto cfg = d.config_for(*job.strategy, job.seed);
      auto result = fed::run_federated(spec, cfg, shards);
      auto metrics = fed::select_and_evaluate(spec, result, shards);
      const auto dir = outdir / label / std::to_string(job.seed);
      write_rounds_csv(dir / "rounds.csv", result.history);
      write_metrics_csv(dir / "metrics.csv", metrics);
      emit_trajectories(dir);
      write_checkpoints(dir / "checkpoints", label, result, shards);
      for (const auto& e : result.events) log_line(opts, label + " seed " + std::to_string(job.seed) + ": " + e);
      log_line(opts, label + " seed " + std::to_string(job.seed) + ": global_test_avg " +
                         csv::format_double(metrics.global_test_avg));
      results[i] = {label, job.seed, std::move(metrics)};
    } catch (const std::exception& e) {
      // Re-raise with run context, preserving the error category.
      const std::string ctx = label + " seed " + std::to_string(job.seed) + ": ";
      try {
        throw;
      } catch (const ConfigError&) {
        errors[i] = std::make_exception_ptr(ConfigError(ctx + e.what()));
      } catch (const NumericalError&) {
        errors[i] = std::make_exception_ptr(NumericalError(ctx + e.what()));
      } catch (const IoError&) {
        errors[i] = std::make_exception_ptr(IoError(ctx + e.what()));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.jobs, jobs.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < jobs.size(); i += workers) run_job(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  auto rows = summarize(results);
  write_summary_csv(outdir / "summary.csv", rows);
  return rows;
}

void execute_sweep(const RunDescriptor& d, const std::string& key, const std::vector<double>& values,
                   const RunOptions& opts) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<std::string> header = {"key", "value"};
  const auto base = summary_header();
  header.insert(header.end(), base.begin(), base.end());
  csv::Writer w(header);
  for (double v : values) {
    const auto variant = with_sweep_value(d, key, v);
    const auto dir = d.output / (key + "_" + csv::format_double(v));
    log_line(opts, "sweep " + key + " = " + csv::format_double(v));
    for (const auto& row : execute(variant, dir, opts)) {
      w.cell(key).cell(v);
      summary_cells(w, row);
      w.end_row();
    }
  }
  w.save(d.output / "sweep.csv");
}

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O failure: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O failure: " << e.what() << '\n';
    return kExitIo;
  } catch (const DomainError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(const RunDescriptor& d, const RunOptions& opts) {
  try {
    if (d.sweep) {
      execute_sweep(d, d.sweep->key, d.sweep->values, opts);
    } else {
      execute(d, d.output, opts);
    }
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(std::cerr);
  }
}

int run_sweep(const RunDescriptor& d, const std::string& key, const std::vector<double>& values,
              const RunOptions& opts) {
  try {
    execute_sweep(d, key, values, opts);
    return kExitOk;
  } catch (...) {
    return exit_code_for_current_exception(std::cerr);
  }
}

}  // namespace autofed::cli
