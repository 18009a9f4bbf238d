#include "cl3an/experiments.hpp"

#include "cl3an/errors.hpp"
#include "cl3an/io.hpp"
#include "cl3an/synthetic.hpp"

#include "json.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

namespace cl3an {

using nlohmann::json;

namespace {

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

json aggregate_json(const Aggregate& a) { return {{"mean", a.mean}, {"std", a.std}}; }

json stability_json(const SeedResult& s) {
  if (!s.stability) return {{"error", s.stability_error}};
  json phases = json::array();
  for (const PhaseStability& p : s.stability->phases) {
    json fit = nullptr;
    if (p.fit) fit = {{"slope", p.fit->slope}, {"intercept", p.fit->intercept}, {"r_squared", p.fit->r_squared}};
    phases.push_back({{"phase", p.phase},
                      {"epochs", p.epochs},
                      {"grad_norm_mean", p.grad_norm_mean},
                      {"grad_norm_variance", p.grad_norm_variance},
                      {"correlation", p.correlation ? json(*p.correlation) : json(nullptr)},
                      {"fit", fit},
                      {"null_reason", p.null_reason.empty() ? json(nullptr) : json(p.null_reason)}});
  }
  return {{"phases", phases}};
}

std::string row_name(const std::vector<std::pair<std::string, std::string>>& keys) {
  std::string name;
  for (const auto& [k, v] : keys) {
    if (!name.empty()) name += "__";
    name += k + "_" + v;
  }
  for (char& c : name) {
    if (c == '/' || c == ' ') c = '-';
  }
  return name;
}

SeedResult run_seed(const Graph& graph, const RunConfig& config, std::uint64_t seed,
                    bool keep_model) {
  SeedResult out;
  out.seed = seed;
  SplitAssignment split;
  try {
    split = make_split(graph, config.split, seed);
    ImbalanceSpec imbalance = config.imbalance;
    imbalance.seed = config.imbalance.seed + seed;
    split = apply_imbalance(split, graph, imbalance);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  TrainConfig train_config = config.train;
  train_config.seed = seed;
  try {
    TrainResult result = train(graph, split, train_config, config.curriculum);
    out.metrics = evaluate(result.model, graph, split.test);
    out.history = std::move(result.history);
    out.selected_epoch = result.selected_epoch;
    if (keep_model) out.model.emplace(std::move(result.model));
    out.ok = true;
  } catch (const DivergenceError& e) {
    out.error = e.what();
    out.diverged_epoch = e.epoch();
    return out;
  }
  try {
    out.stability = stability_report(out.history);
  } catch (const std::invalid_argument& e) {
    out.stability_error = e.what();
  }
  return out;
}

}  // namespace

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          next = n;  // stop handing out work
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return {std::nan(""), std::nan("")};
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

Graph load_graph(const DatasetRef& dataset, std::uint64_t run_seed) {
  if (dataset.synthetic) {
    SbmSpec spec = *dataset.synthetic;
    spec.seed += run_seed;
    return generate_sbm(spec);
  }
  return io::load_dataset(io::resolve_dataset(dataset.manifest));
}

RunRecord run(const RunConfig& config, const RunOptions& options) {
  config.validate();
  RunRecord record;
  record.config = config;

  // a manifest graph is shared by every seed; synthetic graphs are per seed
  std::vector<Graph> graphs;
  if (config.dataset.synthetic) {
    for (std::uint64_t s : config.seeds) graphs.push_back(load_graph(config.dataset, s));
  } else {
    graphs.push_back(load_graph(config.dataset, 0));
  }
  const auto graph_for = [&](std::size_t i) -> const Graph& {
    return graphs.size() == 1 ? graphs.front() : graphs[i];
  };

  RunConfig hashed = config;
  hashed.output_dir.clear();
  std::string inputs = to_json(hashed);
  for (const Graph& g : graphs) inputs += io::graph_digest(g) + "\n";
  record.input_hash = io::git_blob_hash(inputs);
  record.parameter_count =
      parameter_count(Model(model_config(config.train, graph_for(0)), config.seeds.front()));

  record.seeds.resize(config.seeds.size());
  parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
    record.seeds[i] = run_seed(graph_for(i), config, config.seeds[i], options.keep_models);
    if (options.on_seed) options.on_seed(to_string(config.train.ablation), record.seeds[i]);
  });

  std::vector<double> acc, f1, auc;
  for (const SeedResult& s : record.seeds) {
    if (!s.ok) {
      record.partial = true;
      continue;
    }
    acc.push_back(s.metrics.accuracy);
    f1.push_back(s.metrics.macro_f1);
    auc.push_back(s.metrics.macro_auc);
  }
  record.accuracy = aggregate(acc);
  record.macro_f1 = aggregate(f1);
  record.macro_auc = aggregate(auc);
  return record;
}

std::string run_record_json(const RunRecord& record) {
  json seeds = json::array();
  for (const SeedResult& s : record.seeds) {
    json entry = {{"seed", s.seed}, {"ok", s.ok}};
    if (s.ok) {
      entry["accuracy"] = s.metrics.accuracy;
      entry["macro_f1"] = s.metrics.macro_f1;
      entry["macro_auc"] = s.metrics.macro_auc;
      entry["selected_epoch"] = s.selected_epoch;
      entry["history"] = "history_seed" + std::to_string(s.seed) + ".csv";
      entry["metrics"] = "metrics_seed" + std::to_string(s.seed) + ".json";
      entry["stability"] = stability_json(s);
    } else {
      entry["error"] = s.error;
      entry["diverged_epoch"] = s.diverged_epoch;
    }
    seeds.push_back(entry);
  }
  const json j = {{"schema", kRunRecordSchema},
                  {"config", json::parse(to_json(record.config))},
                  {"input_hash", record.input_hash},
                  {"parameter_count", record.parameter_count},
                  {"partial", record.partial},
                  {"accuracy", aggregate_json(record.accuracy)},
                  {"macro_f1", aggregate_json(record.macro_f1)},
                  {"macro_auc", aggregate_json(record.macro_auc)},
                  {"seeds", seeds}};
  return j.dump(2) + "\n";
}

void write_run(const RunRecord& record, const std::filesystem::path& dir) {
  int num_classes = 0;
  for (const SeedResult& s : record.seeds) {
    if (!s.ok) continue;
    num_classes = static_cast<int>(s.metrics.confusion.size());
    const std::string tag = std::to_string(s.seed);
    io::write_file_atomic(dir / ("history_seed" + tag + ".csv"), io::history_csv(s.history, num_classes));
    io::write_file_atomic(dir / ("metrics_seed" + tag + ".json"), io::metrics_json(s.metrics));
    io::write_file_atomic(dir / ("confusion_seed" + tag + ".csv"), io::confusion_csv(s.metrics));
  }
  // run.json last, so a complete record implies its per-seed files exist
  io::write_file_atomic(dir / "run.json", run_record_json(record));
}

std::vector<TableRow> run_ablation(const RunConfig& config, const RunOptions& options) {
  if (is_baseline(config.train.variant)) {
    throw ConfigError("ablation needs a CL3AN variant, got " + to_string(config.train.variant));
  }
  std::vector<TableRow> rows;
  for (Ablation a : kAllAblations) {
    RunConfig c = config;
    c.train.ablation = a;
    rows.push_back({{{"ablation", to_string(a)}}, run(c, options)});
  }
  return rows;
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kRho: return "rho";
    case SweepAxis::kLambda12: return "lambda12";
    case SweepAxis::kLambda13: return "lambda13";
    case SweepAxis::kLossFlags: return "loss-flags";
  }
  return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  for (SweepAxis a : {SweepAxis::kRho, SweepAxis::kLambda12, SweepAxis::kLambda13, SweepAxis::kLossFlags}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown sweep axis \"" + name + "\" (rho, lambda12, lambda13, loss-flags)");
}

std::vector<SweepPoint> sweep_points(const RunConfig& base, SweepAxis axis) {
  std::vector<SweepPoint> points;
  const std::vector<double> lambda1{0.0, 0.02, 0.04, 0.06, 0.08, 0.1};
  const std::vector<double> lambda23{0.0, 0.002, 0.004, 0.006, 0.008, 0.01};
  switch (axis) {
    case SweepAxis::kRho:
      for (double rho : {0.1, 0.2, 0.4, 0.6, 0.8}) {
        RunConfig c = base;
        c.imbalance.rho = rho;
        points.push_back({{{"rho", short_double(rho)}}, c});
      }
      break;
    case SweepAxis::kLambda12:
    case SweepAxis::kLambda13: {
      const bool second = axis == SweepAxis::kLambda12;
      for (double l1 : lambda1) {
        for (double l : lambda23) {
          RunConfig c = base;
          c.curriculum.lambda1 = l1;
          (second ? c.curriculum.lambda2 : c.curriculum.lambda3) = l;
          points.push_back({{{"lambda1", short_double(l1)}, {second ? "lambda2" : "lambda3", short_double(l)}}, c});
        }
      }
      break;
    }
    case SweepAxis::kLossFlags:
      // flags only reach the loss of the full ablation level
      if (is_baseline(base.train.variant) || base.train.ablation != Ablation::k3EwCl) {
        throw ConfigError("the loss-flag sweep needs a CL3AN variant at ablation W/3EW-CL");
      }
      for (int mask = 0; mask < 8; ++mask) {
        RunConfig c = base;
        c.curriculum.flags = {(mask & 4) != 0, (mask & 2) != 0, (mask & 1) != 0};
        points.push_back({{{"entropy", std::to_string((mask >> 2) & 1)},
                           {"time_cl", std::to_string((mask >> 1) & 1)},
                           {"combined_cl", std::to_string(mask & 1)}},
                          c});
      }
      break;
  }
  return points;
}

std::vector<TableRow> run_sweep(const RunConfig& config, SweepAxis axis, const RunOptions& options) {
  std::vector<TableRow> rows;
  for (SweepPoint& p : sweep_points(config, axis)) rows.push_back({p.keys, run(p.config, options)});
  return rows;
}

std::string comparison_csv(const std::vector<TableRow>& rows) {
  std::string out;
  if (rows.empty()) return out;
  for (const auto& [k, v] : rows.front().keys) out += k + ",";
  out += "n_ok,acc_mean,acc_std,f1_mean,f1_std,auc_mean,auc_std,partial\n";
  for (const TableRow& r : rows) {
    for (const auto& [k, v] : r.keys) out += v + ",";
    std::size_t ok = 0;
    for (const SeedResult& s : r.record.seeds) ok += s.ok;
    out += std::to_string(ok);
    for (const Aggregate* a : {&r.record.accuracy, &r.record.macro_f1, &r.record.macro_auc}) {
      out += "," + short_double(a->mean) + "," + short_double(a->std);
    }
    out += std::string(",") + (r.record.partial ? "1" : "0") + "\n";
  }
  return out;
}

void write_table(const std::vector<TableRow>& rows, const std::filesystem::path& dir,
                 const std::string& table_name) {
  for (const TableRow& r : rows) write_run(r.record, dir / row_name(r.keys));
  io::write_file_atomic(dir / (table_name + ".csv"), comparison_csv(rows));
}

}  // namespace cl3an
