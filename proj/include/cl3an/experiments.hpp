#pragma once

// Experiment orchestration: multi-seed runs, the ablation table and the
// parameter sweeps, plus their on-disk form.

#include "cl3an/config.hpp"
#include "cl3an/diagnostics.hpp"
#include "cl3an/metrics.hpp"
#include "cl3an/trainer.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cl3an {

inline constexpr const char* kRunRecordSchema = "cl3an.run-record/1";

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  /// Set when training diverged.
  std::string error;
  int diverged_epoch = -1;
  Metrics metrics;
  TrainHistory history;
  int selected_epoch = -1;
  std::optional<StabilityReport> stability;
  std::string stability_error;
  /// Kept when RunOptions::keep_models is set.
  std::optional<Model> model;
};

struct Aggregate {
  double mean = 0.0;
  /// Sample standard deviation; 0 for a single seed.
  double std = 0.0;
};

struct RunRecord {
  RunConfig config;
  /// Git blob id over the config (minus output_dir) and the input graphs.
  std::string input_hash;
  Index parameter_count = 0;
  std::vector<SeedResult> seeds;
  /// Over the seeds that finished.
  Aggregate accuracy;
  Aggregate macro_f1;
  Aggregate macro_auc;
  /// Some seed diverged.
  bool partial = false;
};

struct RunOptions {
  /// Independent seeds or grid points trained concurrently.
  int jobs = 1;
  bool keep_models = false;
  /// Called after each finished seed; may run on worker threads.
  std::function<void(const std::string& label, const SeedResult&)> on_seed;
};

Aggregate aggregate(const std::vector<double>& values);

/// The graph used for one run seed.
Graph load_graph(const DatasetRef& dataset, std::uint64_t run_seed);

/// Trains and evaluates on the test split once per seed. Divergence marks
/// the record partial; configuration and data errors propagate.
RunRecord run(const RunConfig& config, const RunOptions& options = {});

std::string run_record_json(const RunRecord& record);
/// Writes run.json plus per-seed history, metrics and confusion files.
void write_run(const RunRecord& record, const std::filesystem::path& dir);

/// One grid point: axis values by column name, and its record.
struct TableRow {
  std::vector<std::pair<std::string, std::string>> keys;
  RunRecord record;
};

/// The six ablation levels in table order. The config's variant must not be
/// a baseline.
std::vector<TableRow> run_ablation(const RunConfig& config, const RunOptions& options = {});

enum class SweepAxis { kRho, kLambda12, kLambda13, kLossFlags };

std::string to_string(SweepAxis axis);
/// Accepts rho, lambda12, lambda13, loss-flags; throws ConfigError otherwise.
SweepAxis parse_sweep_axis(const std::string& name);

struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> keys;
  RunConfig config;
};

/// Default grids: rho {0.1,0.2,0.4,0.6,0.8}; Lambda1 {0,...,0.1} step 0.02
/// against Lambda2 or Lambda3 {0,...,0.01} step 0.002; the 8 on/off
/// combinations of the three loss flags.
std::vector<SweepPoint> sweep_points(const RunConfig& base, SweepAxis axis);

std::vector<TableRow> run_sweep(const RunConfig& config, SweepAxis axis,
                                const RunOptions& options = {});

/// Key columns, then n_ok, acc/f1/auc mean and std, partial.
std::string comparison_csv(const std::vector<TableRow>& rows);

/// Writes each row under dir/<row-name>/ and the merged table as dir/<table_name>.csv.
void write_table(const std::vector<TableRow>& rows, const std::filesystem::path& dir,
                 const std::string& table_name);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
/// exception after all workers stop.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace cl3an
