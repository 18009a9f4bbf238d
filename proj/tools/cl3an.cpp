// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 3 data error, 4 numerical divergence, 1 anything else.

#include "cl3an/config.hpp"
#include "cl3an/errors.hpp"
#include "cl3an/experiments.hpp"
#include "cl3an/io.hpp"
#include "cl3an/synthetic.hpp"
#include "cl3an/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using namespace cl3an;
namespace fs = std::filesystem;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

// Flags shared by train / ablate / sweep. Unset flags leave the config file
// (or the defaults) untouched.
struct RunFlags {
  std::string config_file;
  std::string dataset;
  bool synthetic = false;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::optional<double> rho;
  std::vector<int> minority;
  std::optional<std::string> variant;
  std::optional<std::string> ablation;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<double> dropout;
  std::optional<int> hidden;
  std::optional<int> embed_dim;
  std::optional<int> heads;
  std::optional<int> layers;
  std::optional<double> noise;
  std::optional<std::string> out;
  int jobs = 1;
  bool quiet = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "RunConfig JSON file");
    app->add_option("--dataset", dataset, "Manifest path, dataset directory or name under $CL3AN_DATA_DIR");
    app->add_flag("--synthetic", synthetic, "Use the built-in 4-class SBM instead of a dataset");
    app->add_option("--seeds", seeds, "Run seeds")->delimiter(',');
    app->add_option("--seed", seed, "Single run seed");
    app->add_option("--rho", rho, "Minority/majority training ratio in (0,1]");
    app->add_option("--minority", minority, "Minority classes")->delimiter(',');
    app->add_option("--variant", variant, "gcn, sage, gat, full, vanilla_gcn, vanilla_gat");
    app->add_option("--ablation", ablation, "W/FE, W/EL, W/EW, W/2EW, W/3EW, W/3EW-CL");
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--dropout", dropout);
    app->add_option("--hidden", hidden);
    app->add_option("--embed-dim", embed_dim);
    app->add_option("--heads", heads);
    app->add_option("--layers", layers);
    app->add_option("--noise", noise, "Feature noise of the synthetic SBM");
    app->add_option("--out", out, "Output directory");
    app->add_option("--jobs", jobs, "Seeds trained concurrently")->check(CLI::PositiveNumber);
    app->add_flag("--quiet", quiet, "No per-seed progress on stderr");
  }

  RunConfig build() const {
    RunConfig c;
    if (!config_file.empty()) c = run_config_from_json(io::read_file(config_file));
    if (!dataset.empty() && synthetic) throw ConfigError("--dataset and --synthetic are exclusive");
    if (!dataset.empty()) {
      c.dataset = {dataset, std::nullopt};
    } else if (synthetic) {
      c.dataset = {"", SbmSpec{}};
    }
    if (noise) {
      if (!c.dataset.synthetic) throw ConfigError("--noise applies to the synthetic dataset only");
      c.dataset.synthetic->noise = *noise;
    }
    if (!seeds.empty()) c.seeds = seeds;
    if (seed) c.seeds = {*seed};
    if (rho) c.imbalance.rho = *rho;
    if (!minority.empty()) c.imbalance.minority_classes = minority;
    if (variant) c.train.variant = parse_variant(*variant);
    if (ablation) c.train.ablation = parse_ablation(*ablation);
    if (epochs) c.train.epochs = c.curriculum.epochs = *epochs;
    if (lr) c.train.lr = *lr;
    if (weight_decay) c.train.weight_decay = *weight_decay;
    if (dropout) c.train.dropout = *dropout;
    if (hidden) c.train.hidden = *hidden;
    if (embed_dim) c.train.embed_dim = *embed_dim;
    if (heads) c.train.heads = *heads;
    if (layers) c.train.layers = *layers;
    if (out) c.output_dir = *out;
    c.validate();
    return c;
  }

  RunOptions options() const {
    RunOptions o;
    o.jobs = jobs;
    if (!quiet) {
      o.on_seed = [](const std::string& label, const SeedResult& s) {
        if (s.ok) {
          std::fprintf(stderr, "[%s] seed %llu: acc %.4f macro-F1 %.4f AUC %.4f\n", label.c_str(),
                       static_cast<unsigned long long>(s.seed), s.metrics.accuracy,
                       s.metrics.macro_f1, s.metrics.macro_auc);
        } else {
          std::fprintf(stderr, "[%s] seed %llu diverged: %s\n", label.c_str(),
                       static_cast<unsigned long long>(s.seed), s.error.c_str());
        }
      };
    }
    return o;
  }
};

void print_summary(const std::string& label, const RunRecord& r) {
  std::printf("%-10s acc %.4f ± %.4f  macro-F1 %.4f ± %.4f  AUC %.4f ± %.4f%s\n", label.c_str(),
              r.accuracy.mean, r.accuracy.std, r.macro_f1.mean, r.macro_f1.std, r.macro_auc.mean,
              r.macro_auc.std, r.partial ? "  (partial)" : "");
}

int table_exit(const std::vector<TableRow>& rows) {
  for (const TableRow& r : rows) {
    if (r.record.partial) return kExitDivergence;
  }
  return 0;
}

std::vector<Index> node_set(const std::string& which, const SplitAssignment& split, Index n) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  if (which == "all") {
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index v = 0; v < n; ++v) all[v] = v;
    return all;
  }
  throw ConfigError("--nodes must be train, val, test or all");
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Curriculum-guided three-stage attention GNN for imbalanced node classification"};
  app.require_subcommand(1);

  RunFlags train_flags, ablate_flags, sweep_flags;
  bool save_models = false;
  CLI::App* train_cmd = app.add_subcommand("train", "Train and evaluate over seeds");
  train_flags.attach(train_cmd);
  train_cmd->add_flag("--save-models", save_models, "Write model_seed<S>.json per seed");

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Run the six ablation levels");
  ablate_flags.attach(ablate_cmd);

  std::string axis;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Sweep rho, lambda12, lambda13 or loss-flags");
  sweep_flags.attach(sweep_cmd);
  sweep_cmd->add_option("--axis", axis, "rho, lambda12, lambda13, loss-flags")->required();

  std::string model_path, nodes = "test", eval_out;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "Evaluate a saved model on its split");
  eval_cmd->add_option("--model", model_path, "model_seed<S>.json written by train")->required();
  eval_cmd->add_option("--nodes", nodes, "train, val, test or all");
  eval_cmd->add_option("--out", eval_out, "Write metrics JSON here instead of stdout");

  std::string export_model, export_out;
  CLI::App* export_cmd = app.add_subcommand("export-embeddings", "Write final node embeddings as CSV");
  export_cmd->add_option("--model", export_model)->required();
  export_cmd->add_option("--out", export_out)->required();

  SbmSpec sbm;
  std::string gen_out, gen_format = "csv";
  CLI::App* gen_cmd = app.add_subcommand("gen-synthetic", "Write a planted-partition dataset");
  gen_cmd->add_option("--out", gen_out, "Dataset directory")->required();
  gen_cmd->add_option("--class-sizes", sbm.class_sizes)->delimiter(',');
  gen_cmd->add_option("--p-intra", sbm.p_intra);
  gen_cmd->add_option("--p-inter", sbm.p_inter);
  gen_cmd->add_option("--feature-dim", sbm.feature_dim);
  gen_cmd->add_option("--mean-scale", sbm.mean_scale);
  gen_cmd->add_option("--noise", sbm.noise);
  gen_cmd->add_option("--seed", sbm.seed);
  gen_cmd->add_option("--format", gen_format, "csv or float32");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (train_cmd->parsed()) {
    const RunConfig config = train_flags.build();
    RunOptions options = train_flags.options();
    options.keep_models = save_models;
    const RunRecord record = run(config, options);
    write_run(record, config.output_dir);
    if (save_models) {
      for (const SeedResult& s : record.seeds) {
        if (!s.model) continue;
        io::write_file_atomic(fs::path(config.output_dir) / ("model_seed" + std::to_string(s.seed) + ".json"),
                              io::model_json(*s.model, config, s.seed));
      }
    }
    print_summary(to_string(config.train.ablation), record);
    std::printf("input hash %s, record in %s\n", record.input_hash.c_str(),
                (fs::path(config.output_dir) / "run.json").c_str());
    return record.partial ? kExitDivergence : 0;
  }
  if (ablate_cmd->parsed()) {
    const RunConfig config = ablate_flags.build();
    const auto rows = run_ablation(config, ablate_flags.options());
    write_table(rows, config.output_dir, "ablation");
    for (const TableRow& r : rows) print_summary(r.keys.front().second, r.record);
    return table_exit(rows);
  }
  if (sweep_cmd->parsed()) {
    const RunConfig config = sweep_flags.build();
    const SweepAxis a = parse_sweep_axis(axis);
    const auto rows = run_sweep(config, a, sweep_flags.options());
    write_table(rows, config.output_dir, "sweep_" + to_string(a));
    std::fputs(comparison_csv(rows).c_str(), stdout);
    return table_exit(rows);
  }
  if (eval_cmd->parsed()) {
    const io::SavedModel saved = io::load_model(model_path);
    const Graph graph = load_graph(saved.config.dataset, saved.seed);
    SplitAssignment split = make_split(graph, saved.config.split, saved.seed);
    ImbalanceSpec imbalance = saved.config.imbalance;
    imbalance.seed += saved.seed;
    split = apply_imbalance(split, graph, imbalance);
    const Metrics m = evaluate(saved.model, graph, node_set(nodes, split, graph.num_nodes()));
    if (eval_out.empty()) {
      std::fputs(io::metrics_json(m).c_str(), stdout);
    } else {
      io::write_file_atomic(eval_out, io::metrics_json(m));
    }
    return 0;
  }
  if (export_cmd->parsed()) {
    const io::SavedModel saved = io::load_model(export_model);
    const Graph graph = load_graph(saved.config.dataset, saved.seed);
    io::write_file_atomic(export_out, io::embeddings_csv(final_embeddings(saved.model, graph), graph.labels()));
    return 0;
  }
  if (gen_cmd->parsed()) {
    io::FeatureFormat format;
    if (gen_format == "csv") {
      format = io::FeatureFormat::kCsv;
    } else if (gen_format == "float32") {
      format = io::FeatureFormat::kFloat32;
    } else {
      throw ConfigError("--format must be csv or float32");
    }
    const Graph g = generate_sbm(sbm);
    io::save_dataset(g, gen_out, "sbm", format);
    std::printf("wrote %lld nodes, %lld edges, HR %.4f to %s\n", static_cast<long long>(g.num_nodes()),
                static_cast<long long>(g.num_edges()), g.num_edges() ? heterophily_ratio(g) : 0.0,
                gen_out.c_str());
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const cl3an::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cl3an::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const cl3an::DivergenceError& e) {
    std::cerr << "diverged at epoch " << e.epoch() << ": " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
