#pragma once

#include "cl3an/curriculum.hpp"
#include "cl3an/graph.hpp"
#include "cl3an/metrics.hpp"
#include "cl3an/model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace cl3an {

struct TrainConfig {
  int epochs = 200;
  double lr = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  int hidden = 16;
  int embed_dim = 64;
  int heads = 8;
  int layers = 2;
  std::uint64_t seed = 0;
  Variant variant = Variant::kFull;
  Ablation ablation = Ablation::k3EwCl;
  /// Carried for completeness; training is full-batch.
  int batch_size = 42;
  /// Keep the parameters of the final-phase epoch with the best validation
  /// macro-F1 instead of the last epoch. Needs a nonempty validation set.
  bool select_checkpoint = true;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Decoupled weight decay Adam. Each parameter keeps its own step count, so a
/// block that starts updating late gets fresh bias correction.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  /// Updates params[i] for every i with active[i] set.
  void step(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
            const std::vector<bool>& active);

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;
  std::vector<long> t_;
};

struct EpochRecord {
  curriculum::LossBreakdown loss;
  std::vector<double> class_accuracy;  // on all training nodes, this epoch
  double train_accuracy = 0.0;
  double grad_norm = 0.0;
  double stage_score = 0.0;  // diagnostic score of the current stage
  double engage_score = std::nan("");
  double enact_score = std::nan("");
  double theta = 0.0;
  Index subgraph_nodes = 0;  // |V_t|
  int phase = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  Model model;
  TrainHistory history;
  /// Epoch whose parameters `model` holds.
  int selected_epoch = -1;
  double selected_val_f1 = std::nan("");
};

ModelConfig model_config(const TrainConfig& config, const Graph& graph);

/// The curriculum actually used: baselines and ablations below the full
/// model train with every loss flag off.
curriculum::CurriculumConfig effective_curriculum(const TrainConfig& train,
                                                  curriculum::CurriculumConfig curriculum);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full-batch training. Throws DivergenceError on a non-finite loss.
TrainResult train(const Graph& graph, const SplitAssignment& split, const TrainConfig& config,
                  const curriculum::CurriculumConfig& curriculum,
                  const EpochCallback& on_epoch = {});

/// Class probabilities in evaluation mode (no dropout, every stage live).
Tensor predict(const Model& model, const Graph& graph);
/// Final node embeddings in evaluation mode.
Tensor final_embeddings(const Model& model, const Graph& graph);

Metrics evaluate(const Model& model, const Graph& graph, std::span<const Index> nodes);

}  // namespace cl3an
