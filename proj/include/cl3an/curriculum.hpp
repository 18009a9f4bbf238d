#pragma once

// Classifier head, composite curriculum loss, phase schedule and the
// difficulty-gated progressive subgraph.

#include "cl3an/autodiff.hpp"
#include "cl3an/graph.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace cl3an::curriculum {

using ad::Var;

struct ClassifierVars {
  Var w_final;  // [D x D_h]
  Var w_out;    // [D_h x C]
  Var b_out;    // [1 x C]
};

/// h = ReLU(sum_u alpha_vu z_u W_final [+ sum_w beta_vw z_vw W_final]);
/// softmax(h W_o + b_o). The edge term is used when `edges` is valid.
Var classifier_head(const Var& nodes, const Var& node_pairwise, const Var& edges,
                    const Var& edge_pairwise, const Graph& graph, const ClassifierVars& vars);

struct PhaseWeights {
  double lambda_c = 1.0;
  double lambda_e = 0.0;
  friend bool operator==(const PhaseWeights&, const PhaseWeights&) = default;
};

/// 0-based phase index: 0 for t < T/3, 1 for T/3 <= t < 2T/3, 2 after.
int phase_index(int t, int total_epochs);

struct LossFlags {
  bool entropy = true;      // entropy + diversity terms
  bool time_cl = true;      // phase schedule and pacing
  bool combined_cl = true;  // adaptive class weights and difficulty gate
  friend bool operator==(const LossFlags&, const LossFlags&) = default;
};

struct DifficultyWeights {
  double degree = 1.0 / 3.0;
  double heterophily = 1.0 / 3.0;
  double rarity = 1.0 / 3.0;
  friend bool operator==(const DifficultyWeights&, const DifficultyWeights&) = default;
};

struct CurriculumConfig {
  int epochs = 200;
  std::vector<PhaseWeights> phases{{1.0, 0.0}, {0.7, 0.3}, {0.3, 0.7}};
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  double lambda3 = 0.008;
  double tau = 0.5;
  DifficultyWeights difficulty;
  double q_start = 0.3;
  double q_end = 1.0;
  /// Fraction of T at which the quantile reaches q_end.
  double ramp_end = 2.0 / 3.0;
  double ema_decay = 0.9;
  LossFlags flags;

  /// Throws ConfigError on a violated invariant.
  void validate() const;
  friend bool operator==(const CurriculumConfig&, const CurriculumConfig&) = default;
};

/// Phase table lookup with the default (1,0) / (0.7,0.3) / (0.3,0.7) table.
/// t must lie in [0, T).
PhaseWeights phase_weights(int t, int total_epochs);
PhaseWeights phase_weights(int t, int total_epochs, std::span<const PhaseWeights> table);

/// alpha(t) = 1 - t/T, in [0, 1].
double pacing(int t, int total_epochs);

/// Per-class EMA of training accuracy.
class ClassWeightState {
 public:
  explicit ClassWeightState(int num_classes, double decay = 0.9);

  /// Folds one epoch of per-class accuracy in. The first observation
  /// initialises the average.
  void update(std::span<const double> accuracy);
  double accuracy(int c) const { return acc_[c]; }
  const std::vector<double>& accuracies() const { return acc_; }
  /// Overrides the running accuracy of class c.
  void set_accuracy(int c, double value);

 private:
  std::vector<double> acc_;
  double decay_;
  bool seeded_ = false;
};

/// w_c = alpha + (1 - alpha)(1 - Acc_c).
double curriculum_weight(double pacing_value, double class_accuracy);
double curriculum_weight(int c, int t, int total_epochs, const ClassWeightState& state);

/// c_v = 1 when max_c p_v(c) >= tau.
std::vector<double> correctness_flags(const Tensor& probs, std::span<const Index> rows, double tau);

/// sum over `rows` of (2 c_v - 1) H(p_v). Rows must be distributions.
Var entropy_reg(const Var& probs, std::span<const Index> rows, std::span<const double> flags);

/// KL(mean row || uniform).
Var diversity_loss(const Var& probs);

struct LossBreakdown {
  int epoch = 0;
  double lambda_c = 0.0;
  double lambda_e = 0.0;
  double weighted_ce = 0.0;  // already scaled by lambda1
  double ce = 0.0;
  double entropy = 0.0;      // mean over the active nodes
  double diversity = 0.0;
  double total = 0.0;
  double pacing = 0.0;
  Index active_nodes = 0;
};

struct LossResult {
  Var total;
  LossBreakdown breakdown;
};

/// total = lambda_c * Lambda1 * mean_active(w_y CE) +
///         lambda_e * (mean_active CE + Lambda2 * L_ent + Lambda3 * L_div).
/// L_ent is averaged over the active nodes; L_div uses every row of probs.
LossResult total_loss(const Var& probs, std::span<const int> labels, const ClassWeightState& state,
                      const CurriculumConfig& config, std::span<const Index> active, int epoch);

/// Equal-weight difficulty per node: degree rank, label disagreement with
/// labelled neighbours, and class rarity from the labelled counts.
std::vector<double> node_difficulty(const Graph& graph, std::span<const Index> labeled,
                                    const DifficultyWeights& weights = {});
/// (D_u + D_v) / 2 per stored undirected edge.
std::vector<double> edge_difficulty(const Graph& graph, std::span<const double> node_difficulty);

/// Quantile of the difficulty distribution admitted at epoch t.
double threshold_quantile(int t, const CurriculumConfig& config);
/// Nearest-rank quantile; q = 1 returns the maximum.
double quantile_threshold(std::span<const double> values, double q);

struct Subgraph {
  std::vector<Index> nodes;
  std::vector<Index> edges;  // indices into Graph::edges()
};

Subgraph progressive_subgraph(std::span<const double> node_difficulty,
                              std::span<const double> edge_difficulty, double theta);

/// Training nodes whose difficulty is within the epoch's threshold.
std::vector<Index> active_training_nodes(std::span<const Index> train,
                                         std::span<const double> node_difficulty, double theta);

}  // namespace cl3an::curriculum
