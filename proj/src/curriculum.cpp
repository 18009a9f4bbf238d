#include "cl3an/curriculum.hpp"

#include "cl3an/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cl3an::curriculum {

using namespace cl3an::ad;

Var classifier_head(const Var& nodes, const Var& node_pairwise, const Var& edges,
                    const Var& edge_pairwise, const Graph& graph, const ClassifierVars& vars) {
  const Var projected = matmul(nodes, vars.w_final);
  Var pre = segment_weighted_sum(node_pairwise, projected, graph.neighborhoods());
  if (edges.valid()) {
    const Var edge_term =
        segment_weighted_sum(edge_pairwise, matmul(edges, vars.w_final), graph.out_edges());
    pre = add(pre, edge_term);
  }
  return row_softmax(add_row(matmul(relu(pre), vars.w_out), vars.b_out));
}

void CurriculumConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (phases.size() != 3) throw ConfigError("phase table needs exactly three rows");
  for (const PhaseWeights& p : phases) {
    if (p.lambda_c < 0 || p.lambda_e < 0 || std::abs(p.lambda_c + p.lambda_e - 1.0) > 1e-12) {
      throw ConfigError("phase weights must be nonnegative and sum to 1");
    }
  }
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ConfigError("loss coefficients must be >= 0");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (!(q_start >= 0.0 && q_start <= q_end && q_end <= 1.0)) {
    throw ConfigError("quantile schedule needs 0 <= q_start <= q_end <= 1");
  }
  if (!(ramp_end > 0.0 && ramp_end <= 1.0)) throw ConfigError("ramp_end must lie in (0,1]");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0,1)");
  if (difficulty.degree < 0 || difficulty.heterophily < 0 || difficulty.rarity < 0) {
    throw ConfigError("difficulty weights must be >= 0");
  }
}

int phase_index(int t, int total_epochs) {
  if (total_epochs <= 0) throw std::invalid_argument("total epochs must be positive");
  if (t < 0 || t >= total_epochs) {
    throw std::out_of_range("epoch " + std::to_string(t) + " outside [0," +
                            std::to_string(total_epochs) + ")");
  }
  // integer comparisons keep the boundaries exact: t >= T/3 <=> 3t >= T
  const long long t3 = 3LL * t;
  if (t3 < total_epochs) return 0;
  if (t3 < 2LL * total_epochs) return 1;
  return 2;
}

PhaseWeights phase_weights(int t, int total_epochs) {
  static const CurriculumConfig defaults;
  return phase_weights(t, total_epochs, defaults.phases);
}

PhaseWeights phase_weights(int t, int total_epochs, std::span<const PhaseWeights> table) {
  if (table.size() != 3) throw std::invalid_argument("phase table needs exactly three rows");
  return table[static_cast<std::size_t>(phase_index(t, total_epochs))];
}

double pacing(int t, int total_epochs) {
  if (total_epochs <= 0) throw std::invalid_argument("total epochs must be positive");
  const double a = 1.0 - static_cast<double>(t) / static_cast<double>(total_epochs);
  return std::clamp(a, 0.0, 1.0);
}

ClassWeightState::ClassWeightState(int num_classes, double decay)
    : acc_(static_cast<std::size_t>(num_classes), 0.0), decay_(decay) {}

void ClassWeightState::update(std::span<const double> accuracy) {
  if (accuracy.size() != acc_.size()) throw std::invalid_argument("class count mismatch");
  for (std::size_t c = 0; c < acc_.size(); ++c) {
    const double a = std::clamp(accuracy[c], 0.0, 1.0);
    acc_[c] = seeded_ ? decay_ * acc_[c] + (1.0 - decay_) * a : a;
  }
  seeded_ = true;
}

void ClassWeightState::set_accuracy(int c, double value) {
  acc_.at(static_cast<std::size_t>(c)) = std::clamp(value, 0.0, 1.0);
}

double curriculum_weight(double pacing_value, double class_accuracy) {
  return pacing_value + (1.0 - pacing_value) * (1.0 - class_accuracy);
}

double curriculum_weight(int c, int t, int total_epochs, const ClassWeightState& state) {
  return curriculum_weight(pacing(t, total_epochs), state.accuracy(c));
}

std::vector<double> correctness_flags(const Tensor& probs, std::span<const Index> rows, double tau) {
  std::vector<double> flags;
  flags.reserve(rows.size());
  for (Index r : rows) flags.push_back(probs.row(r).maxCoeff() >= tau ? 1.0 : 0.0);
  return flags;
}

Var entropy_reg(const Var& probs, std::span<const Index> rows, std::span<const double> flags) {
  if (rows.size() != flags.size()) throw std::invalid_argument("entropy_reg: flag count mismatch");
  const Tensor& p = probs.value();
  Tensor sign = Tensor::Zero(p.rows(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    if (r < 0 || r >= p.rows()) throw std::out_of_range("entropy_reg: row out of range");
    if (std::abs(p.row(r).sum() - 1.0) > 1e-6 || p.row(r).minCoeff() < 0.0) {
      throw std::invalid_argument("entropy_reg: row " + std::to_string(r) +
                                  " is not a distribution");
    }
    sign(r, 0) += 2.0 * flags[i] - 1.0;
  }
  return weighted_sum(row_entropy(probs), sign);
}

Var diversity_loss(const Var& probs) {
  const Index c = probs.cols();
  return kl_divergence(mean_rows(probs), Tensor::Constant(1, c, 1.0 / static_cast<double>(c)));
}

LossResult total_loss(const Var& probs, std::span<const int> labels, const ClassWeightState& state,
                      const CurriculumConfig& config, std::span<const Index> active, int epoch) {
  if (active.empty()) {
    throw std::runtime_error("curriculum gate excluded all training nodes");
  }
  const LossFlags& f = config.flags;
  const PhaseWeights lambda =
      f.time_cl ? phase_weights(epoch, config.epochs, config.phases) : PhaseWeights{0.5, 0.5};
  const double alpha = f.time_cl ? pacing(epoch, config.epochs) : 0.0;

  std::vector<double> w(active.size(), 1.0);
  if (f.combined_cl) {
    for (std::size_t i = 0; i < active.size(); ++i) {
      w[i] = curriculum_weight(alpha, state.accuracy(labels[static_cast<std::size_t>(active[i])]));
    }
  }
  const Var wce = scale(cross_entropy(probs, labels, active, w), config.lambda1);
  const Var ce = cross_entropy(probs, labels, active);
  const std::vector<double> flags = correctness_flags(probs.value(), active, config.tau);
  const Var ent = scale(entropy_reg(probs, active, flags), 1.0 / static_cast<double>(active.size()));
  const Var div = diversity_loss(probs);

  Var inner = ce;
  if (f.entropy) {
    inner = add(inner, add(scale(ent, config.lambda2), scale(div, config.lambda3)));
  }
  const Var total = add(scale(wce, lambda.lambda_c), scale(inner, lambda.lambda_e));

  LossResult r;
  r.total = total;
  LossBreakdown& b = r.breakdown;
  b.epoch = epoch;
  b.lambda_c = lambda.lambda_c;
  b.lambda_e = lambda.lambda_e;
  b.weighted_ce = wce.value()(0, 0);
  b.ce = ce.value()(0, 0);
  b.entropy = ent.value()(0, 0);
  b.diversity = div.value()(0, 0);
  b.total = total.value()(0, 0);
  b.pacing = alpha;
  b.active_nodes = static_cast<Index>(active.size());
  return r;
}

std::vector<double> node_difficulty(const Graph& graph, std::span<const Index> labeled,
                                    const DifficultyWeights& weights) {
  const Index n = graph.num_nodes();
  std::vector<char> is_labeled(static_cast<std::size_t>(n), 0);
  std::vector<Index> counts(static_cast<std::size_t>(graph.num_classes()), 0);
  for (Index v : labeled) {
    if (is_labeled.at(static_cast<std::size_t>(v))) continue;
    is_labeled[v] = 1;
    ++counts[graph.labels()[v]];
  }
  const Index max_count = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());

  // min-rank of degree: number of nodes with strictly smaller degree
  std::vector<Index> sorted_deg = graph.degrees();
  std::sort(sorted_deg.begin(), sorted_deg.end());

  const Segments& nb = graph.neighborhoods();
  std::vector<double> d(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) {
    const Index deg = graph.degrees()[v];
    const double rank = static_cast<double>(
        std::lower_bound(sorted_deg.begin(), sorted_deg.end(), deg) - sorted_deg.begin());
    double het = 0.5;
    double rarity = 0.5;
    if (is_labeled[v]) {
      const int y = graph.labels()[v];
      Index seen = 0, cross = 0;
      for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) {
        const Index u = nb.source[k];
        if (u == v || !is_labeled[u]) continue;
        ++seen;
        cross += graph.labels()[u] != y;
      }
      if (seen > 0) het = static_cast<double>(cross) / static_cast<double>(seen);
      if (max_count > 0) {
        rarity = 1.0 - static_cast<double>(counts[y]) / static_cast<double>(max_count);
      }
    }
    d[v] = weights.degree * rank / static_cast<double>(n) + weights.heterophily * het +
           weights.rarity * rarity;
  }
  return d;
}

std::vector<double> edge_difficulty(const Graph& graph, std::span<const double> node_difficulty) {
  std::vector<double> d;
  d.reserve(graph.edges().size());
  for (const Edge& e : graph.edges()) d.push_back(0.5 * (node_difficulty[e.u] + node_difficulty[e.v]));
  return d;
}

double threshold_quantile(int t, const CurriculumConfig& config) {
  const double ramp = config.ramp_end * static_cast<double>(config.epochs);
  if (static_cast<double>(t) >= ramp - 1e-9) return config.q_end;
  return config.q_start + (config.q_end - config.q_start) * static_cast<double>(t) / ramp;
}

double quantile_threshold(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  const auto idx = static_cast<std::ptrdiff_t>(std::ceil(q * n - 1e-9)) - 1;
  return sorted[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
      idx, 0, static_cast<std::ptrdiff_t>(sorted.size()) - 1))];
}

Subgraph progressive_subgraph(std::span<const double> node_difficulty,
                              std::span<const double> edge_difficulty, double theta) {
  Subgraph s;
  for (std::size_t v = 0; v < node_difficulty.size(); ++v) {
    if (node_difficulty[v] <= theta) s.nodes.push_back(static_cast<Index>(v));
  }
  for (std::size_t e = 0; e < edge_difficulty.size(); ++e) {
    if (edge_difficulty[e] <= theta) s.edges.push_back(static_cast<Index>(e));
  }
  return s;
}

std::vector<Index> active_training_nodes(std::span<const Index> train,
                                         std::span<const double> node_difficulty, double theta) {
  std::vector<Index> out;
  for (Index v : train) {
    if (node_difficulty[static_cast<std::size_t>(v)] <= theta) out.push_back(v);
  }
  return out;
}

}  // namespace cl3an::curriculum
