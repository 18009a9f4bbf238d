#pragma once

// Feature extraction: degree-normalised aggregation, neighbour attention,
// the combined structural + semantic node update, and the attention-gated
// edge feature track.

#include "cl3an/autodiff.hpp"
#include "cl3an/graph.hpp"

#include <vector>

namespace cl3an::layers {

using ad::Var;

inline constexpr double kAttentionSlope = 0.2;

enum class Aggregator {
  kNormalized,  // 1/sqrt(d_u d_v) with self-loops
  kMean,        // 1/d_v over N(v) and v
};

/// ReLU(A H W) with A the normalised (or mean) adjacency.
Var gcn_aggregate(const Var& h, const Graph& graph, const Var& w,
                  Aggregator aggregator = Aggregator::kNormalized);

/// Attention logits LeakyReLU(a^T [p_v || p_u]) for every neighbourhood entry
/// of the already projected features `projected` = H W, softmax-normalised
/// over N(v) and v. Returns one coefficient per neighbourhood CSR entry.
Var attention_from_projected(const Var& projected, const Graph& graph, const Var& a,
                             double slope = kAttentionSlope);

/// Coefficients alpha_vu over N(v) and v for features H and weight W.
Var gat_coefficients(const Var& h, const Graph& graph, const Var& w, const Var& a,
                     double slope = kAttentionSlope);

/// sum_u alpha_vu p_u over each node's neighbourhood entries.
Var attend(const Var& alpha, const Var& projected, const Graph& graph);

struct UpdateResult {
  Var h;          // next node state
  Var structural; // ReLU(A H W)
  Var semantic;   // sum_u alpha_vu W h_u (pre-activation)
  Var alpha;      // neighbourhood coefficients
};

enum class UpdateMode { kCombined, kGcnOnly, kSageOnly, kGatOnly };

/// ReLU(structural + semantic) with one W shared by both branches. The
/// single-branch modes keep only that branch.
UpdateResult combined_update(const Var& h, const Graph& graph, const Var& w, const Var& a,
                             UpdateMode mode = UpdateMode::kCombined);

/// e_vu <- beta_vu * (e_vu We), one beta per directed edge.
Var edge_update(const Var& e, const Var& beta, const Var& we);

/// sigmoid(E b) per directed edge.
Var edge_scores(const Var& e, const Var& b);

/// mean(x_v, x_u) We per directed edge, without materialising the mean.
Var initial_edge_projection(const Var& x, const Graph& graph, const Var& we);
/// sigmoid(mean(x_v, x_u) . b) per directed edge.
Var initial_edge_scores(const Var& x, const Graph& graph, const Var& b);

/// Neighbourhood coefficients restricted to directed edges (self-loops dropped).
Var edge_alpha(const Var& alpha, const Graph& graph);

/// sum over layers of alpha^(l) (scalar per directed edge) times e^(l+1).
Var feature_extraction_output(const std::vector<Var>& alphas, const std::vector<Var>& edge_states,
                              const Graph& graph);

struct LayerVars {
  Var weight;       // W  [D_in x D_out]
  Var attention;    // a  [2 D_out x 1]
  Var edge_weight;  // We [D_in x D_out]
  Var edge_score;   // b_e [D_in x 1]
};

struct ExtractionResult {
  Var nodes;                     // H^(L)
  std::vector<Var> alphas;       // per layer, neighbourhood entries
  std::vector<Var> edge_states;  // e^(l+1) per layer, directed edges
  Var fused_edges;               // F_e
};

/// Runs the stacked feature-extraction layers on raw features `x`. Edge
/// features start from the endpoint mean of x. Dropout hits both tracks after
/// every layer; `rng` may be null when dropout is zero.
ExtractionResult extract_features(const Var& x, const Graph& graph,
                                  const std::vector<LayerVars>& layers, UpdateMode mode,
                                  double dropout, Rng* rng);

}  // namespace cl3an::layers
