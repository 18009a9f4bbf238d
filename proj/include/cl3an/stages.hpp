#pragma once

// Engage / Enact / Embed attention stages.
//
// Two kinds of attention quantity flow through the stages:
//  - scalar scores: sigmoid of a scoring vector applied to one embedding,
//    strictly in (0,1), one per node or per directed edge;
//  - pairwise coefficients: softmax of the same score logits over N(v) and v
//    (nodes) or over the outgoing edges of v (edges). These weight
//    aggregation and always sum to 1 per group.

#include "cl3an/autodiff.hpp"
#include "cl3an/graph.hpp"

namespace cl3an::stages {

using ad::Var;

struct ViewVars {
  Var node_gcn;        // [D' x D'/2]
  Var node_gat;        // [D' x D'/2]
  Var node_attention;  // [D' x 1], i.e. 2 * (D'/2)
  Var edge_gcn;        // [D' x D'/2]
  Var edge_gat;        // [D' x D'/2]
  Var edge_attention;  // [D'/2 x 1]
};

struct Views {
  Var h_gcn, h_gat;  // node-indexed
  Var e_gcn, e_gat;  // directed-edge indexed
};

/// Edge GCN view: ReLU(sum_w c_vw z_vw We) over the outgoing edges of v,
/// with c_vw = 1/sqrt(d_v d_w), assigned to every edge leaving v.
Var edge_gcn_view(const Var& edges, const Graph& graph, const Var& we);

/// Edge GAT view: as above with softmax weights over the outgoing edges of v
/// from logits LeakyReLU((z_vw We) . attention).
Var edge_gat_view(const Var& edges, const Graph& graph, const Var& we, const Var& attention);

Views engage_views(const Var& nodes, const Var& edges, const Graph& graph, const ViewVars& vars);

struct StageScores {
  Var node_scores;    // [N x 1] in (0,1)
  Var edge_scores;    // [M x 1] in (0,1)
  Var node_pairwise;  // [nnz x 1], neighbourhood entries
  Var edge_pairwise;  // [M x 1], grouped by source
};

struct EngageResult {
  Var nodes;  // h_gcn || h_gat
  Var edges;  // e_gcn || e_gat
  StageScores scores;
};

/// Concatenates the views and scores them with a1 (nodes) and b1 (edges).
EngageResult engage(const Views& views, const Graph& graph, const Var& a1, const Var& b1);

/// alpha_v = sigmoid(a2 . [z_v || sum_u alpha_vu z_u]) and
/// beta_vu = sigmoid(b2 . [z_vu || sum_w beta_vw z_vw]), using the previous
/// stage's pairwise coefficients.
StageScores enact(const Var& nodes, const Var& edges, const StageScores& previous,
                  const Graph& graph, const Var& a2, const Var& b2);

struct Consolidated {
  Var nodes;
  Var edges;
};

/// z_v = sum_u alpha_vu z_u We; z_vu = sum_w beta_vw z_vw We' (assigned to
/// every edge leaving v).
Consolidated embed_consolidate(const Var& nodes, const Var& edges, const Var& node_pairwise,
                               const Var& edge_pairwise, const Graph& graph, const Var& we,
                               const Var& we_edges);

/// Diagnostic per-node score sigmoid(H W_att + b_att) for stage k in {1,2,3}.
Var stage_scores(const Var& h, int stage, const Var& w_att, const Var& b_att);

/// Pairwise node coefficients from per-node logits [N x 1].
Var node_pairwise_from_logits(const Var& logits, const Graph& graph);
/// Pairwise edge coefficients from per-edge logits [M x 1].
Var edge_pairwise_from_logits(const Var& logits, const Graph& graph);

}  // namespace cl3an::stages
