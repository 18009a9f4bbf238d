#include "cl3an/stages.hpp"

#include "cl3an/layers.hpp"

#include <stdexcept>

namespace cl3an::stages {

using namespace cl3an::ad;

namespace {

Var by_source(const Var& node_level, const Graph& graph) {
  return gather_rows(node_level, graph.edge_source());
}

Var pool_out_edges(const Var& weights, const Var& edges, const Graph& graph) {
  return segment_weighted_sum(weights, edges, graph.out_edges());
}

void require_vector(const Var& v, Index rows, const char* what) {
  if (v.rows() != rows || v.cols() != 1) {
    throw ShapeError(std::string(what) + ": scoring vector " + shape_string(v.value()) +
                     " for width " + std::to_string(rows));
  }
}

}  // namespace

Var node_pairwise_from_logits(const Var& logits, const Graph& graph) {
  return masked_neighbor_softmax(gather_rows(logits, graph.neighborhood_cols()),
                                 graph.neighborhoods());
}

Var edge_pairwise_from_logits(const Var& logits, const Graph& graph) {
  return masked_neighbor_softmax(logits, graph.out_edges(), true);
}

Var edge_gcn_view(const Var& edges, const Graph& graph, const Var& we) {
  Tensor c(graph.num_directed_edges(), 1);
  for (Index e = 0; e < c.rows(); ++e) c(e, 0) = graph.edge_norm()[e];
  const Var pooled = pool_out_edges(edges.tape()->constant(std::move(c)), matmul(edges, we), graph);
  return by_source(relu(pooled), graph);
}

Var edge_gat_view(const Var& edges, const Graph& graph, const Var& we, const Var& attention) {
  const Var p = matmul(edges, we);
  require_vector(attention, p.cols(), "edge_gat_view");
  const Var beta = edge_pairwise_from_logits(
      leaky_relu(matmul(p, attention), layers::kAttentionSlope), graph);
  return by_source(relu(pool_out_edges(beta, p, graph)), graph);
}

Views engage_views(const Var& nodes, const Var& edges, const Graph& graph, const ViewVars& vars) {
  Views v;
  v.h_gcn = layers::gcn_aggregate(nodes, graph, vars.node_gcn);
  const Var p = matmul(nodes, vars.node_gat);
  v.h_gat = relu(layers::attend(layers::attention_from_projected(p, graph, vars.node_attention), p,
                                graph));
  v.e_gcn = edge_gcn_view(edges, graph, vars.edge_gcn);
  v.e_gat = edge_gat_view(edges, graph, vars.edge_gat, vars.edge_attention);
  return v;
}

EngageResult engage(const Views& views, const Graph& graph, const Var& a1, const Var& b1) {
  if (views.h_gcn.rows() != views.h_gat.rows() || views.e_gcn.rows() != views.e_gat.rows()) {
    throw ShapeError("engage: view row counts differ");
  }
  EngageResult r;
  r.nodes = concat_columns(views.h_gcn, views.h_gat);
  r.edges = concat_columns(views.e_gcn, views.e_gat);
  require_vector(a1, r.nodes.cols(), "engage");
  require_vector(b1, r.edges.cols(), "engage");
  const Var node_logits = matmul(r.nodes, a1);
  const Var edge_logits = matmul(r.edges, b1);
  r.scores.node_scores = sigmoid(node_logits);
  r.scores.edge_scores = sigmoid(edge_logits);
  r.scores.node_pairwise = node_pairwise_from_logits(node_logits, graph);
  r.scores.edge_pairwise = edge_pairwise_from_logits(edge_logits, graph);
  return r;
}

StageScores enact(const Var& nodes, const Var& edges, const StageScores& previous,
                  const Graph& graph, const Var& a2, const Var& b2) {
  const Var node_context = layers::attend(previous.node_pairwise, nodes, graph);
  const Var edge_context = by_source(pool_out_edges(previous.edge_pairwise, edges, graph), graph);
  const Var node_in = concat_columns(nodes, node_context);
  const Var edge_in = concat_columns(edges, edge_context);
  require_vector(a2, node_in.cols(), "enact");
  require_vector(b2, edge_in.cols(), "enact");
  const Var node_logits = matmul(node_in, a2);
  const Var edge_logits = matmul(edge_in, b2);
  StageScores s;
  s.node_scores = sigmoid(node_logits);
  s.edge_scores = sigmoid(edge_logits);
  s.node_pairwise = node_pairwise_from_logits(node_logits, graph);
  s.edge_pairwise = edge_pairwise_from_logits(edge_logits, graph);
  return s;
}

Consolidated embed_consolidate(const Var& nodes, const Var& edges, const Var& node_pairwise,
                               const Var& edge_pairwise, const Graph& graph, const Var& we,
                               const Var& we_edges) {
  Consolidated c;
  c.nodes = layers::attend(node_pairwise, matmul(nodes, we), graph);
  c.edges = by_source(pool_out_edges(edge_pairwise, matmul(edges, we_edges), graph), graph);
  return c;
}

Var stage_scores(const Var& h, int stage, const Var& w_att, const Var& b_att) {
  if (stage < 1 || stage > 3) {
    throw std::out_of_range("stage index " + std::to_string(stage) + " outside {1,2,3}");
  }
  return sigmoid(add_row(matmul(h, w_att), b_att));
}

}  // namespace cl3an::stages
