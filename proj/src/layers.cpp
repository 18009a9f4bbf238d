#include "cl3an/layers.hpp"

#include <stdexcept>

namespace cl3an::layers {

using namespace cl3an::ad;

namespace {

std::vector<Index> row_range(Index begin, Index count) {
  std::vector<Index> r(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) r[i] = begin + i;
  return r;
}

}  // namespace

Var gcn_aggregate(const Var& h, const Graph& graph, const Var& w, Aggregator aggregator) {
  const CsrMatrix& a =
      aggregator == Aggregator::kNormalized ? graph.norm_adjacency() : graph.mean_adjacency();
  return relu(sparse_dense_matmul(a, matmul(h, w)));
}

Var attention_from_projected(const Var& projected, const Graph& graph, const Var& a, double slope) {
  const Index d = projected.cols();
  if (a.rows() != 2 * d || a.cols() != 1) {
    throw ShapeError("attention vector " + shape_string(a.value()) + " for projected width " +
                     std::to_string(d) + " (expected " + shape_string(2 * d, 1) + ")");
  }
  // a^T [p_v || p_u] = s_left(v) + s_right(u), both computed once per node
  const Var s_left = matmul(projected, gather_rows(a, row_range(0, d)));
  const Var s_right = matmul(projected, gather_rows(a, row_range(d, d)));
  const Var logits = leaky_relu(
      add(gather_rows(s_left, graph.neighborhood_rows()), gather_rows(s_right, graph.neighborhood_cols())),
      slope);
  return masked_neighbor_softmax(logits, graph.neighborhoods());
}

Var gat_coefficients(const Var& h, const Graph& graph, const Var& w, const Var& a, double slope) {
  return attention_from_projected(matmul(h, w), graph, a, slope);
}

Var attend(const Var& alpha, const Var& projected, const Graph& graph) {
  return segment_weighted_sum(alpha, projected, graph.neighborhoods());
}

UpdateResult combined_update(const Var& h, const Graph& graph, const Var& w, const Var& a,
                             UpdateMode mode) {
  require_shape(h.cols() == w.rows(), "combined_update", h.value(), w.value());
  UpdateResult out;
  const Var hw = matmul(h, w);
  const bool structural = mode != UpdateMode::kGatOnly;
  // the attention coefficients are always produced: later blocks consume them
  out.alpha = attention_from_projected(hw, graph, a);
  if (structural) {
    const CsrMatrix& adj =
        mode == UpdateMode::kSageOnly ? graph.mean_adjacency() : graph.norm_adjacency();
    out.structural = relu(sparse_dense_matmul(adj, hw));
  }
  if (mode == UpdateMode::kCombined || mode == UpdateMode::kGatOnly) {
    out.semantic = attend(out.alpha, hw, graph);
  }
  if (mode == UpdateMode::kCombined) {
    out.h = relu(add(out.structural, out.semantic));
  } else if (mode == UpdateMode::kGatOnly) {
    out.h = relu(out.semantic);
  } else {
    out.h = out.structural;
  }
  return out;
}

Var edge_update(const Var& e, const Var& beta, const Var& we) {
  if (beta.cols() != 1 || beta.rows() != e.rows()) {
    throw ShapeError("edge_update: beta " + shape_string(beta.value()) + " for edges " +
                     shape_string(e.value()));
  }
  return mul_rows(matmul(e, we), beta);
}

Var edge_scores(const Var& e, const Var& b) { return sigmoid(matmul(e, b)); }

Var initial_edge_projection(const Var& x, const Graph& graph, const Var& we) {
  const Var p = matmul(x, we);
  return scale(add(gather_rows(p, graph.edge_source()), gather_rows(p, graph.edge_target())), 0.5);
}

Var initial_edge_scores(const Var& x, const Graph& graph, const Var& b) {
  const Var s = matmul(x, b);
  return sigmoid(
      scale(add(gather_rows(s, graph.edge_source()), gather_rows(s, graph.edge_target())), 0.5));
}

Var edge_alpha(const Var& alpha, const Graph& graph) {
  return gather_rows(alpha, graph.edge_csr_position());
}

Var feature_extraction_output(const std::vector<Var>& alphas, const std::vector<Var>& edge_states,
                              const Graph& graph) {
  if (alphas.size() != edge_states.size() || alphas.empty()) {
    throw std::invalid_argument("feature_extraction_output: " + std::to_string(alphas.size()) +
                                " attention layers vs " + std::to_string(edge_states.size()) +
                                " edge layers");
  }
  Var total;
  for (std::size_t l = 0; l < alphas.size(); ++l) {
    const Var term = mul_rows(edge_states[l], edge_alpha(alphas[l], graph));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

ExtractionResult extract_features(const Var& x, const Graph& graph,
                                  const std::vector<LayerVars>& layers, UpdateMode mode,
                                  double dropout_p, Rng* rng) {
  if (layers.empty()) throw std::invalid_argument("extract_features: no layers");
  if (dropout_p > 0.0 && rng == nullptr) throw std::invalid_argument("dropout needs an rng");
  ExtractionResult out;
  Var h = x;
  Var e;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerVars& p = layers[l];
    const UpdateResult u = combined_update(h, graph, p.weight, p.attention, mode);
    Var e_next;
    if (l == 0) {
      e_next = mul_rows(initial_edge_projection(x, graph, p.edge_weight),
                        initial_edge_scores(x, graph, p.edge_score));
    } else {
      e_next = edge_update(e, edge_scores(e, p.edge_score), p.edge_weight);
    }
    if (dropout_p > 0.0) e_next = dropout(e_next, dropout_p, *rng);
    out.alphas.push_back(u.alpha);
    out.edge_states.push_back(e_next);
    h = dropout_p > 0.0 ? dropout(u.h, dropout_p, *rng) : u.h;
    e = e_next;
  }
  out.nodes = h;
  out.fused_edges = feature_extraction_output(out.alphas, out.edge_states, graph);
  return out;
}

}  // namespace cl3an::layers
