#include "cl3an/embedding.hpp"

#include "cl3an/layers.hpp"

#include <stdexcept>

namespace cl3an::embedding {

using namespace cl3an::ad;

Embeddings initial_projection(const Var& h, const Var& e, const Var& w0, const Var& b0,
                              const Var& we, const Var& be) {
  return {add_row(matmul(h, w0), b0), add_row(matmul(e, we), be)};
}

Var multi_head_refine(const Var& z, const Graph& graph, const std::vector<HeadVars>& heads,
                      Index width) {
  if (heads.empty()) throw std::invalid_argument("multi_head_refine: no heads");
  Index total = 0;
  for (const HeadVars& hv : heads) total += hv.weight.cols();
  if (total != width) {
    throw std::invalid_argument("multi_head_refine: " + std::to_string(heads.size()) +
                                " heads give width " + std::to_string(total) + ", configured " +
                                std::to_string(width));
  }
  std::vector<Var> parts;
  parts.reserve(heads.size());
  for (const HeadVars& hv : heads) {
    const Var p = matmul(z, hv.weight);
    const Var alpha = layers::attention_from_projected(p, graph, hv.attention);
    parts.push_back(relu(layers::attend(alpha, p, graph)));
  }
  return parts.size() == 1 ? parts.front() : concat_columns(parts);
}

Var final_transform(const Var& z, const Var& w1, const Var& b1) {
  return relu(add_row(matmul(z, w1), b1));
}

Var embed_combine(const Var& z_nodes, const Var& z_edges, const Graph& graph) {
  if (z_nodes.cols() != z_edges.cols() || z_edges.rows() != graph.num_directed_edges()) {
    throw ShapeError("embed_combine: nodes " + shape_string(z_nodes.value()) + " vs edges " +
                     shape_string(z_edges.value()));
  }
  const Segments& out = graph.out_edges();
  Tensor w(out.num_entries(), 1);
  for (Index v = 0; v < out.num_groups(); ++v) {
    for (Index k = out.offsets[v]; k < out.offsets[v + 1]; ++k) {
      w(k, 0) = 1.0 / static_cast<double>(out.size(v));
    }
  }
  const Var mean_edges = segment_weighted_sum(z_nodes.tape()->constant(std::move(w)), z_edges, out);
  return add(z_nodes, mean_edges);
}

EmbeddingResult embed(const Var& h, const Var& fused_edges, const Graph& graph,
                      const EmbeddingVars& vars, Index width, double dropout_p, Rng* rng) {
  const Embeddings z = initial_projection(h, fused_edges, vars.w0, vars.b0, vars.we, vars.be);
  const Var refined = multi_head_refine(z.nodes, graph, vars.heads, width);
  const Var nodes = final_transform(refined, vars.w1, vars.b1);
  Var combined = embed_combine(nodes, z.edges, graph);
  if (dropout_p > 0.0) combined = dropout(combined, dropout_p, *rng);
  return {combined, z.edges};
}

}  // namespace cl3an::embedding
