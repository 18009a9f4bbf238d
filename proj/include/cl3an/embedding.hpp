#pragma once

// Embedding layer: affine projections of the node and edge tracks, K-head
// attention refinement of the nodes, a ReLU output transform, and the
// edge-to-node combination.

#include "cl3an/autodiff.hpp"
#include "cl3an/graph.hpp"

#include <vector>

namespace cl3an::embedding {

using ad::Var;

struct Embeddings {
  Var nodes;  // [N x D']
  Var edges;  // [2|E| x D'], directed edge order
};

struct HeadVars {
  Var weight;     // [D' x D_head]
  Var attention;  // [2 D_head x 1]
};

/// z_v = h_v W0 + b0, z_vu = e_vu We + be. No activation.
Embeddings initial_projection(const Var& h, const Var& e, const Var& w0, const Var& b0,
                              const Var& we, const Var& be);

/// Concatenation over heads of ReLU(sum_u alpha^(k)_vu z_u W^(k)). The
/// concatenated width must equal `width`.
Var multi_head_refine(const Var& z, const Graph& graph, const std::vector<HeadVars>& heads,
                      Index width);

/// ReLU(z W1 + b1).
Var final_transform(const Var& z, const Var& w1, const Var& b1);

/// z_v + mean of the outgoing directed edge embeddings of v (0 for an
/// isolated node).
Var embed_combine(const Var& z_nodes, const Var& z_edges, const Graph& graph);

struct EmbeddingVars {
  Var w0, b0, we, be, w1, b1;
  std::vector<HeadVars> heads;
};

struct EmbeddingResult {
  Var combined;  // E_l, node-indexed
  Var edges;     // projected edge embeddings
};

/// Full layer: projection, head refinement, transform, combination.
EmbeddingResult embed(const Var& h, const Var& fused_edges, const Graph& graph,
                      const EmbeddingVars& vars, Index width, double dropout, Rng* rng);

}  // namespace cl3an::embedding
