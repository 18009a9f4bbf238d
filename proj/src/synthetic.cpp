#include "cl3an/synthetic.hpp"

#include "cl3an/errors.hpp"

namespace cl3an {

Graph generate_sbm(const SbmSpec& spec) {
  if (spec.class_sizes.size() < 2) throw ConfigError("SBM needs at least two classes");
  if (spec.feature_dim <= 0) throw ConfigError("SBM feature_dim must be positive");
  for (double p : {spec.p_intra, spec.p_inter}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("SBM edge probabilities must lie in [0,1]");
  }
  std::vector<int> labels;
  for (std::size_t c = 0; c < spec.class_sizes.size(); ++c) {
    if (spec.class_sizes[c] <= 0) throw ConfigError("SBM class sizes must be positive");
    labels.insert(labels.end(), static_cast<std::size_t>(spec.class_sizes[c]), static_cast<int>(c));
  }
  const Index n = static_cast<Index>(labels.size());
  const int c_count = static_cast<int>(spec.class_sizes.size());

  Rng mean_rng(derive_seed(spec.seed, 1));
  Tensor means(c_count, spec.feature_dim);
  for (Index i = 0; i < means.size(); ++i) means.data()[i] = spec.mean_scale * mean_rng.normal();

  Rng feat_rng(derive_seed(spec.seed, 2));
  Tensor x(n, spec.feature_dim);
  for (Index v = 0; v < n; ++v) {
    for (Index j = 0; j < spec.feature_dim; ++j) {
      x(v, j) = means(labels[v], j) + spec.noise * feat_rng.normal();
    }
  }

  Rng edge_rng(derive_seed(spec.seed, 3));
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < n; ++u) {
    for (Index v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? spec.p_intra : spec.p_inter;
      if (edge_rng.bernoulli(p)) edges.emplace_back(u, v);
    }
  }
  return Graph::build(edges, std::move(x), std::move(labels), c_count);
}

}  // namespace cl3an
