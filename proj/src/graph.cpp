#include "cl3an/graph.hpp"

#include "cl3an/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace cl3an {

Graph Graph::build(const std::vector<std::pair<Index, Index>>& edge_list, Tensor features,
                   std::vector<int> labels, int num_classes) {
  const Index n = static_cast<Index>(labels.size());
  if (features.rows() != n) {
    throw DataError("feature rows (" + std::to_string(features.rows()) +
                    ") != label count (" + std::to_string(n) + ")");
  }
  for (Index r = 0; r < features.rows(); ++r) {
    if (!features.row(r).allFinite()) {
      throw DataError("non-finite feature in row " + std::to_string(r));
    }
  }
  int max_label = -1;
  for (Index i = 0; i < n; ++i) {
    if (labels[i] < 0) throw DataError("negative label at node " + std::to_string(i));
    max_label = std::max(max_label, labels[i]);
  }
  if (num_classes < 0) num_classes = max_label + 1;
  std::vector<Index> per_class(static_cast<std::size_t>(num_classes), 0);
  for (Index i = 0; i < n; ++i) {
    if (labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at node " + std::to_string(i) +
                      " >= num_classes " + std::to_string(num_classes));
    }
    ++per_class[labels[i]];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (per_class[c] == 0) throw DataError("class " + std::to_string(c) + " has no nodes");
  }

  std::set<Edge> canonical;
  for (const auto& [a, b] : edge_list) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw DataError("edge (" + std::to_string(a) + "," + std::to_string(b) +
                      ") has an endpoint outside [0," + std::to_string(n) + ")");
    }
    if (a == b) continue;  // self-loops are added uniformly below
    canonical.insert(Edge{std::min(a, b), std::max(a, b)});
  }

  Graph g;
  g.num_classes_ = num_classes;
  g.edges_.assign(canonical.begin(), canonical.end());
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);

  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n));
  for (const Edge& e : g.edges_) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  g.degrees_.resize(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v) {
    adj[v].push_back(v);
    std::sort(adj[v].begin(), adj[v].end());
    g.degrees_[v] = static_cast<Index>(adj[v].size());
  }

  CsrMatrix& a_hat = g.norm_adjacency_;
  CsrMatrix& a_mean = g.mean_adjacency_;
  a_hat.rows = a_hat.cols = a_mean.rows = a_mean.cols = n;
  a_hat.offsets.assign(1, 0);
  g.neighborhood_rows_.clear();
  for (Index v = 0; v < n; ++v) {
    for (Index u : adj[v]) {
      a_hat.columns.push_back(u);
      a_hat.values.push_back(1.0 / std::sqrt(static_cast<double>(g.degrees_[v]) *
                                             static_cast<double>(g.degrees_[u])));
      a_mean.values.push_back(1.0 / static_cast<double>(g.degrees_[v]));
      g.neighborhood_rows_.push_back(v);
    }
    a_hat.offsets.push_back(static_cast<Index>(a_hat.columns.size()));
  }
  a_mean.offsets = a_hat.offsets;
  a_mean.columns = a_hat.columns;
  g.neighborhoods_.offsets = a_hat.offsets;
  g.neighborhoods_.source = a_hat.columns;

  g.out_edges_.offsets.assign(1, 0);
  for (Index v = 0; v < n; ++v) {
    for (Index k = a_hat.offsets[v]; k < a_hat.offsets[v + 1]; ++k) {
      const Index u = a_hat.columns[k];
      if (u == v) continue;
      const Index id = static_cast<Index>(g.edge_source_.size());
      g.edge_source_.push_back(v);
      g.edge_target_.push_back(u);
      g.edge_csr_position_.push_back(k);
      g.edge_norm_.push_back(a_hat.values[k]);
      g.out_edges_.source.push_back(id);
    }
    g.out_edges_.offsets.push_back(static_cast<Index>(g.edge_source_.size()));
  }
  return g;
}

double heterophily_ratio(const Graph& graph) {
  if (graph.num_edges() == 0) throw DataError("undefined HR: graph has no edges");
  std::size_t cross = 0;
  for (const Edge& e : graph.edges()) {
    if (graph.labels()[e.u] != graph.labels()[e.v]) ++cross;
  }
  return static_cast<double>(cross) / static_cast<double>(graph.num_edges());
}

ClassStats class_stats(const Graph& graph, const std::vector<Index>& node_subset) {
  if (node_subset.empty()) throw std::invalid_argument("class_stats: empty node subset");
  ClassStats s;
  s.counts.assign(static_cast<std::size_t>(graph.num_classes()), 0);
  for (Index v : node_subset) ++s.counts[graph.labels().at(static_cast<std::size_t>(v))];
  const double total = static_cast<double>(node_subset.size());
  Index lo = 0;
  Index hi = 0;
  for (int c = 0; c < graph.num_classes(); ++c) {
    s.proportions.push_back(static_cast<double>(s.counts[c]) / total);
    if (s.counts[c] == 0) {
      s.absent_classes.push_back(c);
      continue;
    }
    lo = lo == 0 ? s.counts[c] : std::min(lo, s.counts[c]);
    hi = std::max(hi, s.counts[c]);
  }
  s.lambda_ratio = static_cast<double>(hi) / static_cast<double>(lo);
  s.rho = static_cast<double>(lo) / static_cast<double>(hi);
  return s;
}

namespace {

std::vector<std::vector<Index>> nodes_by_class(const Graph& graph) {
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(graph.num_classes()));
  for (Index v = 0; v < graph.num_nodes(); ++v) by_class[graph.labels()[v]].push_back(v);
  return by_class;
}

Index rounded(double x) { return static_cast<Index>(std::llround(x)); }

}  // namespace

SplitAssignment make_split(const Graph& graph, SplitFractions fractions, std::uint64_t seed) {
  if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 ||
      fractions.train + fractions.val + fractions.test > 1.0 + 1e-12) {
    throw std::invalid_argument("split fractions must be nonnegative and sum to <= 1");
  }
  SplitAssignment split;
  split.seed = seed;
  split.fractions = fractions;
  Rng rng(derive_seed(seed, 0x5e117));
  auto by_class = nodes_by_class(graph);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    std::vector<Index>& nodes = by_class[c];
    rng.shuffle(nodes);
    const Index n = static_cast<Index>(nodes.size());
    if (n < 3) {
      split.warnings.push_back("class " + std::to_string(c) + " has " + std::to_string(n) +
                               " nodes; assigned whole to train");
      split.train.insert(split.train.end(), nodes.begin(), nodes.end());
      continue;
    }
    const Index n_train = std::min(n, rounded(fractions.train * static_cast<double>(n)));
    const Index n_val = std::min(n - n_train, rounded(fractions.val * static_cast<double>(n)));
    const Index n_test =
        std::min(n - n_train - n_val, rounded(fractions.test * static_cast<double>(n)));
    auto it = nodes.begin();
    split.train.insert(split.train.end(), it, it + n_train);
    it += n_train;
    split.val.insert(split.val.end(), it, it + n_val);
    it += n_val;
    split.test.insert(split.test.end(), it, it + n_test);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<int> default_minority_classes(const Graph& graph) {
  std::vector<Index> counts(static_cast<std::size_t>(graph.num_classes()), 0);
  for (int y : graph.labels()) ++counts[y];
  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] < counts[b]; });
  const std::size_t k = std::min<std::size_t>(3, order.empty() ? 0 : order.size() - 1);
  std::vector<int> minority(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(minority.begin(), minority.end());
  return minority;
}

SplitAssignment apply_imbalance(const SplitAssignment& split, const Graph& graph,
                                const ImbalanceSpec& spec) {
  if (!(spec.rho > 0.0 && spec.rho <= 1.0)) {
    throw std::invalid_argument("imbalance rho must lie in (0, 1]");
  }
  std::vector<int> minority =
      spec.minority_classes.empty() ? default_minority_classes(graph) : spec.minority_classes;
  if (static_cast<int>(minority.size()) >= graph.num_classes()) {
    throw std::invalid_argument("at least one class must remain a majority class");
  }
  const int c_count = graph.num_classes();
  std::vector<bool> is_minority(static_cast<std::size_t>(c_count), false);
  for (int c : minority) {
    if (c < 0 || c >= c_count) {
      throw std::invalid_argument("minority class " + std::to_string(c) + " outside [0," +
                                  std::to_string(c_count) + ")");
    }
    is_minority[c] = true;
  }
  SplitAssignment out = split;
  if (spec.rho == 1.0) return out;

  std::vector<std::vector<Index>> train_by_class(static_cast<std::size_t>(c_count));
  for (Index v : split.train) train_by_class[graph.labels()[v]].push_back(v);

  Index majority_max = 0;
  for (int c = 0; c < c_count; ++c) {
    if (!is_minority[c]) majority_max = std::max(majority_max, static_cast<Index>(train_by_class[c].size()));
  }
  // the small epsilon keeps exact products such as 0.2 * 100 from rounding up
  Index target = static_cast<Index>(std::ceil(spec.rho * static_cast<double>(majority_max) - 1e-9));
  if (target < 1) {
    out.warnings.push_back("imbalance target count below 1; clamped to 1");
    target = 1;
  }

  Rng rng(derive_seed(spec.seed, 0x1ba1ULL));
  out.train.clear();
  for (int c = 0; c < c_count; ++c) {
    std::vector<Index>& nodes = train_by_class[c];
    if (is_minority[c]) {
      if (nodes.empty()) {
        throw std::invalid_argument("minority class " + std::to_string(c) +
                                    " has no training nodes");
      }
      if (static_cast<Index>(nodes.size()) > target) {
        rng.shuffle(nodes);
        nodes.resize(static_cast<std::size_t>(target));
      }
    }
    out.train.insert(out.train.end(), nodes.begin(), nodes.end());
  }
  std::sort(out.train.begin(), out.train.end());
  return out;
}

}  // namespace cl3an
