#pragma once

#include "cl3an/sparse.hpp"
#include "cl3an/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cl3an {

/// Undirected edge in canonical form (u < v).
struct Edge {
  Index u = 0;
  Index v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Immutable attributed graph. Construction canonicalises edges, adds
/// self-loops for normalisation and freezes every derived structure.
///
/// Two edge enumerations are exposed:
///  - the neighbourhood CSR, one row per node covering N(v) and v itself,
///    used by attention softmaxes and by the normalised adjacency;
///  - directed edge instances, each stored edge once per direction and sorted
///    by (source, target), used to index edge features.
class Graph {
 public:
  /// Validates input and builds every derived structure. `num_classes` of
  /// -1 infers C = max label + 1.
  static Graph build(const std::vector<std::pair<Index, Index>>& edge_list, Tensor features,
                     std::vector<int> labels, int num_classes = -1);

  Index num_nodes() const { return static_cast<Index>(labels_.size()); }
  int num_classes() const { return num_classes_; }
  Index feature_dim() const { return features_.cols(); }
  Index num_edges() const { return static_cast<Index>(edges_.size()); }
  Index num_directed_edges() const { return static_cast<Index>(edge_source_.size()); }

  const std::vector<Edge>& edges() const { return edges_; }
  const Tensor& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  /// Degree including the added self-loop.
  const std::vector<Index>& degrees() const { return degrees_; }

  /// Symmetric normalisation with self-loops: 1/sqrt(d_u d_v).
  const CsrMatrix& norm_adjacency() const { return norm_adjacency_; }
  /// Row-normalised neighbourhood mean (1/d_v), used by the SAGE-style
  /// aggregator.
  const CsrMatrix& mean_adjacency() const { return mean_adjacency_; }

  /// Groups = nodes, entries = neighbourhood CSR positions, source = the
  /// neighbour u for each entry.
  const Segments& neighborhoods() const { return neighborhoods_; }
  /// Owning node v of each neighbourhood CSR entry.
  const std::vector<Index>& neighborhood_rows() const { return neighborhood_rows_; }
  const std::vector<Index>& neighborhood_cols() const { return neighborhoods_.source; }

  const std::vector<Index>& edge_source() const { return edge_source_; }
  const std::vector<Index>& edge_target() const { return edge_target_; }
  /// Groups = nodes, entries = outgoing directed edges of that node,
  /// source = directed edge id.
  const Segments& out_edges() const { return out_edges_; }
  /// Neighbourhood CSR position of each directed edge (source, target).
  const std::vector<Index>& edge_csr_position() const { return edge_csr_position_; }
  /// 1/sqrt(d_source d_target) per directed edge.
  const std::vector<double>& edge_norm() const { return edge_norm_; }

 private:
  Graph() = default;

  int num_classes_ = 0;
  std::vector<Edge> edges_;
  Tensor features_;
  std::vector<int> labels_;
  std::vector<Index> degrees_;
  CsrMatrix norm_adjacency_;
  CsrMatrix mean_adjacency_;
  Segments neighborhoods_;
  std::vector<Index> neighborhood_rows_;
  std::vector<Index> edge_source_;
  std::vector<Index> edge_target_;
  Segments out_edges_;
  std::vector<Index> edge_csr_position_;
  std::vector<double> edge_norm_;
};

/// Fraction of stored edges whose endpoints carry different labels.
double heterophily_ratio(const Graph& graph);

struct ClassStats {
  std::vector<Index> counts;
  std::vector<double> proportions;
  /// max_c N_c / min_c N_c over classes present in the subset.
  double lambda_ratio = 1.0;
  /// min/max, in (0, 1].
  double rho = 1.0;
  std::vector<int> absent_classes;
};

ClassStats class_stats(const Graph& graph, const std::vector<Index>& node_subset);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  friend bool operator==(const SplitFractions&, const SplitFractions&) = default;
};

struct SplitAssignment {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;
  std::uint64_t seed = 0;
  SplitFractions fractions;
  std::vector<std::string> warnings;
};

/// Stratified split, deterministic in `seed`. Classes with fewer than three
/// nodes go entirely to train (with a warning).
SplitAssignment make_split(const Graph& graph, SplitFractions fractions, std::uint64_t seed);

struct ImbalanceSpec {
  double rho = 1.0;
  /// Empty selects the (up to) three classes with the smallest natural counts.
  std::vector<int> minority_classes;
  std::uint64_t seed = 0;
  friend bool operator==(const ImbalanceSpec&, const ImbalanceSpec&) = default;
};

/// Classes chosen when ImbalanceSpec::minority_classes is empty.
std::vector<int> default_minority_classes(const Graph& graph);

/// Downsamples the training nodes of each minority class to
/// ceil(rho * largest majority-class train count). Val/test are untouched.
SplitAssignment apply_imbalance(const SplitAssignment& split, const Graph& graph,
                                const ImbalanceSpec& spec);

}  // namespace cl3an
