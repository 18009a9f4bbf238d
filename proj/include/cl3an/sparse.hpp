#pragma once

#include "cl3an/tensor.hpp"

#include <span>
#include <vector>

namespace cl3an {

/// Compressed-sparse-row matrix. Column indices are sorted within each row.
struct CsrMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> offsets;  // rows + 1
  std::vector<Index> columns;
  std::vector<double> values;

  Index nnz() const { return static_cast<Index>(columns.size()); }
  /// Entry (r, c) or 0 when not stored.
  double at(Index r, Index c) const;
  Tensor to_dense() const;
  static CsrMatrix identity(Index n);
};

/// Contiguous groups of entries: group g covers [offsets[g], offsets[g+1]).
/// `source[k]` names the row of the gathered operand used by entry k.
struct Segments {
  std::vector<Index> offsets;
  std::vector<Index> source;

  Index num_groups() const { return static_cast<Index>(offsets.size()) - 1; }
  Index num_entries() const { return static_cast<Index>(source.size()); }
  Index size(Index g) const { return offsets[g + 1] - offsets[g]; }
};

}  // namespace cl3an
