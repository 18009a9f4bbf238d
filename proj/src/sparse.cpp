#include "cl3an/sparse.hpp"

#include <algorithm>

namespace cl3an {

double CsrMatrix::at(Index r, Index c) const {
  auto first = columns.begin() + offsets[r];
  auto last = columns.begin() + offsets[r + 1];
  auto it = std::lower_bound(first, last, c);
  if (it == last || *it != c) return 0.0;
  return values[static_cast<std::size_t>(it - columns.begin())];
}

Tensor CsrMatrix::to_dense() const {
  Tensor dense = Tensor::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index k = offsets[r]; k < offsets[r + 1]; ++k) dense(r, columns[k]) = values[k];
  }
  return dense;
}

CsrMatrix CsrMatrix::identity(Index n) {
  CsrMatrix m;
  m.rows = m.cols = n;
  m.offsets.resize(static_cast<std::size_t>(n) + 1);
  for (Index i = 0; i <= n; ++i) m.offsets[i] = i;
  m.columns.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) m.columns[i] = i;
  m.values.assign(static_cast<std::size_t>(n), 1.0);
  return m;
}

}  // namespace cl3an
