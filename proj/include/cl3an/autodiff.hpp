#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation whose inputs require gradients, in execution
// order. Var is a lightweight handle (tape pointer + record index). Sparse
// operands (CsrMatrix, Segments) are captured by pointer and must outlive the
// tape's backward pass.

#include "cl3an/sparse.hpp"
#include "cl3an/tensor.hpp"

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <deque>
#include <vector>

namespace cl3an::ad {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  /// Gradient after Tape::backward; zeros when this record was not reached.
  const Tensor& grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn =
      std::function<void(Tape&, const Tensor& out_value, const Tensor& grad_out)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  /// Records an op result. The backward closure is kept only when some
  /// parent requires gradients.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(backward));
  }

  /// Adds `g` into the gradient of `v` (no-op when v does not require grad).
  void accumulate(const Var& v, const Tensor& g);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every record once.
  void backward(const Var& loss);

  /// Clears all records; outstanding Vars become invalid.
  void reset();

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  /// When on, a non-finite result computed from finite inputs throws.
  void set_check_finite(bool on) { check_finite_ = on; }

  const Tensor& value(std::size_t id) const { return records_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }

 private:
  struct Record {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_touched = false;
    BackwardFn backward;
  };

  // deque keeps value() references valid while later ops append.
  std::deque<Record> records_;
  bool consumed_ = false;
  bool check_finite_;
  mutable Tensor empty_grad_;
};

// ---- forward ops --------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
/// a [N x D] + row vector b [1 x D] broadcast over rows.
Var add_row(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Elementwise product of equal-shaped operands.
Var hadamard(const Var& a, const Var& b);
/// Each row i of a [M x D] multiplied by s(i) where s is [M x 1].
Var mul_rows(const Var& a, const Var& s);
Var sparse_dense_matmul(const CsrMatrix& sparse, const Var& dense);
Var concat_columns(const Var& a, const Var& b);
Var concat_columns(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::vector<Index> rows);

Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
/// Inverted dropout. Identity when p == 0.
Var dropout(const Var& a, double p, Rng& rng);

Var row_softmax(const Var& a);
/// Softmax of logits [M x 1] within each group of `groups`. Groups must be
/// nonempty unless `allow_empty` is set (empty groups then produce nothing).
Var masked_neighbor_softmax(const Var& logits, const Segments& groups, bool allow_empty = false);
/// out[g] = sum over entries k of group g of weights(k) * values[source[k]].
Var segment_weighted_sum(const Var& weights, const Var& values, const Segments& groups);

Var mean_rows(const Var& a);
Var sum_all(const Var& a);
/// sum_ij w_ij a_ij for a constant weight tensor of the same shape.
Var weighted_sum(const Var& a, const Tensor& weights);

/// Weighted mean over `rows` of -log p[row, label[row]].
/// `weights` is either empty (all ones) or aligned with `rows`.
Var cross_entropy(const Var& probs, std::span<const int> labels, std::span<const Index> rows,
                  std::span<const double> weights = {});
/// Shannon entropy (nats) of each row: [N x 1].
Var row_entropy(const Var& probs);
/// KL(p || q) in nats for a distribution p [1 x C] against constant q.
Var kl_divergence(const Var& p, const Tensor& q);

// ---- gradient oracle ----------------------------------------------------

struct GradReport {
  std::vector<double> max_rel_error;  // one entry per parameter tensor
  double max_error = 0.0;
  double eps = 0.0;
};

using Objective = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Relative error |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every coordinate of every parameter.
/// Parameters are perturbed in place and restored.
GradReport grad_check(const Objective& f, std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace cl3an::ad
