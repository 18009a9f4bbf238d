#include "cl3an/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace cl3an::ad {

namespace {

constexpr double kLogFloor = 1e-300;

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw std::invalid_argument("operation on an unbound Var");
  return *v.tape();
}

Tape& common_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
  return tape_of(a);
}

}  // namespace

// ---- Var / Tape ----------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value(id_); }
const Tensor& Var::grad() const { return tape_of(*this).grad(id_); }
bool Var::requires_grad() const { return tape_of(*this).requires_grad(id_); }

Tape::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

Var Tape::constant(Tensor value) {
  records_.push_back(Record{std::move(value), {}, false, false, {}});
  return Var(this, records_.size() - 1);
}

Var Tape::variable(Tensor value) {
  records_.push_back(Record{std::move(value), {}, true, false, {}});
  return Var(this, records_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs_grad = false;
  bool inputs_finite = true;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("parent recorded on another tape");
    needs_grad = needs_grad || records_[p.id()].requires_grad;
    if (check_finite_) inputs_finite = inputs_finite && records_[p.id()].value.allFinite();
  }
  if (check_finite_ && inputs_finite && !value.allFinite()) {
    throw NumericError("non-finite value produced from finite inputs");
  }
  Record rec{std::move(value), {}, needs_grad, false, {}};
  if (needs_grad) rec.backward = std::move(backward);
  records_.push_back(std::move(rec));
  return Var(this, records_.size() - 1);
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Record& rec = records_[v.id()];
  if (!rec.requires_grad) return;
  if (!rec.grad_touched) {
    rec.grad = g;
    rec.grad_touched = true;
  } else {
    rec.grad += g;
  }
}

const Tensor& Tape::grad(std::size_t id) const {
  const Record& rec = records_[id];
  if (rec.grad_touched) return rec.grad;
  empty_grad_ = Tensor::Zero(rec.value.rows(), rec.value.cols());
  return empty_grad_;
}

void Tape::backward(const Var& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by a backward pass");
  if (loss.tape() != this) throw std::invalid_argument("loss is not on this tape");
  const Tensor& lv = records_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward on non-scalar " + shape_string(lv));
  }
  consumed_ = true;
  accumulate(loss, Tensor::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Record& rec = records_[i];
    if (!rec.backward || !rec.grad_touched) continue;
    // grad of record i is final once every later record has been visited;
    // backward closures only write to records with smaller ids
    rec.backward(*this, rec.value, rec.grad);
  }
}

void Tape::reset() {
  records_.clear();
  consumed_ = false;
}

// ---- linear algebra ----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a.value(), b.value());
  Tensor out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    if (a.requires_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var add_row(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_shape(b.rows() == 1 && b.cols() == a.cols(), "add_row", a.value(), b.value());
  Tensor out = a.value().rowwise() + b.value().row(0);
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accumulate(a, g);
    if (b.requires_grad()) tp.accumulate(b, g.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, {a},
                  [a, s](Tape& tp, const Tensor&, const Tensor& g) { tp.accumulate(a, g * s); });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", a.value(), b.value());
  Tensor out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor&, const Tensor& g) {
    if (a.requires_grad()) tp.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) tp.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var mul_rows(const Var& a, const Var& s) {
  Tape& t = common_tape(a, s);
  require_shape(s.cols() == 1 && s.rows() == a.rows(), "mul_rows", a.value(), s.value());
  Tensor out = a.value().array().colwise() * s.value().col(0).array();
  return t.record(std::move(out), {a, s}, [a, s](Tape& tp, const Tensor&, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga = g.array().colwise() * s.value().col(0).array();
      tp.accumulate(a, ga);
    }
    if (s.requires_grad()) {
      Tensor gs = g.cwiseProduct(a.value()).rowwise().sum();
      tp.accumulate(s, gs);
    }
  });
}

Var sparse_dense_matmul(const CsrMatrix& sparse, const Var& dense) {
  Tape& t = tape_of(dense);
  const Tensor& h = dense.value();
  if (sparse.cols != h.rows()) {
    throw ShapeError("sparse_dense_matmul: shape mismatch " +
                     shape_string(sparse.rows, sparse.cols) + " vs " + shape_string(h));
  }
  Tensor out = Tensor::Zero(sparse.rows, h.cols());
  for (Index r = 0; r < sparse.rows; ++r) {
    for (Index k = sparse.offsets[r]; k < sparse.offsets[r + 1]; ++k) {
      out.row(r) += sparse.values[k] * h.row(sparse.columns[k]);
    }
  }
  const CsrMatrix* sp = &sparse;
  return t.record(std::move(out), {dense}, [sp, dense](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor gd = Tensor::Zero(sp->cols, g.cols());
    for (Index r = 0; r < sp->rows; ++r) {
      for (Index k = sp->offsets[r]; k < sp->offsets[r + 1]; ++k) {
        gd.row(sp->columns[k]) += sp->values[k] * g.row(r);
      }
    }
    tp.accumulate(dense, gd);
  });
}

Var concat_columns(const Var& a, const Var& b) { return concat_columns(std::vector<Var>{a, b}); }

Var concat_columns(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_columns: no operands");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("operands live on different tapes");
    require_shape(p.rows() == rows, "concat_columns", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return t.record(std::move(out), std::span<const Var>(parts),
                  [parts](Tape& tp, const Tensor&, const Tensor& g) {
                    Index off = 0;
                    for (const Var& p : parts) {
                      if (p.requires_grad()) tp.accumulate(p, g.middleCols(off, p.cols()));
                      off += p.cols();
                    }
                  });
}

Var gather_rows(const Var& a, std::vector<Index> rows) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(static_cast<Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                              shape_string(av));
    }
    out.row(static_cast<Index>(i)) = av.row(rows[i]);
  }
  return t.record(std::move(out), {a},
                  [a, rows = std::move(rows)](Tape& tp, const Tensor&, const Tensor& g) {
                    Tensor ga = Tensor::Zero(a.rows(), a.cols());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      ga.row(rows[i]) += g.row(static_cast<Index>(i));
                    }
                    tp.accumulate(a, ga);
                  });
}

// ---- activations -------------------------------------------------------

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  Tape& t = tape_of(a);
  Tensor out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return t.record(std::move(out), {a}, [a, slope](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor d = a.value().unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Var sigmoid(const Var& a) {
  Tape& t = tape_of(a);
  Tensor out = a.value().unaryExpr([](double x) {
    // split by sign so exp never overflows
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& y, const Tensor& g) {
    Tensor d = y.array() * (1.0 - y.array());
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

Var dropout(const Var& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability outside [0,1)");
  if (p == 0.0) return a;
  Tape& t = tape_of(a);
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
  Tensor out = a.value().cwiseProduct(mask);
  return t.record(std::move(out), {a},
                  [a, mask = std::move(mask)](Tape& tp, const Tensor&, const Tensor& g) {
                    tp.accumulate(a, g.cwiseProduct(mask));
                  });
}

// ---- normalisation -----------------------------------------------------

Var row_softmax(const Var& a) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor& y, const Tensor& g) {
    Tensor inner = g.cwiseProduct(y).rowwise().sum();
    Tensor ga = y.array() * (g.array().colwise() - inner.col(0).array());
    tp.accumulate(a, ga);
  });
}

Var masked_neighbor_softmax(const Var& logits, const Segments& groups, bool allow_empty) {
  Tape& t = tape_of(logits);
  const Tensor& x = logits.value();
  if (x.cols() != 1 || x.rows() != groups.num_entries()) {
    throw ShapeError("masked_neighbor_softmax: logits " + shape_string(x) + " vs " +
                     shape_string(groups.num_entries(), 1) + " entries");
  }
  Tensor out(x.rows(), 1);
  for (Index g = 0; g < groups.num_groups(); ++g) {
    const Index lo = groups.offsets[g];
    const Index hi = groups.offsets[g + 1];
    if (lo == hi) {
      if (allow_empty) continue;
      throw std::invalid_argument("masked_neighbor_softmax: empty neighbour set for group " +
                                  std::to_string(g));
    }
    const double m = x.col(0).segment(lo, hi - lo).maxCoeff();
    double z = 0.0;
    for (Index k = lo; k < hi; ++k) {
      out(k, 0) = std::exp(x(k, 0) - m);
      z += out(k, 0);
    }
    for (Index k = lo; k < hi; ++k) out(k, 0) /= z;
  }
  const Segments* gp = &groups;
  return t.record(std::move(out), {logits},
                  [logits, gp](Tape& tp, const Tensor& y, const Tensor& g) {
                    Tensor gx(y.rows(), 1);
                    for (Index grp = 0; grp < gp->num_groups(); ++grp) {
                      const Index lo = gp->offsets[grp];
                      const Index hi = gp->offsets[grp + 1];
                      double inner = 0.0;
                      for (Index k = lo; k < hi; ++k) inner += y(k, 0) * g(k, 0);
                      for (Index k = lo; k < hi; ++k) gx(k, 0) = y(k, 0) * (g(k, 0) - inner);
                    }
                    tp.accumulate(logits, gx);
                  });
}

Var segment_weighted_sum(const Var& weights, const Var& values, const Segments& groups) {
  Tape& t = common_tape(weights, values);
  const Tensor& w = weights.value();
  const Tensor& v = values.value();
  if (w.cols() != 1 || w.rows() != groups.num_entries()) {
    throw ShapeError("segment_weighted_sum: weights " + shape_string(w) + " vs " +
                     shape_string(groups.num_entries(), 1) + " entries");
  }
  Tensor out = Tensor::Zero(groups.num_groups(), v.cols());
  for (Index g = 0; g < groups.num_groups(); ++g) {
    for (Index k = groups.offsets[g]; k < groups.offsets[g + 1]; ++k) {
      const Index src = groups.source[k];
      if (src < 0 || src >= v.rows()) {
        throw std::out_of_range("segment_weighted_sum: source row " + std::to_string(src) +
                                " outside " + shape_string(v));
      }
      out.row(g) += w(k, 0) * v.row(src);
    }
  }
  const Segments* gp = &groups;
  return t.record(std::move(out), {weights, values},
                  [weights, values, gp](Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& wv = weights.value();
                    const Tensor& vv = values.value();
                    const bool gw = weights.requires_grad();
                    const bool gv = values.requires_grad();
                    Tensor dw = gw ? Tensor(Tensor::Zero(wv.rows(), 1)) : Tensor();
                    Tensor dv = gv ? Tensor(Tensor::Zero(vv.rows(), vv.cols())) : Tensor();
                    for (Index grp = 0; grp < gp->num_groups(); ++grp) {
                      for (Index k = gp->offsets[grp]; k < gp->offsets[grp + 1]; ++k) {
                        const Index src = gp->source[k];
                        if (gw) dw(k, 0) = g.row(grp).dot(vv.row(src));
                        if (gv) dv.row(src) += wv(k, 0) * g.row(grp);
                      }
                    }
                    if (gw) tp.accumulate(weights, dw);
                    if (gv) tp.accumulate(values, dv);
                  });
}

// ---- reductions and losses -----------------------------------------------

Var mean_rows(const Var& a) {
  Tape& t = tape_of(a);
  if (a.rows() == 0) throw std::invalid_argument("mean_rows of an empty tensor");
  const double n = static_cast<double>(a.rows());
  Tensor out = a.value().colwise().sum() / n;
  return t.record(std::move(out), {a}, [a, n](Tape& tp, const Tensor&, const Tensor& g) {
    Tensor ga = g.replicate(a.rows(), 1) / n;
    tp.accumulate(a, ga);
  });
}

Var sum_all(const Var& a) {
  Tape& t = tape_of(a);
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [a](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accumulate(a, Tensor::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var weighted_sum(const Var& a, const Tensor& weights) {
  Tape& t = tape_of(a);
  require_shape(weights.rows() == a.rows() && weights.cols() == a.cols(), "weighted_sum",
                a.value(), weights);
  Tensor out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return t.record(std::move(out), {a}, [a, weights](Tape& tp, const Tensor&, const Tensor& g) {
    tp.accumulate(a, weights * g(0, 0));
  });
}

Var cross_entropy(const Var& probs, std::span<const int> labels, std::span<const Index> rows,
                  std::span<const double> weights) {
  Tape& t = tape_of(probs);
  const Tensor& p = probs.value();
  if (rows.empty()) throw std::invalid_argument("cross_entropy over an empty row set");
  if (!weights.empty() && weights.size() != rows.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(rows.size()) + " rows");
  }
  std::vector<Index> r(rows.begin(), rows.end());
  std::vector<int> y(r.size());
  std::vector<double> w(r.size(), 1.0);
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 0 || r[i] >= p.rows()) throw std::out_of_range("cross_entropy: row out of range");
    const int label = labels[static_cast<std::size_t>(r[i])];
    if (label < 0 || label >= p.cols()) throw std::out_of_range("cross_entropy: label out of range");
    y[i] = label;
    if (!weights.empty()) w[i] = weights[i];
  }
  const double n = static_cast<double>(r.size());
  Tensor out(1, 1);
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total -= w[i] * std::log(std::max(p(r[i], y[i]), kLogFloor));
  }
  out(0, 0) = total / n;
  return t.record(std::move(out), {probs},
                  [probs, r = std::move(r), y = std::move(y), w = std::move(w), n](
                      Tape& tp, const Tensor&, const Tensor& g) {
                    const Tensor& pv = probs.value();
                    Tensor gp = Tensor::Zero(pv.rows(), pv.cols());
                    for (std::size_t i = 0; i < r.size(); ++i) {
                      gp(r[i], y[i]) -= g(0, 0) * w[i] / (n * std::max(pv(r[i], y[i]), kLogFloor));
                    }
                    tp.accumulate(probs, gp);
                  });
}

Var row_entropy(const Var& probs) {
  Tape& t = tape_of(probs);
  const Tensor& p = probs.value();
  Tensor out(p.rows(), 1);
  for (Index r = 0; r < p.rows(); ++r) {
    double h = 0.0;
    for (Index c = 0; c < p.cols(); ++c) {
      if (p(r, c) > 0.0) h -= p(r, c) * std::log(p(r, c));
    }
    out(r, 0) = h;
  }
  return t.record(std::move(out), {probs}, [probs](Tape& tp, const Tensor&, const Tensor& g) {
    const Tensor& pv = probs.value();
    Tensor gp(pv.rows(), pv.cols());
    for (Index r = 0; r < pv.rows(); ++r) {
      for (Index c = 0; c < pv.cols(); ++c) {
        gp(r, c) = -g(r, 0) * (std::log(std::max(pv(r, c), kLogFloor)) + 1.0);
      }
    }
    tp.accumulate(probs, gp);
  });
}

Var kl_divergence(const Var& p, const Tensor& q) {
  Tape& t = tape_of(p);
  require_shape(p.rows() == 1 && q.rows() == 1 && p.cols() == q.cols(), "kl_divergence", p.value(),
                q);
  const Tensor& pv = p.value();
  Tensor out(1, 1);
  double kl = 0.0;
  for (Index c = 0; c < pv.cols(); ++c) {
    if (pv(0, c) > 0.0) kl += pv(0, c) * std::log(pv(0, c) / q(0, c));
  }
  out(0, 0) = kl;
  return t.record(std::move(out), {p}, [p, q](Tape& tp, const Tensor&, const Tensor& g) {
    const Tensor& pv2 = p.value();
    Tensor gp(1, pv2.cols());
    for (Index c = 0; c < pv2.cols(); ++c) {
      gp(0, c) = g(0, 0) * (std::log(std::max(pv2(0, c), kLogFloor) / q(0, c)) + 1.0);
    }
    tp.accumulate(p, gp);
  });
}

// ---- gradient oracle ---------------------------------------------------

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const Objective& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor& p : params) vars.push_back(tape.constant(p));
  const Var out = f(tape, vars);
  if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("objective is not scalar");
  const double v = out.value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

}  // namespace

GradReport grad_check(const Objective& f, std::vector<Tensor>& params, double eps) {
  GradReport report;
  report.eps = eps;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.variable(p));
    const Var loss = f(tape, vars);
    if (!std::isfinite(loss.value()(0, 0))) throw NumericError("grad_check: objective is not finite");
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    double worst = 0.0;
    for (Index j = 0; j < params[i].size(); ++j) {
      double& x = params[i].data()[j];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate(f, params);
      x = saved - eps;
      const double down = evaluate(f, params);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, relative_error(analytic[i].data()[j], numeric));
    }
    report.max_rel_error.push_back(worst);
    report.max_error = std::max(report.max_error, worst);
  }
  return report;
}

}  // namespace cl3an::ad
