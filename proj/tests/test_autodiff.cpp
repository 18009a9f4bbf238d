#include "cl3an/autodiff.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>

using namespace cl3an;
using namespace cl3an::ad;
using cl3an::testing::kSeeds;
using cl3an::testing::probe;
using cl3an::testing::random_tensor;

namespace {

// Checks one op at every test seed: inputs are drawn from the seed, the
// output is collapsed by a seeded linear functional.
void check_op(const char* name, std::vector<std::pair<Index, Index>> shapes,
              const std::function<Var(const std::vector<Var>&)>& op, double lo = -1.0,
              double hi = 1.0) {
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    std::vector<Tensor> params;
    for (auto [r, c] : shapes) {
      Tensor t(r, c);
      for (Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
      params.push_back(t);
    }
    const GradReport rep = grad_check(
        [&](Tape&, const std::vector<Var>& v) { return probe(op(v), seed + 100); }, params);
    INFO(name << " seed " << seed << " err " << rep.max_error);
    CHECK(rep.max_error < 1e-4);
  }
}

Segments ragged_groups() {
  // groups of sizes 2, 1, 3 over a 4-row source
  Segments s;
  s.offsets = {0, 2, 3, 6};
  s.source = {0, 3, 1, 2, 0, 3};
  return s;
}

}  // namespace

TEST_CASE("row_softmax examples") {
  Tape t;
  Tensor x(2, 2);
  x << 0, 0, 1, 0;
  const Tensor y = row_softmax(t.constant(x)).value();
  CHECK(y(0, 0) == doctest::Approx(0.5));
  CHECK(y(0, 1) == doctest::Approx(0.5));
  CHECK(std::abs(y(1, 0) - std::exp(1.0) / (std::exp(1.0) + 1.0)) < 1e-12);
  CHECK(std::abs(y(1, 0) - 0.7311) < 1e-4);
  CHECK(std::abs(y(1, 1) - 0.2689) < 1e-4);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(4);
  Tape t;
  const Tensor y = row_softmax(t.constant(random_tensor(10, 7, rng, 30.0))).value();
  for (Index r = 0; r < y.rows(); ++r) CHECK(std::abs(y.row(r).sum() - 1.0) < 1e-9);

  const Segments s = ragged_groups();
  const Tensor m = masked_neighbor_softmax(t.constant(random_tensor(6, 1, rng, 20.0)), s).value();
  for (Index g = 0; g < s.num_groups(); ++g) {
    CHECK(std::abs(m.col(0).segment(s.offsets[g], s.size(g)).sum() - 1.0) < 1e-9);
  }
  // a singleton group gets weight exactly one
  CHECK(m(2, 0) == 1.0);
}

TEST_CASE("masked softmax rejects an empty neighbour set") {
  Segments s;
  s.offsets = {0, 2, 2};
  s.source = {0, 1};
  Tape t;
  const Var x = t.constant(Tensor::Zero(2, 1));
  CHECK_THROWS_AS(masked_neighbor_softmax(x, s), std::invalid_argument);
  CHECK_NOTHROW(masked_neighbor_softmax(x, s, true));
}

TEST_CASE("sparse identity product is the identity") {
  Rng rng(2);
  Tape t;
  const Tensor h = random_tensor(4, 3, rng);
  CHECK(sparse_dense_matmul(CsrMatrix::identity(4), t.constant(h)).value() == h);
}

TEST_CASE("leaky_relu(1) and dropout(0) are identities") {
  Rng rng(2);
  Tape t;
  const Tensor h = random_tensor(5, 3, rng);
  CHECK(leaky_relu(t.constant(h), 1.0).value() == h);
  CHECK(dropout(t.constant(h), 0.0, rng).value() == h);
  CHECK_THROWS(dropout(t.constant(h), 1.0, rng));
}

TEST_CASE("dropout keeps the expectation") {
  Rng rng(8);
  Tape t;
  const Tensor y = dropout(t.constant(Tensor::Ones(200, 50)), 0.5, rng).value();
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.05));
  CHECK((y.array() == 0.0).count() > 4000);
}

TEST_CASE("shape mismatch names both shapes") {
  Tape t;
  try {
    matmul(t.constant(Tensor::Zero(2, 3)), t.constant(Tensor::Zero(4, 5)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum of squares") {
    Tape t;
    const Var x = t.variable(Tensor::Constant(1, 1, 3.0));
    const Var loss = sum_all(hadamard(x, x));
    t.backward(loss);
    CHECK(x.grad()(0, 0) == 6.0);
  }
  SUBCASE("sigmoid chain") {
    Tape t;
    const Var w = t.variable(Tensor::Constant(1, 1, 0.7));
    const Var x = t.constant(Tensor::Constant(1, 1, -1.3));
    t.backward(sigmoid(matmul(w, x)));
    const double s = 1.0 / (1.0 + std::exp(0.7 * 1.3));
    CHECK(std::abs(w.grad()(0, 0) - s * (1.0 - s) * -1.3) < 1e-14);
  }
  SUBCASE("shared parameter accumulates both paths") {
    Tape t;
    const Var x = t.variable(Tensor::Constant(1, 1, 2.0));
    const Var loss = add(scale(x, 3.0), hadamard(x, x));
    t.backward(loss);
    CHECK(x.grad()(0, 0) == 3.0 + 4.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape t;
    const Var x = t.variable(Tensor::Zero(2, 1));
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
  }
  SUBCASE("tape is consumed") {
    Tape t;
    const Var x = t.variable(Tensor::Ones(1, 1));
    const Var loss = scale(x, 2.0);
    t.backward(loss);
    CHECK(t.consumed());
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);
    t.reset();
    CHECK(t.size() == 0);
  }
  SUBCASE("untouched gradients are zero") {
    Tape t;
    const Var x = t.variable(Tensor::Ones(2, 2));
    const Var y = t.variable(Tensor::Ones(1, 1));
    t.backward(sum_all(y));
    CHECK(x.grad() == Tensor::Zero(2, 2));
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(13);
    Tape t;
    const Var w = t.variable(random_tensor(4, 3, rng));
    const Var x = t.constant(random_tensor(6, 4, rng));
    const Var y = row_softmax(relu(matmul(x, w)));
    t.backward(probe(y, 5));
    return Tensor(w.grad());
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check on x^2") {
  std::vector<Tensor> p{Tensor::Constant(1, 1, 3.0)};
  const GradReport rep =
      grad_check([](Tape&, const std::vector<Var>& v) { return hadamard(v[0], v[0]); }, p);
  CHECK(rep.max_error < 1e-7);
  CHECK(rep.eps == 1e-5);
  CHECK(p[0](0, 0) == 3.0);
}

TEST_CASE("grad_check rejects non-finite objectives") {
  std::vector<Tensor> p{Tensor::Constant(1, 1, 0.0)};
  auto f = [](Tape& t, const std::vector<Var>& v) {
    return scale(v[0], std::numeric_limits<double>::infinity()) ;
  };
  CHECK_THROWS(grad_check([&](Tape& t, const std::vector<Var>& v) {
    t.set_check_finite(false);
    return f(t, v);
  }, p));
}

TEST_CASE("relative error floor") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.5) == doctest::Approx(1.0 / 3.0));
  CHECK(relative_error(1e-12, 0.0) == doctest::Approx(1e-4));
}

TEST_CASE("every op passes grad_check") {
  check_op("matmul", {{3, 4}, {4, 2}}, [](auto& v) { return matmul(v[0], v[1]); });
  check_op("add", {{3, 4}, {3, 4}}, [](auto& v) { return add(v[0], v[1]); });
  check_op("add_row", {{3, 4}, {1, 4}}, [](auto& v) { return add_row(v[0], v[1]); });
  check_op("scale", {{3, 4}}, [](auto& v) { return scale(v[0], -1.7); });
  check_op("hadamard", {{3, 4}, {3, 4}}, [](auto& v) { return hadamard(v[0], v[1]); });
  check_op("mul_rows", {{5, 3}, {5, 1}}, [](auto& v) { return mul_rows(v[0], v[1]); });
  check_op("sparse_dense_matmul", {{4, 3}}, [](auto& v) {
    static const CsrMatrix a = [] {
      CsrMatrix m;
      m.rows = 3;
      m.cols = 4;
      m.offsets = {0, 2, 2, 5};
      m.columns = {0, 3, 1, 2, 3};
      m.values = {0.5, -1.0, 2.0, 0.25, 1.5};
      return m;
    }();
    return sparse_dense_matmul(a, v[0]);
  });
  check_op("concat_columns", {{3, 2}, {3, 1}, {3, 4}},
           [](auto& v) { return concat_columns(std::vector<Var>{v[0], v[1], v[2]}); });
  check_op("gather_rows", {{4, 3}}, [](auto& v) { return gather_rows(v[0], {3, 0, 3, 2}); });
  check_op("relu", {{4, 5}}, [](auto& v) { return relu(v[0]); });
  check_op("leaky_relu", {{4, 5}}, [](auto& v) { return leaky_relu(v[0], 0.2); });
  check_op("sigmoid", {{4, 5}}, [](auto& v) { return sigmoid(scale(v[0], 4.0)); });
  check_op("row_softmax", {{4, 5}}, [](auto& v) { return row_softmax(scale(v[0], 3.0)); });
  check_op("masked_neighbor_softmax", {{6, 1}}, [](auto& v) {
    static const Segments s = ragged_groups();
    return masked_neighbor_softmax(scale(v[0], 3.0), s);
  });
  check_op("segment_weighted_sum", {{6, 1}, {4, 3}}, [](auto& v) {
    static const Segments s = ragged_groups();
    return segment_weighted_sum(v[0], v[1], s);
  });
  check_op("mean_rows", {{5, 3}}, [](auto& v) { return mean_rows(v[0]); });
  check_op("sum_all", {{5, 3}}, [](auto& v) { return sum_all(v[0]); });
  check_op("weighted_sum", {{5, 3}}, [](auto& v) {
    Rng rng(99);
    return weighted_sum(v[0], random_tensor(5, 3, rng));
  });
  check_op("cross_entropy", {{5, 3}}, [](auto& v) {
    static const std::vector<int> labels{0, 2, 1, 1, 0};
    static const std::vector<Index> rows{0, 1, 3, 4};
    static const std::vector<double> w{1.0, 0.5, 2.0, 0.25};
    return cross_entropy(row_softmax(v[0]), labels, rows, w);
  });
  check_op("row_entropy", {{5, 3}}, [](auto& v) { return row_entropy(row_softmax(scale(v[0], 2.0))); });
  check_op("kl_divergence", {{1, 4}}, [](auto& v) {
    return kl_divergence(row_softmax(scale(v[0], 2.0)), Tensor::Constant(1, 4, 0.25));
  });
}

TEST_CASE("dropout gradient uses the same mask") {
  Rng rng(21);
  Tape t;
  const Var x = t.variable(random_tensor(6, 4, rng));
  const Var y = dropout(x, 0.3, rng);
  t.backward(sum_all(y));
  for (Index i = 0; i < y.value().size(); ++i) {
    const double expected = y.value().data()[i] == 0.0 ? 0.0 : 1.0 / 0.7;
    CHECK(x.grad().data()[i] == doctest::Approx(expected));
  }
}

TEST_CASE("cross entropy and kl values") {
  Tape t;
  Tensor p(2, 2);
  p << 0.25, 0.75, 0.5, 0.5;
  const std::vector<int> labels{1, 0};
  const std::vector<Index> rows{0, 1};
  const double ce = cross_entropy(t.constant(p), labels, rows).value()(0, 0);
  CHECK(ce == doctest::Approx(-(std::log(0.75) + std::log(0.5)) / 2.0));

  Tensor pbar(1, 2);
  pbar << 0.75, 0.25;
  const double kl = kl_divergence(t.constant(pbar), Tensor::Constant(1, 2, 0.5)).value()(0, 0);
  // 0.75 ln 1.5 + 0.25 ln 0.5
  CHECK(std::abs(kl - 0.1308) < 1e-3);
}
