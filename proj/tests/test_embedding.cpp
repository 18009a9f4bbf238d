#include "cl3an/embedding.hpp"

#include "cl3an/layers.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <stdexcept>

using namespace cl3an;
using namespace cl3an::ad;
using namespace cl3an::embedding;
using cl3an::testing::kSeeds;
using cl3an::testing::probe;
using cl3an::testing::random_tensor;

namespace {

// Single-head attention written out per node: LeakyReLU(0.2) logits over
// N(v) and v, softmax, weighted sum of z_u W, ReLU.
Tensor loop_head(const Tensor& z, const Graph& g, const Tensor& w, const Tensor& a) {
  const Tensor p = z * w;
  const Index d = p.cols();
  Tensor out = Tensor::Zero(g.num_nodes(), d);
  const Segments& nb = g.neighborhoods();
  for (Index v = 0; v < g.num_nodes(); ++v) {
    std::vector<double> logits;
    for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) {
      const Index u = nb.source[k];
      double s = 0.0;
      for (Index j = 0; j < d; ++j) s += a(j, 0) * p(v, j) + a(d + j, 0) * p(u, j);
      logits.push_back(s > 0.0 ? s : 0.2 * s);
    }
    double mx = -INFINITY;
    for (double l : logits) mx = std::max(mx, l);
    double z_sum = 0.0;
    for (double& l : logits) z_sum += (l = std::exp(l - mx));
    for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) {
      out.row(v) += logits[k - nb.offsets[v]] / z_sum * p.row(nb.source[k]);
    }
  }
  return out.cwiseMax(0.0);
}

EmbeddingVars random_vars(Tape& t, Index in, Index edge_in, Index width, int heads, Rng& rng) {
  EmbeddingVars v{t.variable(random_tensor(in, width, rng)),
                  t.variable(random_tensor(1, width, rng)),
                  t.variable(random_tensor(edge_in, width, rng)),
                  t.variable(random_tensor(1, width, rng)),
                  t.variable(random_tensor(width, width, rng)),
                  t.variable(random_tensor(1, width, rng)),
                  {}};
  for (int k = 0; k < heads; ++k) {
    v.heads.push_back({t.variable(random_tensor(width, width / heads, rng)),
                       t.variable(random_tensor(2 * (width / heads), 1, rng))});
  }
  return v;
}

}  // namespace

TEST_CASE("initial projection is affine with no activation") {
  Rng rng(4);
  const Graph g = testing::small_graph(3, 2);
  Tape t;
  const Var h = t.constant(g.features());
  const Var e = t.constant(random_tensor(g.num_directed_edges(), 3, rng));
  const Tensor b = random_tensor(1, 3, rng);
  SUBCASE("identity weights with zero bias return the inputs") {
    const Embeddings z = initial_projection(h, e, t.constant(Tensor::Identity(3, 3)),
                                            t.constant(Tensor::Zero(1, 3)),
                                            t.constant(Tensor::Identity(3, 3)),
                                            t.constant(Tensor::Zero(1, 3)));
    CHECK(z.nodes.value() == g.features());
    CHECK(z.edges.value() == e.value());
  }
  SUBCASE("zero input yields the bias on every row, negatives kept") {
    const Embeddings z = initial_projection(
        t.constant(Tensor::Zero(4, 3)), t.constant(Tensor::Zero(g.num_directed_edges(), 3)),
        t.constant(random_tensor(3, 3, rng)), t.constant(b), t.constant(random_tensor(3, 3, rng)),
        t.constant(-b));
    for (Index v = 0; v < 4; ++v) CHECK(z.nodes.value().row(v) == b);
    for (Index k = 0; k < g.num_directed_edges(); ++k) CHECK(z.edges.value().row(k) == -b);
  }
}

TEST_CASE("one head matches a per-node attention loop") {
  const Graph g = testing::random_graph(9, 0.35, 2, 4, 5);
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    const Tensor z = random_tensor(9, 4, rng);
    const Tensor w = random_tensor(4, 4, rng);
    const Tensor a = random_tensor(8, 1, rng);
    Tape t;
    const Var out = multi_head_refine(t.constant(z), g, {{t.constant(w), t.constant(a)}}, 4);
    CHECK((out.value() - loop_head(z, g, w, a)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("heads are concatenated in order") {
  const Graph g = testing::random_graph(8, 0.4, 2, 6, 3);
  Rng rng(8);
  const Tensor z = random_tensor(8, 6, rng);
  const Tensor w1 = random_tensor(6, 3, rng), a1 = random_tensor(6, 1, rng);
  const Tensor w2 = random_tensor(6, 3, rng), a2 = random_tensor(6, 1, rng);
  Tape t;
  const Var zv = t.constant(z);
  SUBCASE("distinct heads") {
    const Tensor out =
        multi_head_refine(zv, g, {{t.constant(w1), t.constant(a1)}, {t.constant(w2), t.constant(a2)}}, 6)
            .value();
    CHECK((out.leftCols(3) - loop_head(z, g, w1, a1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.rightCols(3) - loop_head(z, g, w2, a2)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("identical heads repeat the block") {
    const HeadVars hv{t.constant(w1), t.constant(a1)};
    const Tensor out = multi_head_refine(zv, g, {hv, hv}, 6).value();
    CHECK(out.leftCols(3) == out.rightCols(3));
  }
  SUBCASE("head widths must add up to the configured width") {
    const HeadVars hv{t.constant(w1), t.constant(a1)};
    CHECK_THROWS_AS(multi_head_refine(zv, g, {hv, hv}, 8), std::invalid_argument);
    CHECK_THROWS_AS(multi_head_refine(zv, g, {}, 6), std::invalid_argument);
  }
}

TEST_CASE("multi-head refinement is permutation equivariant") {
  const Graph g = testing::random_graph(10, 0.3, 2, 4, 21);
  const std::vector<Index> perm{3, 7, 0, 9, 1, 5, 8, 2, 6, 4};
  const Graph gp = testing::permuted(g, perm);
  Rng rng(2);
  Tape t;
  const std::vector<HeadVars> heads{{t.constant(random_tensor(4, 2, rng)), t.constant(random_tensor(4, 1, rng))},
                                    {t.constant(random_tensor(4, 2, rng)), t.constant(random_tensor(4, 1, rng))}};
  const Tensor out = multi_head_refine(t.constant(g.features()), g, heads, 4).value();
  const Tensor out_p = multi_head_refine(t.constant(gp.features()), gp, heads, 4).value();
  for (Index v = 0; v < 10; ++v) {
    CHECK((out.row(v) - out_p.row(perm[v])).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("final transform clips negatives") {
  Tape t;
  Tensor z(2, 2);
  z << 1, -2, 0.5, 3;
  Tensor w = Tensor::Identity(2, 2);
  Tensor b(1, 2);
  b << -1, 1;
  Tensor expect(2, 2);
  expect << 0, 0, 0, 4;
  CHECK(final_transform(t.constant(z), t.constant(w), t.constant(b)).value() == expect);
}

TEST_CASE("embed combine adds the mean outgoing edge embedding") {
  const Graph g = testing::small_graph(2, 6, /*isolated=*/true);
  Rng rng(12);
  const Tensor zn = random_tensor(g.num_nodes(), 3, rng);
  const Tensor ze = random_tensor(g.num_directed_edges(), 3, rng);
  Tape t;
  const Tensor out = embed_combine(t.constant(zn), t.constant(ze), g).value();

  Tensor expect = zn;
  std::vector<int> count(static_cast<std::size_t>(g.num_nodes()), 0);
  Tensor sums = Tensor::Zero(g.num_nodes(), 3);
  for (Index k = 0; k < g.num_directed_edges(); ++k) {
    sums.row(g.edge_source()[k]) += ze.row(k);
    ++count[g.edge_source()[k]];
  }
  for (Index v = 0; v < g.num_nodes(); ++v) {
    if (count[v] > 0) expect.row(v) += sums.row(v) / count[v];
  }
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-14);
  // node 4 is isolated
  CHECK(out.row(4) == zn.row(4));
  // node 0 has out-degree 3 in small_graph
  CHECK(count[0] == 3);

  CHECK_THROWS_AS(embed_combine(t.constant(zn), t.constant(random_tensor(3, 3, rng)), g), ShapeError);
  CHECK_THROWS_AS(embed_combine(t.constant(zn), t.constant(random_tensor(g.num_directed_edges(), 2, rng)), g),
                  ShapeError);
}

TEST_CASE("embedding output has the configured width") {
  const Graph g = testing::random_graph(12, 0.3, 3, 5, 1);
  Rng rng(3);
  Tape t;
  const EmbeddingVars vars = random_vars(t, 5, 4, 8, 4, rng);
  const Var e = t.constant(random_tensor(g.num_directed_edges(), 4, rng));
  const EmbeddingResult r = embed(t.constant(g.features()), e, g, vars, 8, 0.0, nullptr);
  CHECK(r.combined.rows() == 12);
  CHECK(r.combined.cols() == 8);
  CHECK(r.edges.rows() == g.num_directed_edges());
  CHECK(r.edges.cols() == 8);
}

TEST_CASE("embedding gradients match finite differences") {
  const Graph g = testing::small_graph(3, 40, /*isolated=*/true);
  // h, e, w0, b0, we, be, w1, b1, then two heads of width 2
  const std::vector<std::pair<Index, Index>> shapes{{5, 3}, {10, 2}, {3, 4}, {1, 4}, {2, 4}, {1, 4},
                                                    {4, 4}, {1, 4}, {4, 2}, {4, 1}, {4, 2}, {4, 1}};
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    std::vector<Tensor> params;
    for (auto [r, c] : shapes) params.push_back(random_tensor(r, c, rng));
    const GradReport rep = grad_check(
        [&](Tape&, const std::vector<Var>& v) {
          const EmbeddingVars vars{v[2], v[3], v[4], v[5], v[6], v[7], {{v[8], v[9]}, {v[10], v[11]}}};
          return probe(embed(v[0], v[1], g, vars, 4, 0.0, nullptr).combined, seed + 1);
        },
        params);
    INFO("seed " << seed << " err " << rep.max_error);
    CHECK(rep.max_error < 1e-4);
  }
}

TEST_CASE("eight heads of width eight give sixty-four columns") {
  const Graph g = testing::random_graph(15, 0.3, 3, 64, 2);
  Rng rng(10);
  Tape t;
  std::vector<HeadVars> heads;
  for (int k = 0; k < 8; ++k) {
    heads.push_back({t.constant(random_tensor(64, 8, rng)), t.constant(random_tensor(16, 1, rng))});
  }
  const Var out = multi_head_refine(t.constant(g.features()), g, heads, 64);
  CHECK(out.rows() == 15);
  CHECK(out.cols() == 64);
  for (const HeadVars& hv : heads) {
    const Var alpha = layers::attention_from_projected(matmul(t.constant(g.features()), hv.weight), g, hv.attention);
    const Segments& nb = g.neighborhoods();
    for (Index v = 0; v < 15; ++v) {
      double s = 0.0;
      for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) s += alpha.value()(k, 0);
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("projection of a Cora-sized input") {
  Rng rng(1);
  Tape t;
  const Embeddings z = initial_projection(t.constant(random_tensor(2708, 1433, rng, 0.01)),
                                          t.constant(random_tensor(10, 16, rng)), t.constant(random_tensor(1433, 64, rng)),
                                          t.constant(random_tensor(1, 64, rng)), t.constant(random_tensor(16, 64, rng)),
                                          t.constant(random_tensor(1, 64, rng)));
  CHECK(z.nodes.rows() == 2708);
  CHECK(z.nodes.cols() == 64);
}

TEST_CASE("final transform oracles") {
  Rng rng(21);
  Tape t;
  SUBCASE("identity on nonnegative input") {
    const Tensor z = random_tensor(6, 4, rng).cwiseAbs();
    CHECK(final_transform(t.constant(z), t.constant(Tensor::Identity(4, 4)), t.constant(Tensor::Zero(1, 4))).value() ==
          z);
  }
  SUBCASE("random case matches an affine loop") {
    const Tensor z = random_tensor(5, 3, rng), w = random_tensor(3, 4, rng), b = random_tensor(1, 4, rng);
    const Tensor out = final_transform(t.constant(z), t.constant(w), t.constant(b)).value();
    for (Index i = 0; i < 5; ++i) {
      for (Index j = 0; j < 4; ++j) {
        double s = b(0, j);
        for (Index k = 0; k < 3; ++k) s += z(i, k) * w(k, j);
        CHECK(out(i, j) == doctest::Approx(std::max(s, 0.0)).epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("embed combine with zero or constant edges") {
  Rng rng(2);
  Tape t;
  SUBCASE("zero edges leave the nodes unchanged") {
    const Graph g = testing::random_graph(7, 0.4, 2, 2, 9);
    const Tensor zn = random_tensor(7, 3, rng);
    CHECK(embed_combine(t.constant(zn), t.constant(Tensor::Zero(g.num_directed_edges(), 3)), g).value() == zn);
  }
  SUBCASE("a single edge with constant embedding c adds c") {
    const Graph g = Graph::build({{0, 1}}, Tensor::Zero(2, 1), {0, 1});
    const Tensor zn = random_tensor(2, 3, rng);
    const Tensor out = embed_combine(t.constant(zn), t.constant(Tensor::Constant(2, 3, 0.625)), g).value();
    CHECK(out == (zn.array() + 0.625).matrix());
  }
}

TEST_CASE("embed combine is exactly permutation equivariant") {
  // Degrees 4, 2 and 0 make 1/deg dyadic; with small integer inputs every
  // product and partial sum is exact, so summation order cannot matter.
  std::vector<std::pair<Index, Index>> edges;
  for (Index u = 0; u < 5; ++u) {
    for (Index v = u + 1; v < 5; ++v) edges.emplace_back(u, v);
  }
  for (Index u = 5; u < 9; ++u) edges.emplace_back(u, u == 8 ? 5 : u + 1);
  const Graph g = Graph::build(edges, Tensor::Zero(10, 1), std::vector<int>(10, 0));
  const std::vector<Index> perm{4, 0, 8, 2, 6, 1, 7, 3, 9, 5};
  const Graph gp = testing::permuted(g, perm);
  Rng rng(3);
  const Tensor zn = (random_tensor(10, 3, rng) * 8.0).array().round().matrix();
  const Tensor ze = (random_tensor(g.num_directed_edges(), 3, rng) * 8.0).array().round().matrix();
  Tensor zn_p(10, 3), ze_p(g.num_directed_edges(), 3);
  for (Index v = 0; v < 10; ++v) zn_p.row(perm[v]) = zn.row(v);
  for (Index e = 0; e < g.num_directed_edges(); ++e) {
    const Index s = perm[g.edge_source()[e]], d = perm[g.edge_target()[e]];
    Index match = -1;
    for (Index f = 0; f < gp.num_directed_edges(); ++f) {
      if (gp.edge_source()[f] == s && gp.edge_target()[f] == d) match = f;
    }
    REQUIRE(match >= 0);
    ze_p.row(match) = ze.row(e);
  }
  Tape t;
  const Tensor out = embed_combine(t.constant(zn), t.constant(ze), g).value();
  const Tensor out_p = embed_combine(t.constant(zn_p), t.constant(ze_p), gp).value();
  for (Index v = 0; v < 10; ++v) CHECK(out.row(v) == out_p.row(perm[v]));
}
