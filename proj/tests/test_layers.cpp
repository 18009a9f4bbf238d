#include "cl3an/layers.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <numeric>
#include <span>

using namespace cl3an;
using namespace cl3an::ad;
using namespace cl3an::layers;
using cl3an::testing::kSeeds;
using cl3an::testing::permuted;
using cl3an::testing::probe;
using cl3an::testing::random_tensor;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

// Sum of the neighbourhood coefficients of each node.
std::vector<double> group_sums(const Tensor& alpha, const Graph& g) {
  const Segments& nb = g.neighborhoods();
  std::vector<double> sums(static_cast<std::size_t>(g.num_nodes()), 0.0);
  for (Index v = 0; v < g.num_nodes(); ++v) {
    for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) sums[v] += alpha(k, 0);
  }
  return sums;
}

std::vector<LayerVars> random_layers(Tape& t, Index in, Index width, int count, Rng& rng) {
  std::vector<LayerVars> out;
  for (int l = 0; l < count; ++l) {
    const Index d_in = l == 0 ? in : width;
    out.push_back({t.variable(random_tensor(d_in, width, rng)),
                   t.variable(random_tensor(2 * width, 1, rng)),
                   t.variable(random_tensor(d_in, width, rng)),
                   t.variable(random_tensor(d_in, 1, rng))});
  }
  return out;
}

}  // namespace

TEST_CASE("gcn on a lone node applies relu to h W") {
  Tensor x(1, 2);
  x << 1, -1;
  const Graph g = Graph::build({}, x, {0});
  Tape t;
  const Tensor out = gcn_aggregate(t.constant(x), g, t.constant(Tensor::Identity(2, 2))).value();
  CHECK(out(0, 0) == 1.0);
  CHECK(out(0, 1) == 0.0);
}

TEST_CASE("zero weights annihilate both node updates") {
  const Graph g = testing::small_graph(3, 5);
  Tape t;
  const Var x = t.constant(g.features());
  const Var w = t.constant(Tensor::Zero(3, 4));
  Rng rng(1);
  const Var a = t.constant(random_tensor(8, 1, rng));
  CHECK(gcn_aggregate(x, g, w).value().isZero(0.0));
  CHECK(combined_update(x, g, w, a).h.value().isZero(0.0));
}

TEST_CASE("attention is uniform when all features are identical") {
  const Graph base = testing::random_graph(12, 0.3, 2, 3, 9);
  const Graph g = Graph::build(
      [&] {
        std::vector<std::pair<Index, Index>> e;
        for (const Edge& x : base.edges()) e.emplace_back(x.u, x.v);
        return e;
      }(),
      Tensor::Ones(12, 3), base.labels());
  Rng rng(3);
  Tape t;
  const Tensor alpha = gat_coefficients(t.constant(g.features()), g, t.constant(random_tensor(3, 4, rng)),
                                        t.constant(random_tensor(8, 1, rng)))
                           .value();
  const Segments& nb = g.neighborhoods();
  for (Index v = 0; v < g.num_nodes(); ++v) {
    for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) {
      CHECK(alpha(k, 0) == doctest::Approx(1.0 / static_cast<double>(nb.size(v))).epsilon(1e-12));
    }
  }
}

TEST_CASE("an isolated node attends only to itself") {
  const Graph g = testing::small_graph(3, 2, /*isolated=*/true);
  Rng rng(8);
  Tape t;
  const Tensor alpha = gat_coefficients(t.constant(g.features()), g, t.constant(random_tensor(3, 4, rng)),
                                        t.constant(random_tensor(8, 1, rng)))
                           .value();
  const Segments& nb = g.neighborhoods();
  REQUIRE(nb.size(4) == 1);
  CHECK(alpha(nb.offsets[4], 0) == 1.0);
}

TEST_CASE("attention coefficients normalise on a star") {
  Rng rng(17);
  const Graph g = Graph::build({{0, 1}, {0, 2}}, random_tensor(3, 4, rng), {0, 1, 0});
  for (std::uint64_t seed : kSeeds) {
    Rng prng(seed);
    Tape t;
    const Tensor alpha = gat_coefficients(t.constant(g.features()), g, t.constant(random_tensor(4, 5, prng, 3.0)),
                                          t.constant(random_tensor(10, 1, prng, 3.0)))
                             .value();
    for (double s : group_sums(alpha, g)) CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("attention logits match a direct loop") {
  const Graph g = testing::small_graph(3, 12);
  Rng rng(5);
  const Tensor w = random_tensor(3, 2, rng);
  const Tensor a = random_tensor(4, 1, rng);
  Tape t;
  const Tensor alpha = gat_coefficients(t.constant(g.features()), g, t.constant(w), t.constant(a)).value();
  const Tensor p = g.features() * w;
  const Segments& nb = g.neighborhoods();
  for (Index v = 0; v < g.num_nodes(); ++v) {
    std::vector<double> logits;
    for (Index k = nb.offsets[v]; k < nb.offsets[v + 1]; ++k) {
      const Index u = nb.source[k];
      double s = 0.0;
      for (Index j = 0; j < 2; ++j) s += a(j, 0) * p(v, j) + a(2 + j, 0) * p(u, j);
      logits.push_back(s > 0 ? s : 0.2 * s);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      CHECK(alpha(nb.offsets[v] + static_cast<Index>(i), 0) == doctest::Approx(std::exp(logits[i]) / z).epsilon(1e-12));
    }
  }
}

TEST_CASE("combined update doubles a branch on identical nodes") {
  Tensor x(2, 3);
  x << 0.5, -1.0, 2.0, 0.5, -1.0, 2.0;
  const Graph g = Graph::build({{0, 1}}, x, {0, 1});
  Rng rng(21);
  const Tensor w = random_tensor(3, 4, rng);
  Tape t;
  const UpdateResult u = combined_update(t.constant(x), g, t.constant(w), t.constant(random_tensor(8, 1, rng)));
  const Tensor branch = x * w;  // Â rows and alpha rows both average identical rows
  const Tensor expected = (2.0 * branch).cwiseMax(0.0);
  CHECK(max_abs_diff(u.h.value(), expected) < 1e-12);
}

TEST_CASE("node updates are permutation equivariant") {
  const Graph g = testing::random_graph(15, 0.25, 3, 4, 31);
  std::vector<Index> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(4);
  prng.shuffle(perm);
  const Graph gp = permuted(g, perm);
  Rng rng(6);
  const Tensor w = random_tensor(4, 5, rng);
  const Tensor a = random_tensor(10, 1, rng);
  for (UpdateMode mode : {UpdateMode::kCombined, UpdateMode::kGcnOnly, UpdateMode::kSageOnly, UpdateMode::kGatOnly}) {
    Tape t;
    const Tensor h = combined_update(t.constant(g.features()), g, t.constant(w), t.constant(a), mode).h.value();
    const Tensor hp = combined_update(t.constant(gp.features()), gp, t.constant(w), t.constant(a), mode).h.value();
    const Tensor gcn = gcn_aggregate(t.constant(g.features()), g, t.constant(w)).value();
    const Tensor gcn_p = gcn_aggregate(t.constant(gp.features()), gp, t.constant(w)).value();
    for (Index v = 0; v < 15; ++v) {
      // neighbour order differs after relabelling, so sums may round differently
      CHECK((h.row(v) - hp.row(perm[v])).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((gcn.row(v) - gcn_p.row(perm[v])).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("edge update examples") {
  Rng rng(2);
  Tape t;
  const Var e = t.constant(random_tensor(6, 3, rng));
  const Tensor i3 = Tensor::Identity(3, 3);
  CHECK(max_abs_diff(edge_update(e, t.constant(Tensor::Ones(6, 1)), t.constant(i3)).value(), e.value()) == 0.0);
  CHECK(edge_update(e, t.constant(Tensor::Zero(6, 1)), t.constant(i3)).value().isZero(0.0));
  CHECK(max_abs_diff(edge_update(e, t.constant(Tensor::Constant(6, 1, 0.5)), t.constant(2.0 * i3)).value(),
                     e.value()) < 1e-15);
  CHECK_THROWS_AS(edge_update(e, t.constant(Tensor::Ones(5, 1)), t.constant(i3)), ShapeError);
}

TEST_CASE("edge alpha lines up with the directed edges") {
  const Graph g = testing::random_graph(10, 0.4, 2, 2, 3);
  for (Index k = 0; k < g.num_directed_edges(); ++k) {
    const Index pos = g.edge_csr_position()[k];
    CHECK(g.neighborhood_rows()[pos] == g.edge_source()[k]);
    CHECK(g.neighborhood_cols()[pos] == g.edge_target()[k]);
  }
}

TEST_CASE("fused edge output") {
  const Graph g = testing::small_graph(3, 4);
  const Index m = g.num_directed_edges();
  const Index nnz = g.neighborhoods().num_entries();
  Rng rng(10);
  Tape t;

  SUBCASE("one layer with unit coefficients returns the edge states") {
    const Var e = t.constant(random_tensor(m, 3, rng));
    CHECK(max_abs_diff(feature_extraction_output({t.constant(Tensor::Ones(nnz, 1))}, {e}, g).value(), e.value()) == 0.0);
  }
  SUBCASE("zero coefficients give zero") {
    const Var e = t.constant(random_tensor(m, 3, rng));
    CHECK(feature_extraction_output({t.constant(Tensor::Zero(nnz, 1))}, {e}, g).value().isZero(0.0));
  }
  SUBCASE("two layers match a loop over edges") {
    std::vector<Var> alphas, states;
    for (int l = 0; l < 2; ++l) {
      alphas.push_back(t.constant(random_tensor(nnz, 1, rng)));
      states.push_back(t.constant(random_tensor(m, 3, rng)));
    }
    const Tensor f = feature_extraction_output(alphas, states, g).value();
    const Segments& nb = g.neighborhoods();
    for (Index k = 0; k < m; ++k) {
      const Index src = g.edge_source()[k];
      const Index dst = g.edge_target()[k];
      // find the entry of dst inside src's neighbourhood by scanning
      Index pos = -1;
      for (Index j = nb.offsets[src]; j < nb.offsets[src + 1]; ++j) {
        if (nb.source[j] == dst) pos = j;
      }
      REQUIRE(pos >= 0);
      for (Index c = 0; c < 3; ++c) {
        double want = 0.0;
        for (int l = 0; l < 2; ++l) want += alphas[l].value()(pos, 0) * states[l].value()(k, c);
        CHECK(f(k, c) == doctest::Approx(want).epsilon(1e-14));
      }
    }
  }
  SUBCASE("layer count mismatch") {
    CHECK_THROWS_AS(feature_extraction_output({t.constant(Tensor::Ones(nnz, 1))}, {}, g), std::invalid_argument);
  }
}

TEST_CASE("attention vector of the wrong length is rejected") {
  const Graph g = testing::small_graph(3, 1);
  Tape t;
  Rng rng(1);
  CHECK_THROWS_AS(gat_coefficients(t.constant(g.features()), g, t.constant(random_tensor(3, 4, rng)),
                                   t.constant(random_tensor(7, 1, rng))),
                  ShapeError);
}

TEST_CASE("extracted attention normalises at every layer") {
  const Graph g = testing::random_graph(20, 0.2, 3, 5, 77);
  for (std::uint64_t seed : kSeeds) {
    Rng rng(seed);
    Tape t;
    const auto layers = random_layers(t, 5, 6, 2, rng);
    const ExtractionResult r = extract_features(t.constant(g.features()), g, layers, UpdateMode::kCombined, 0.0, nullptr);
    REQUIRE(r.alphas.size() == 2);
    for (const Var& a : r.alphas) {
      for (double s : group_sums(a.value(), g)) CHECK(std::abs(s - 1.0) < 1e-9);
    }
    CHECK(r.fused_edges.rows() == g.num_directed_edges());
  }
}

TEST_CASE("two layers only see the two-hop ball") {
  Rng rng(13);
  const Index n = 7;
  std::vector<std::pair<Index, Index>> edges;
  for (Index i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  const Tensor x = random_tensor(n, 3, rng);
  Tensor x_far = x;
  for (Index v = 3; v < n; ++v) x_far.row(v).setZero();  // nodes 3.. are beyond 2 hops of node 0
  const std::vector<int> labels(n, 0);
  const Graph g = Graph::build(edges, x, labels);
  const Graph g_far = Graph::build(edges, x_far, labels);
  for (UpdateMode mode : {UpdateMode::kCombined, UpdateMode::kGcnOnly, UpdateMode::kGatOnly}) {
    Tape t;
    Rng prng(99);
    const auto layers = random_layers(t, 3, 4, 2, prng);
    const Tensor h = extract_features(t.constant(x), g, layers, mode, 0.0, nullptr).nodes.value();
    const Tensor h_far = extract_features(t.constant(x_far), g_far, layers, mode, 0.0, nullptr).nodes.value();
    CHECK((h.row(0) - h_far.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

// Seeds whose attention logits on small_graph(3, 40) fall on both sides of
// the LeakyReLU kink, at least 2e-3 away from it.
constexpr std::uint64_t kKinkSeeds[] = {3, 11, 47};

TEST_CASE("left attention gradient vanishes when no logit crosses the kink") {
  // With every logit on one branch, a_left shifts a whole neighbourhood by a
  // constant and the softmax absorbs it. Seed 23 has all logits positive.
  const Graph g = testing::small_graph(3, 40);
  Rng rng(23);
  Tape t;
  const Var h = t.variable(random_tensor(4, 3, rng));
  const Var w = t.variable(random_tensor(3, 5, rng));
  const Var a = t.variable(random_tensor(10, 1, rng));
  t.backward(probe(attend(gat_coefficients(h, g, w, a), matmul(h, w), g), 30));
  CHECK(a.grad().topRows(5).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.grad().bottomRows(5).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("layer gradients match finite differences") {
  const Graph g = testing::small_graph(3, 40);
  const auto check = [&](const std::string& name, std::vector<std::pair<Index, Index>> shapes,
                         const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                         std::span<const std::uint64_t> seeds = kSeeds) {
    for (std::uint64_t seed : seeds) {
      Rng rng(seed);
      std::vector<Tensor> params;
      for (auto [r, c] : shapes) params.push_back(random_tensor(r, c, rng));
      const GradReport rep = grad_check(
          [&](Tape& t, const std::vector<Var>& v) { return probe(f(t, v), seed + 7); }, params);
      INFO(name << " seed " << seed << " err " << rep.max_error);
      CHECK(rep.max_error < 1e-4);
    }
  };
  check("gcn", {{4, 3}, {3, 5}}, [&](Tape&, const std::vector<Var>& v) { return gcn_aggregate(v[0], g, v[1]); });
  check("sage", {{4, 3}, {3, 5}},
        [&](Tape&, const std::vector<Var>& v) { return gcn_aggregate(v[0], g, v[1], Aggregator::kMean); });
  check("gat", {{4, 3}, {3, 5}, {10, 1}}, [&](Tape&, const std::vector<Var>& v) {
    return attend(gat_coefficients(v[0], g, v[1], v[2]), matmul(v[0], v[1]), g);
  }, kKinkSeeds);
  check("combined", {{4, 3}, {3, 5}, {10, 1}},
        [&](Tape&, const std::vector<Var>& v) { return combined_update(v[0], g, v[1], v[2]).h; },
        kKinkSeeds);
  check("edge update", {{10, 3}, {3, 3}, {3, 1}},
        [&](Tape&, const std::vector<Var>& v) { return edge_update(v[0], edge_scores(v[0], v[2]), v[1]); });
  check("initial edges", {{4, 3}, {3, 4}, {3, 1}}, [&](Tape&, const std::vector<Var>& v) {
    return mul_rows(initial_edge_projection(v[0], g, v[1]), initial_edge_scores(v[0], g, v[2]));
  });
  check("extraction", {{4, 3}, {3, 4}, {8, 1}, {3, 4}, {3, 1}, {4, 4}, {8, 1}, {4, 4}, {4, 1}},
        [&](Tape&, const std::vector<Var>& v) {
          const std::vector<LayerVars> layers{{v[1], v[2], v[3], v[4]}, {v[5], v[6], v[7], v[8]}};
          const ExtractionResult r = extract_features(v[0], g, layers, UpdateMode::kCombined, 0.0, nullptr);
          return concat_columns(r.nodes, gather_rows(r.fused_edges, {0, 1, 2, 3}));
        });
}
