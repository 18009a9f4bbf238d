#include "cl3an/metrics.hpp"

#include "cl3an/diagnostics.hpp"
#include "cl3an/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <numeric>

using namespace cl3an;

namespace {

// Probability rows whose argmax is `pred`, with a margin.
Tensor one_hot_probs(const std::vector<int>& pred, int classes) {
  Tensor p = Tensor::Constant(static_cast<Index>(pred.size()), classes, 0.1 / classes);
  for (std::size_t i = 0; i < pred.size(); ++i) p(static_cast<Index>(i), pred[i]) += 0.9;
  return p;
}

std::vector<Index> iota_nodes(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("perfect predictions score one everywhere") {
  const std::vector<int> labels{0, 1, 2, 1, 0, 2};
  const Metrics m = evaluate_predictions(one_hot_probs(labels, 3), labels, iota_nodes(6));
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_f1 == 1.0);
  CHECK(m.macro_auc == 1.0);
  CHECK(m.excluded_classes.empty());
}

TEST_CASE("macro F1 of a hand confusion matrix") {
  // class 0: tp 1, fn 1 -> F1 2/3; class 1: tp 2, fp 1 -> F1 4/5
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  CHECK(macro_f1(truth, pred, 2) == doctest::Approx((2.0 / 3.0 + 4.0 / 5.0) / 2.0).epsilon(1e-15));
  CHECK(std::abs(macro_f1(truth, pred, 2) - 0.7333) < 1e-4);
  const Metrics m = evaluate_predictions(one_hot_probs(pred, 2), truth, iota_nodes(4));
  CHECK(m.macro_f1 == doctest::Approx(0.7333333333333333).epsilon(1e-15));
  CHECK(m.accuracy == 0.75);
  CHECK(m.precision[0] == 1.0);
  CHECK(m.recall[0] == 0.5);
  CHECK(m.precision[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(m.recall[1] == 1.0);
}

TEST_CASE("binary AUC counts concordant pairs") {
  const std::vector<double> scores{0.9, 0.4, 0.3, 0.5};
  const std::vector<char> positive{1, 1, 0, 0};
  CHECK(binary_auc(scores, positive).value() == 0.75);
  // a tie counts one half
  const std::vector<double> tied{0.5, 0.2, 0.5};
  const std::vector<char> pos_tied{1, 0, 0};
  CHECK(binary_auc(tied, pos_tied).value() == 0.75);
  const std::vector<char> all_pos{1, 1, 1, 1};
  CHECK_FALSE(binary_auc(scores, all_pos).has_value());
}

TEST_CASE("random scores have AUC near one half") {
  Rng rng(2024);
  std::vector<double> scores(1000);
  std::vector<char> positive(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    scores[i] = rng.uniform(0.0, 1.0);
    positive[i] = i % 2 == 0;
  }
  const double auc = binary_auc(scores, positive).value();
  CHECK(auc >= 0.4);
  CHECK(auc <= 0.6);
}

TEST_CASE("confusion matrix agrees with accuracy and supports") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Index n = 40;
    const int c = 4;
    Tensor p = testing::random_tensor(n, c, rng).array().exp();
    for (Index i = 0; i < n; ++i) p.row(i) /= p.row(i).sum();
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) labels[i] = static_cast<int>(rng.uniform(0.0, 4.0)) % c;
    const std::vector<Index> nodes = iota_nodes(n);
    const Metrics m = evaluate_predictions(p, labels, nodes);
    Index trace = 0, total = 0;
    for (int i = 0; i < c; ++i) {
      Index row = 0;
      for (int j = 0; j < c; ++j) {
        row += m.confusion[i][j];
        total += m.confusion[i][j];
      }
      trace += m.confusion[i][i];
      CHECK(row == std::count(labels.begin(), labels.end(), i));
    }
    CHECK(static_cast<double>(trace) / static_cast<double>(total) == m.accuracy);
    for (double x : {m.accuracy, m.macro_f1, m.macro_auc}) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("classes absent from the node set are excluded with a warning") {
  const std::vector<int> labels{0, 0, 1, 1, 2};
  const std::vector<Index> nodes{0, 1, 2, 3};
  const Metrics m = evaluate_predictions(one_hot_probs({0, 0, 1, 1, 0}, 3), labels, nodes);
  CHECK(m.excluded_classes == std::vector<int>{2});
  CHECK_FALSE(m.warnings.empty());
  CHECK(m.macro_f1 == 1.0);
  CHECK(std::isnan(m.f1[2]));
}

TEST_CASE("per-class accuracy") {
  // class 0 has four nodes with three correct; class 2 has no nodes
  const std::vector<int> labels{0, 0, 0, 0, 1, 1, 2};
  const Tensor p = one_hot_probs({0, 0, 1, 0, 1, 1, 2}, 3);
  const std::vector<Index> nodes{0, 1, 2, 3, 4, 5};
  const ClassAccuracy acc = per_class_accuracy(p, labels, nodes, 3);
  CHECK(acc.accuracy[0] == 0.75);
  CHECK(acc.accuracy[1] == 1.0);
  CHECK(acc.accuracy[2] == 0.0);
  CHECK(acc.empty_classes == std::vector<int>{2});
  const ClassAccuracy all = per_class_accuracy(one_hot_probs(labels, 3), labels, iota_nodes(7), 3);
  for (double a : all.accuracy) CHECK(a == 1.0);
  CHECK(all.empty_classes.empty());
}

TEST_CASE("argmax takes the first maximum") {
  Tensor p(2, 3);
  p << 0.2, 0.4, 0.4, 0.5, 0.3, 0.2;
  CHECK(argmax_rows(p) == std::vector<int>{1, 0});
}

TEST_CASE("pearson and linear fit") {
  std::vector<double> x(50), y(50);
  for (int i = 0; i < 50; ++i) {
    x[i] = 0.1 * i;
    y[i] = 2.0 * x[i];
  }
  CHECK(pearson(x, y).value() == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> flat(50, 3.0);
  CHECK_FALSE(pearson(flat, y).has_value());
  CHECK_FALSE(pearson(x, flat).has_value());
  CHECK_FALSE(linear_fit(flat, y).has_value());
  const LinearFit exact = linear_fit(x, y).value();
  CHECK(exact.slope == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(exact.r_squared == doctest::Approx(1.0).epsilon(1e-12));

  // noisy line of slope 1.2 over 200 points
  Rng rng(77);
  std::vector<double> nx(200), ny(200);
  for (int i = 0; i < 200; ++i) {
    nx[i] = rng.uniform(0.0, 10.0);
    ny[i] = 1.2 * nx[i] + 0.5 + rng.normal();
  }
  const LinearFit noisy = linear_fit(nx, ny).value();
  CHECK(std::abs(noisy.slope - 1.2) <= 0.1);
  const double r = pearson(nx, ny).value();
  CHECK(r >= -1.0);
  CHECK(r <= 1.0);
  CHECK(noisy.r_squared == doctest::Approx(r * r).epsilon(1e-12));
}

TEST_CASE("stability report groups epochs by phase") {
  TrainHistory h;
  for (int t = 0; t < 9; ++t) {
    EpochRecord r;
    r.phase = t / 3;
    r.stage_score = 0.1 * t;
    r.grad_norm = r.phase == 1 ? 5.0 : 3.0 * r.stage_score + 1.0;
    h.epochs.push_back(r);
  }
  const StabilityReport rep = stability_report(h);
  REQUIRE(rep.phases.size() == 3);
  CHECK(rep.phases[0].epochs == 3);
  CHECK(rep.phases[0].correlation.value() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.phases[0].fit->slope == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(rep.phases[0].grad_norm_mean == doctest::Approx(1.3).epsilon(1e-12));
  // population variance of {1.0, 1.3, 1.6}
  CHECK(rep.phases[0].grad_norm_variance == doctest::Approx(0.06).epsilon(1e-12));
  CHECK_FALSE(rep.phases[1].correlation.has_value());
  CHECK(rep.phases[1].null_reason == "gradient norm is constant in phase");
  CHECK(rep.phases[1].grad_norm_variance == 0.0);

  TrainHistory single;
  single.epochs.resize(4);
  CHECK_THROWS_AS(stability_report(single), std::invalid_argument);
}
