#pragma once

#include "cl3an/tensor.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cl3an {

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double macro_auc = 0.0;
  /// Per class; NaN for classes excluded from the macro averages.
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<double> auc;
  /// confusion[true][pred].
  std::vector<std::vector<Index>> confusion;
  std::vector<int> excluded_classes;
  std::vector<std::string> warnings;
};

/// Metrics of argmax(probs) over `nodes`. Classes without support in `nodes`
/// are left out of the macro averages.
Metrics evaluate_predictions(const Tensor& probs, std::span<const int> labels,
                             std::span<const Index> nodes);

/// Mean per-class F1 over the classes present in `truth`.
double macro_f1(std::span<const int> truth, std::span<const int> predicted, int num_classes);

/// Probability that a random positive outscores a random negative, ties
/// counting one half. nullopt without both positives and negatives.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const char> positive);

struct ClassAccuracy {
  std::vector<double> accuracy;
  /// Classes with no node in the set; their accuracy is reported as 0.
  std::vector<int> empty_classes;
};

ClassAccuracy per_class_accuracy(const Tensor& probs, std::span<const int> labels,
                                 std::span<const Index> nodes, int num_classes);

/// Row-wise argmax (first maximum wins).
std::vector<int> argmax_rows(const Tensor& probs);

}  // namespace cl3an
