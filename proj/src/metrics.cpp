#include "cl3an/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cl3an {

namespace {

double safe_ratio(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f1_of(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index r = 0; r < probs.rows(); ++r) {
    Index best = 0;
    probs.row(r).maxCoeff(&best);
    out[r] = static_cast<int>(best);
  }
  return out;
}

double macro_f1(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size() || truth.empty()) {
    throw std::invalid_argument("macro_f1: empty or mismatched inputs");
  }
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), support(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++support[truth[i]];
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (support[c] == 0) continue;
    sum += f1_of(safe_ratio(tp[c], tp[c] + fp[c]), tp[c] / support[c]);
    ++present;
  }
  return sum / present;
}

std::optional<double> binary_auc(std::span<const double> scores, std::span<const char> positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("binary_auc: size mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney: average ranks over tied blocks
  double pos_rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

Metrics evaluate_predictions(const Tensor& probs, std::span<const int> labels,
                             std::span<const Index> nodes) {
  if (nodes.empty()) throw std::invalid_argument("evaluate: empty node set");
  const int c_count = static_cast<int>(probs.cols());
  Metrics m;
  m.confusion.assign(c_count, std::vector<Index>(c_count, 0));
  std::vector<int> truth, pred;
  truth.reserve(nodes.size());
  pred.reserve(nodes.size());
  Index correct = 0;
  for (Index v : nodes) {
    if (v < 0 || v >= probs.rows()) throw std::out_of_range("evaluate: node index out of range");
    Index best = 0;
    probs.row(v).maxCoeff(&best);
    const int y = labels[static_cast<std::size_t>(v)];
    truth.push_back(y);
    pred.push_back(static_cast<int>(best));
    ++m.confusion[y][best];
    correct += y == best;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(nodes.size());

  const double nan = std::nan("");
  m.precision.assign(c_count, nan);
  m.recall.assign(c_count, nan);
  m.f1.assign(c_count, nan);
  m.auc.assign(c_count, nan);
  double f1_sum = 0.0, auc_sum = 0.0;
  int f1_n = 0, auc_n = 0;
  std::vector<double> scores(nodes.size());
  std::vector<char> pos(nodes.size());
  for (int c = 0; c < c_count; ++c) {
    Index tp = m.confusion[c][c], support = 0, predicted = 0;
    for (int k = 0; k < c_count; ++k) {
      support += m.confusion[c][k];
      predicted += m.confusion[k][c];
    }
    if (support == 0) {
      m.excluded_classes.push_back(c);
      m.warnings.push_back("class " + std::to_string(c) + " absent from node set; excluded from macro averages");
      continue;
    }
    m.precision[c] = safe_ratio(static_cast<double>(tp), static_cast<double>(predicted));
    m.recall[c] = static_cast<double>(tp) / static_cast<double>(support);
    m.f1[c] = f1_of(m.precision[c], m.recall[c]);
    f1_sum += m.f1[c];
    ++f1_n;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      scores[i] = probs(nodes[i], c);
      pos[i] = truth[i] == c;
    }
    if (const auto a = binary_auc(scores, pos)) {
      m.auc[c] = *a;
      auc_sum += *a;
      ++auc_n;
    }
  }
  m.macro_f1 = f1_sum / f1_n;
  m.macro_auc = auc_n > 0 ? auc_sum / auc_n : nan;
  if (auc_n == 0) m.warnings.push_back("AUC undefined: node set holds a single class");
  return m;
}

ClassAccuracy per_class_accuracy(const Tensor& probs, std::span<const int> labels,
                                 std::span<const Index> nodes, int num_classes) {
  std::vector<double> hit(num_classes, 0.0), total(num_classes, 0.0);
  for (Index v : nodes) {
    Index best = 0;
    probs.row(v).maxCoeff(&best);
    const int y = labels[static_cast<std::size_t>(v)];
    total[y] += 1.0;
    hit[y] += y == best ? 1.0 : 0.0;
  }
  ClassAccuracy out;
  out.accuracy.assign(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    if (total[c] == 0.0) {
      out.empty_classes.push_back(c);
    } else {
      out.accuracy[c] = hit[c] / total[c];
    }
  }
  return out;
}

}  // namespace cl3an
