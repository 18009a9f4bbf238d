#include "cl3an/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace cl3an {

namespace {

struct Moments {
  double mean_x = 0, mean_y = 0, sxx = 0, syy = 0, sxy = 0;
};

Moments moments(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("series lengths differ");
  Moments m;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    m.mean_x += x[i];
    m.mean_y += y[i];
  }
  m.mean_x /= n;
  m.mean_y /= n;
  // centred sums: stable for the offsets typical of gradient norms
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mean_x;
    const double dy = y[i] - m.mean_y;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  }
  return m;
}

// Treats a spread this small relative to the values as constant.
bool degenerate(double ss, double mean, std::size_t n) {
  const double scale = std::max(1.0, mean * mean) * static_cast<double>(n);
  return ss <= 1e-24 * scale;
}

}  // namespace

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2) return std::nullopt;
  const Moments m = moments(x, y);
  if (degenerate(m.sxx, m.mean_x, x.size()) || degenerate(m.syy, m.mean_y, y.size())) {
    return std::nullopt;
  }
  return std::clamp(m.sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0);
}

std::optional<LinearFit> linear_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() < 2) return std::nullopt;
  const Moments m = moments(x, y);
  if (degenerate(m.sxx, m.mean_x, x.size())) return std::nullopt;
  LinearFit f;
  f.slope = m.sxy / m.sxx;
  f.intercept = m.mean_y - f.slope * m.mean_x;
  f.r_squared = m.syy > 0.0 ? std::clamp(m.sxy * m.sxy / (m.sxx * m.syy), 0.0, 1.0) : 1.0;
  return f;
}

StabilityReport stability_report(const TrainHistory& history) {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> series;
  for (const EpochRecord& r : history.epochs) {
    auto& [score, norm] = series[r.phase];
    score.push_back(r.stage_score);
    norm.push_back(r.grad_norm);
  }
  if (series.size() < 2) {
    throw std::invalid_argument("stability report needs at least two phases, history has " +
                                std::to_string(series.size()));
  }
  StabilityReport report;
  for (const auto& [phase, s] : series) {
    const auto& [score, norm] = s;
    PhaseStability p;
    p.phase = phase;
    p.epochs = static_cast<int>(norm.size());
    const Moments m = moments(norm, norm);
    p.grad_norm_mean = m.mean_x;
    p.grad_norm_variance = m.sxx / static_cast<double>(norm.size());
    p.correlation = pearson(score, norm);
    p.fit = linear_fit(score, norm);
    if (norm.size() < 2) {
      p.null_reason = "fewer than two epochs in phase";
    } else if (!p.fit) {
      p.null_reason = "stage score is constant in phase";
    } else if (!p.correlation) {
      p.null_reason = "gradient norm is constant in phase";
    }
    report.phases.push_back(std::move(p));
  }
  return report;
}

}  // namespace cl3an
