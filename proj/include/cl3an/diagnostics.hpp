#pragma once

// Gradient-stability diagnostics over a training history.

#include "cl3an/trainer.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cl3an {

/// Pearson correlation; nullopt when either series has zero variance or the
/// series hold fewer than two points.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y ~ slope * x + intercept; nullopt when x is constant.
std::optional<LinearFit> linear_fit(std::span<const double> x, std::span<const double> y);

struct PhaseStability {
  int phase = 0;
  int epochs = 0;
  double grad_norm_mean = 0.0;
  double grad_norm_variance = 0.0;  // population variance
  /// Correlation of the mean stage score with the gradient norm.
  std::optional<double> correlation;
  /// Gradient norm regressed on the stage score.
  std::optional<LinearFit> fit;
  /// Why correlation or fit is missing.
  std::string null_reason;
};

struct StabilityReport {
  std::vector<PhaseStability> phases;
};

/// Throws std::invalid_argument unless the history spans at least two phases.
StabilityReport stability_report(const TrainHistory& history);

}  // namespace cl3an
