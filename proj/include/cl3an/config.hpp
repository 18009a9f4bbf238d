#pragma once

// Run configuration and its JSON form. Parsing is strict: unknown keys and
// wrongly typed values raise ConfigError, missing keys keep their defaults.

#include "cl3an/curriculum.hpp"
#include "cl3an/graph.hpp"
#include "cl3an/synthetic.hpp"
#include "cl3an/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cl3an {

inline constexpr const char* kRunConfigSchema = "cl3an.run-config/1";

/// Exactly one of `manifest` (a path or a name under $CL3AN_DATA_DIR) and
/// `synthetic` is set.
struct DatasetRef {
  std::string manifest;
  std::optional<SbmSpec> synthetic;
  friend bool operator==(const DatasetRef&, const DatasetRef&) = default;
};

struct RunConfig {
  DatasetRef dataset;
  TrainConfig train;
  curriculum::CurriculumConfig curriculum;
  ImbalanceSpec imbalance;
  SplitFractions split;
  std::string output_dir = "runs";
  /// Each seed drives the split, the imbalance draw and training. Synthetic
  /// graphs are regenerated with seed synthetic.seed + run seed.
  std::vector<std::uint64_t> seeds{1};

  /// Throws ConfigError.
  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

std::string to_json(const RunConfig& config);
/// Throws ConfigError on malformed input.
RunConfig run_config_from_json(const std::string& text);

}  // namespace cl3an
