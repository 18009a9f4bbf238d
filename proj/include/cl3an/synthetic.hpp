#pragma once

#include "cl3an/graph.hpp"

#include <cstdint>
#include <vector>

namespace cl3an {

/// Planted-partition graph with Gaussian class-mean features.
struct SbmSpec {
  std::vector<Index> class_sizes{100, 100, 100, 100};
  double p_intra = 0.05;
  double p_inter = 0.005;
  Index feature_dim = 16;
  /// Class means are drawn from N(0, mean_scale^2 I).
  double mean_scale = 1.0;
  /// Per-node noise standard deviation around the class mean.
  double noise = 1.0;
  std::uint64_t seed = 0;
  friend bool operator==(const SbmSpec&, const SbmSpec&) = default;
};

Graph generate_sbm(const SbmSpec& spec);

}  // namespace cl3an
