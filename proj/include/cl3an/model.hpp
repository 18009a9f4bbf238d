#pragma once

// Model assembly: parameter storage, the architecture variants and ablation
// levels, and one forward pass bound to a tape.

#include "cl3an/autodiff.hpp"
#include "cl3an/graph.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cl3an {

enum class Variant { kGcn, kSage, kGat, kFull, kVanillaGcn, kVanillaGat };
enum class Ablation { kFe, kEl, kEw, k2Ew, k3Ew, k3EwCl };

inline constexpr std::array<Ablation, 6> kAllAblations{Ablation::kFe,  Ablation::kEl,
                                                       Ablation::kEw,  Ablation::k2Ew,
                                                       Ablation::k3Ew, Ablation::k3EwCl};

std::string to_string(Variant v);
std::string to_string(Ablation a);
/// Throw ConfigError on unknown names.
Variant parse_variant(const std::string& s);
Ablation parse_ablation(const std::string& s);

bool is_baseline(Variant v);

enum class Block { kFeature, kEmbedding, kEngage, kEnact, kEmbed, kClassifier, kBaseline };

struct Parameter {
  std::string name;
  Block block;
  Tensor value;
};

class ParameterStore {
 public:
  std::size_t add(std::string name, Block block, Tensor value);
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  const Parameter& at(std::size_t i) const { return params_.at(i); }
  /// Index of the named parameter; throws std::out_of_range when absent.
  std::size_t find(const std::string& name) const;
  /// Number of scalar learnables.
  Index scalar_count() const;
  Index scalar_count(Block block) const;

 private:
  std::vector<Parameter> params_;
};

struct ModelConfig {
  Index input_dim = 0;
  int num_classes = 0;
  int hidden = 16;
  int layers = 2;
  int embed_dim = 64;
  int heads = 8;
  double dropout = 0.5;
  Variant variant = Variant::kFull;
  Ablation ablation = Ablation::k3EwCl;

  /// Throws ConfigError.
  void validate() const;
};

/// Which late stages are live. Engage is always live when present.
struct StagePhase {
  bool enact = true;
  bool embed = true;
};

/// Enact from t >= T/3, Embed from t >= 2T/3.
StagePhase stage_phase(int epoch, int total_epochs);

struct ForwardOutput {
  ad::Var probs;        // [N x C]
  ad::Var embeddings;   // node representation entering the classifier
  /// Mean scalar node score of Engage / Enact; NaN when not computed.
  double engage_score = std::nan("");
  double enact_score = std::nan("");
  /// One Var per stored parameter, aligned with ParameterStore::params().
  std::vector<ad::Var> bound;
};

class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  /// Seed of the initialisation and of the diagnostic projections.
  std::uint64_t seed() const { return seed_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// Blocks whose parameters receive gradients under `phase`.
  bool block_active(Block block, const StagePhase& phase) const;

  /// Binds parameters onto `tape` (inactive blocks as constants) and runs the
  /// network. Dropout applies only when `training` is set.
  ForwardOutput forward(ad::Tape& tape, const Graph& graph, const StagePhase& phase, bool training,
                        Rng* dropout_rng) const;
  /// Runs the network on caller-bound parameters, one Var per stored
  /// parameter in store order. Used to differentiate the whole model.
  ForwardOutput forward_bound(ad::Tape& tape, const Graph& graph, const StagePhase& phase,
                              std::vector<ad::Var> bound, bool training, Rng* dropout_rng) const;

  /// Diagnostic stage score sigmoid(z W_att^(k) + b_att^(k)) averaged over
  /// nodes, k in {1,2,3}. Uses fixed random projections.
  double mean_stage_score(const Tensor& embeddings, int stage) const;

  bool has_embedding() const;
  bool has_stages() const;

 private:
  std::size_t add(const std::string& name, Block block, Tensor value);
  Tensor glorot(const std::string& name, Index fan_in, Index fan_out) const;

  ModelConfig config_;
  std::uint64_t seed_;
  ParameterStore store_;
  std::array<Tensor, 3> att_weight_;
  std::array<double, 3> att_bias_{};
};

/// Number of scalar learnables.
Index parameter_count(const Model& model);

}  // namespace cl3an
