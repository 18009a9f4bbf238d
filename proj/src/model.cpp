#include "cl3an/model.hpp"

#include "cl3an/curriculum.hpp"
#include "cl3an/embedding.hpp"
#include "cl3an/errors.hpp"
#include "cl3an/layers.hpp"
#include "cl3an/stages.hpp"

#include <stdexcept>

namespace cl3an {

using namespace cl3an::ad;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct NameEntry {
  const char* name;
  int value;
};

constexpr NameEntry kVariantNames[] = {
    {"gcn", 0}, {"sage", 1}, {"gat", 2}, {"full", 3}, {"vanilla_gcn", 4}, {"vanilla_gat", 5}};
constexpr NameEntry kAblationNames[] = {{"W/FE", 0},  {"W/EL", 1},  {"W/EW", 2},
                                        {"W/2EW", 3}, {"W/3EW", 4}, {"W/3EW-CL", 5}};

layers::UpdateMode update_mode(Variant v) {
  switch (v) {
    case Variant::kGcn: return layers::UpdateMode::kGcnOnly;
    case Variant::kSage: return layers::UpdateMode::kSageOnly;
    case Variant::kGat: return layers::UpdateMode::kGatOnly;
    default: return layers::UpdateMode::kCombined;
  }
}

}  // namespace

std::string to_string(Variant v) { return kVariantNames[static_cast<int>(v)].name; }
std::string to_string(Ablation a) { return kAblationNames[static_cast<int>(a)].name; }

Variant parse_variant(const std::string& s) {
  for (const NameEntry& e : kVariantNames) {
    if (s == e.name) return static_cast<Variant>(e.value);
  }
  throw ConfigError("unknown variant '" + s + "'");
}

Ablation parse_ablation(const std::string& s) {
  for (const NameEntry& e : kAblationNames) {
    if (s == e.name) return static_cast<Ablation>(e.value);
  }
  throw ConfigError("unknown ablation '" + s + "'");
}

bool is_baseline(Variant v) { return v == Variant::kVanillaGcn || v == Variant::kVanillaGat; }

// ---- ParameterStore ------------------------------------------------------

std::size_t ParameterStore::add(std::string name, Block block, Tensor value) {
  for (const Parameter& p : params_) {
    if (p.name == name) throw std::invalid_argument("duplicate parameter " + name);
  }
  params_.push_back({std::move(name), block, std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named " + name);
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

Index ParameterStore::scalar_count(Block block) const {
  Index n = 0;
  for (const Parameter& p : params_) n += p.block == block ? p.value.size() : 0;
  return n;
}

// ---- configuration -------------------------------------------------------

void ModelConfig::validate() const {
  if (input_dim <= 0) throw ConfigError("input_dim must be positive");
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (hidden <= 0 || layers <= 0 || embed_dim <= 0 || heads <= 0) {
    throw ConfigError("hidden, layers, embed_dim and heads must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (embed_dim % 2 != 0) throw ConfigError("embed_dim must be even (two engage views)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

StagePhase stage_phase(int epoch, int total_epochs) {
  const long long t3 = 3LL * epoch;
  return {t3 >= total_epochs, t3 >= 2LL * total_epochs};
}

// ---- Model ---------------------------------------------------------------

std::size_t Model::add(const std::string& name, Block block, Tensor value) {
  return store_.add(name, block, std::move(value));
}

Tensor Model::glorot(const std::string& name, Index fan_in, Index fan_out) const {
  Rng rng(derive_seed(seed_, fnv1a(name)));
  return glorot_uniform(fan_in, fan_out, rng);
}

bool Model::has_embedding() const {
  return !is_baseline(config_.variant) && config_.ablation != Ablation::kFe;
}

bool Model::has_stages() const {
  return !is_baseline(config_.variant) && config_.ablation >= Ablation::kEw;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const Index f = config_.input_dim;
  const Index c = config_.num_classes;
  const Index h = config_.hidden;
  const Index d = config_.embed_dim;
  auto matrix = [&](const std::string& name, Block b, Index rows, Index cols) {
    add(name, b, glorot(name, rows, cols));
  };
  auto zeros = [&](const std::string& name, Block b, Index rows, Index cols) {
    add(name, b, Tensor::Zero(rows, cols));
  };

  if (config_.variant == Variant::kVanillaGcn) {
    matrix("gcn.w1", Block::kBaseline, f, h);
    zeros("gcn.b1", Block::kBaseline, 1, h);
    matrix("gcn.w2", Block::kBaseline, h, c);
    zeros("gcn.b2", Block::kBaseline, 1, c);
  } else if (config_.variant == Variant::kVanillaGat) {
    const Index dh = d / config_.heads;
    for (int k = 0; k < config_.heads; ++k) {
      const std::string p = "gat.head" + std::to_string(k);
      matrix(p + ".w", Block::kBaseline, f, dh);
      matrix(p + ".a", Block::kBaseline, 2 * dh, 1);
    }
    matrix("gat.out.w", Block::kBaseline, d, c);
    matrix("gat.out.a", Block::kBaseline, 2 * c, 1);
    zeros("gat.out.b", Block::kBaseline, 1, c);
  } else {
    Index in = f;
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "fe" + std::to_string(l);
      matrix(p + ".w", Block::kFeature, in, h);
      matrix(p + ".a", Block::kFeature, 2 * h, 1);
      matrix(p + ".we", Block::kFeature, in, h);
      matrix(p + ".be", Block::kFeature, in, 1);
      in = h;
    }
    Index cls_in = h;
    if (has_embedding()) {
      matrix("emb.w0", Block::kEmbedding, h, d);
      zeros("emb.b0", Block::kEmbedding, 1, d);
      matrix("emb.we", Block::kEmbedding, h, d);
      zeros("emb.be", Block::kEmbedding, 1, d);
      const Index dh = d / config_.heads;
      for (int k = 0; k < config_.heads; ++k) {
        const std::string p = "emb.head" + std::to_string(k);
        matrix(p + ".w", Block::kEmbedding, d, dh);
        matrix(p + ".a", Block::kEmbedding, 2 * dh, 1);
      }
      matrix("emb.w1", Block::kEmbedding, d, d);
      zeros("emb.b1", Block::kEmbedding, 1, d);
      cls_in = d;
    }
    if (has_stages()) {
      const Index half = d / 2;
      matrix("engage.node_gcn", Block::kEngage, d, half);
      matrix("engage.node_gat", Block::kEngage, d, half);
      matrix("engage.node_attention", Block::kEngage, 2 * half, 1);
      matrix("engage.edge_gcn", Block::kEngage, d, half);
      matrix("engage.edge_gat", Block::kEngage, d, half);
      matrix("engage.edge_attention", Block::kEngage, half, 1);
      matrix("engage.a1", Block::kEngage, d, 1);
      matrix("engage.b1", Block::kEngage, d, 1);
      if (config_.ablation >= Ablation::k2Ew) {
        matrix("enact.a2", Block::kEnact, 2 * d, 1);
        matrix("enact.b2", Block::kEnact, 2 * d, 1);
      }
      if (config_.ablation >= Ablation::k3Ew) {
        add("embed.we", Block::kEmbed, Tensor::Identity(d, d));
        add("embed.we_edges", Block::kEmbed, Tensor::Identity(d, d));
      }
    }
    matrix("cls.w_final", Block::kClassifier, cls_in, d);
    matrix("cls.w_out", Block::kClassifier, d, c);
    zeros("cls.b_out", Block::kClassifier, 1, c);
  }

  const Index emb_width = is_baseline(config_.variant) ? 0 : (has_embedding() ? d : h);
  for (int k = 0; k < 3; ++k) {
    att_weight_[k] = emb_width > 0 ? glorot("stage_att" + std::to_string(k), emb_width, 1) : Tensor();
  }
}

bool Model::block_active(Block block, const StagePhase& phase) const {
  switch (block) {
    case Block::kEnact: return phase.enact;
    case Block::kEmbed: return phase.embed;
    default: return true;
  }
}

ForwardOutput Model::forward(Tape& tape, const Graph& graph, const StagePhase& phase,
                             bool training, Rng* dropout_rng) const {
  std::vector<Var> bound;
  bound.reserve(store_.size());
  for (const Parameter& p : store_.params()) {
    bound.push_back(block_active(p.block, phase) ? tape.variable(p.value) : tape.constant(p.value));
  }
  return forward_bound(tape, graph, phase, std::move(bound), training, dropout_rng);
}

ForwardOutput Model::forward_bound(Tape& tape, const Graph& graph, const StagePhase& phase,
                                   std::vector<Var> bound, bool training, Rng* dropout_rng) const {
  if (graph.feature_dim() != config_.input_dim) {
    throw ShapeError("graph has " + std::to_string(graph.feature_dim()) +
                     " features, model expects " + std::to_string(config_.input_dim));
  }
  if (bound.size() != store_.size()) {
    throw std::invalid_argument("forward_bound: " + std::to_string(bound.size()) +
                                " parameters for a store of " + std::to_string(store_.size()));
  }
  for (std::size_t i = 0; i < bound.size(); ++i) {
    const Tensor& want = store_.at(i).value;
    if (bound[i].rows() != want.rows() || bound[i].cols() != want.cols()) {
      throw ShapeError("forward_bound: parameter " + store_.at(i).name + " is " +
                       shape_string(bound[i].value()) + ", expected " + shape_string(want));
    }
  }
  const double p_drop = training ? config_.dropout : 0.0;
  if (p_drop > 0.0 && dropout_rng == nullptr) throw std::invalid_argument("dropout needs an rng");
  ForwardOutput out;
  out.bound = std::move(bound);
  auto v = [&](const std::string& name) { return out.bound[store_.find(name)]; };
  auto drop = [&](const Var& x) { return p_drop > 0.0 ? dropout(x, p_drop, *dropout_rng) : x; };
  const Var x = tape.constant(graph.features());

  if (config_.variant == Variant::kVanillaGcn) {
    const CsrMatrix& a = graph.norm_adjacency();
    const Var h1 = relu(add_row(sparse_dense_matmul(a, matmul(drop(x), v("gcn.w1"))), v("gcn.b1")));
    out.embeddings = h1;
    const Var logits = add_row(sparse_dense_matmul(a, matmul(drop(h1), v("gcn.w2"))), v("gcn.b2"));
    out.probs = row_softmax(logits);
    return out;
  }
  if (config_.variant == Variant::kVanillaGat) {
    std::vector<embedding::HeadVars> heads;
    for (int k = 0; k < config_.heads; ++k) {
      const std::string p = "gat.head" + std::to_string(k);
      heads.push_back({v(p + ".w"), v(p + ".a")});
    }
    const Var h1 = embedding::multi_head_refine(drop(x), graph, heads, config_.embed_dim);
    out.embeddings = h1;
    const Var proj = matmul(drop(h1), v("gat.out.w"));
    const Var alpha = layers::attention_from_projected(proj, graph, v("gat.out.a"));
    out.probs = row_softmax(add_row(layers::attend(alpha, proj, graph), v("gat.out.b")));
    return out;
  }

  std::vector<layers::LayerVars> fe;
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "fe" + std::to_string(l);
    fe.push_back({v(p + ".w"), v(p + ".a"), v(p + ".we"), v(p + ".be")});
  }
  const layers::ExtractionResult ex =
      layers::extract_features(x, graph, fe, update_mode(config_.variant), p_drop, dropout_rng);

  Var nodes = ex.nodes;
  Var node_pairwise = ex.alphas.back();
  Var edges;
  Var edge_pairwise;
  if (has_embedding()) {
    embedding::EmbeddingVars ev{v("emb.w0"), v("emb.b0"), v("emb.we"), v("emb.be"),
                                v("emb.w1"), v("emb.b1"), {}};
    for (int k = 0; k < config_.heads; ++k) {
      const std::string p = "emb.head" + std::to_string(k);
      ev.heads.push_back({v(p + ".w"), v(p + ".a")});
    }
    const embedding::EmbeddingResult er =
        embedding::embed(ex.nodes, ex.fused_edges, graph, ev, config_.embed_dim, p_drop, dropout_rng);
    nodes = er.combined;
    if (has_stages()) {
      const stages::ViewVars vv{v("engage.node_gcn"), v("engage.node_gat"),
                                v("engage.node_attention"), v("engage.edge_gcn"),
                                v("engage.edge_gat"), v("engage.edge_attention")};
      const stages::Views views = stages::engage_views(er.combined, er.edges, graph, vv);
      stages::EngageResult eng = stages::engage(views, graph, v("engage.a1"), v("engage.b1"));
      nodes = drop(eng.nodes);
      edges = eng.edges;
      node_pairwise = eng.scores.node_pairwise;
      edge_pairwise = eng.scores.edge_pairwise;
      out.engage_score = eng.scores.node_scores.value().mean();
      if (config_.ablation >= Ablation::k2Ew && phase.enact) {
        const stages::StageScores s =
            stages::enact(nodes, edges, eng.scores, graph, v("enact.a2"), v("enact.b2"));
        node_pairwise = s.node_pairwise;
        edge_pairwise = s.edge_pairwise;
        out.enact_score = s.node_scores.value().mean();
      }
      if (config_.ablation >= Ablation::k3Ew && phase.embed) {
        const stages::Consolidated c = stages::embed_consolidate(
            nodes, edges, node_pairwise, edge_pairwise, graph, v("embed.we"), v("embed.we_edges"));
        nodes = c.nodes;
        edges = c.edges;
      }
    }
  }
  out.embeddings = nodes;
  const curriculum::ClassifierVars cv{v("cls.w_final"), v("cls.w_out"), v("cls.b_out")};
  out.probs = curriculum::classifier_head(nodes, node_pairwise, edges, edge_pairwise, graph, cv);
  return out;
}

double Model::mean_stage_score(const Tensor& embeddings, int stage) const {
  if (stage < 1 || stage > 3) throw std::out_of_range("stage index outside {1,2,3}");
  const Tensor& w = att_weight_[stage - 1];
  if (w.size() == 0 || w.rows() != embeddings.cols()) return std::nan("");
  Tape tape;
  const Var s = stages::stage_scores(tape.constant(embeddings), stage, tape.constant(w),
                                     tape.constant(Tensor::Constant(1, 1, att_bias_[stage - 1])));
  return s.value().mean();
}

Index parameter_count(const Model& model) { return model.params().scalar_count(); }

}  // namespace cl3an
