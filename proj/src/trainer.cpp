#include "cl3an/trainer.hpp"

#include "cl3an/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cl3an {

using namespace cl3an::ad;

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<Parameter>& params, const std::vector<Tensor>& grads,
                 const std::vector<bool>& active) {
  if (m_.empty()) {
    for (const Parameter& p : params) {
      m_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
      t_.push_back(0);
    }
  }
  if (params.size() != m_.size() || grads.size() != params.size() || active.size() != params.size()) {
    throw std::invalid_argument("AdamW: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active[i]) continue;
    const Tensor& g = grads[i];
    ++t_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_[i]));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_[i]));
    Tensor& w = params[i].value;
    w.array() -= lr_ * ((m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_) + wd_ * w.array());
  }
}

ModelConfig model_config(const TrainConfig& config, const Graph& graph) {
  ModelConfig m;
  m.input_dim = graph.feature_dim();
  m.num_classes = graph.num_classes();
  m.hidden = config.hidden;
  m.layers = config.layers;
  m.embed_dim = config.embed_dim;
  m.heads = config.heads;
  m.dropout = config.dropout;
  m.variant = config.variant;
  m.ablation = config.ablation;
  return m;
}

curriculum::CurriculumConfig effective_curriculum(const TrainConfig& train,
                                                  curriculum::CurriculumConfig curriculum) {
  curriculum.epochs = train.epochs;
  if (is_baseline(train.variant) || train.ablation != Ablation::k3EwCl) {
    curriculum.flags = {false, false, false};
  }
  return curriculum;
}

TrainResult train(const Graph& graph, const SplitAssignment& split, const TrainConfig& config,
                  const curriculum::CurriculumConfig& curriculum_in, const EpochCallback& on_epoch) {
  config.validate();
  const curriculum::CurriculumConfig cur = effective_curriculum(config, curriculum_in);
  cur.validate();
  if (split.train.empty()) throw ConfigError("split has no training nodes");

  TrainResult result{Model(model_config(config, graph), config.seed), {}};
  Model& model = result.model;
  AdamW opt(config.lr, config.weight_decay);
  Rng dropout_rng(derive_seed(config.seed, 0xd209));
  curriculum::ClassWeightState state(graph.num_classes(), cur.ema_decay);

  const std::vector<double> difficulty = curriculum::node_difficulty(graph, split.train, cur.difficulty);
  const int total = config.epochs;
  const bool selecting = config.select_checkpoint && !split.val.empty();
  std::vector<Tensor> best;
  double best_f1 = -1.0;
  for (int t = 0; t < total; ++t) {
    const StagePhase phase = stage_phase(t, total);
    Tape tape;
    const ForwardOutput fw = model.forward(tape, graph, phase, true, &dropout_rng);

    EpochRecord rec;
    rec.phase = curriculum::phase_index(t, total);
    std::vector<Index> active;
    if (cur.flags.combined_cl) {
      rec.theta = curriculum::quantile_threshold(difficulty, curriculum::threshold_quantile(t, cur));
      active = curriculum::active_training_nodes(split.train, difficulty, rec.theta);
      rec.subgraph_nodes = static_cast<Index>(
          std::count_if(difficulty.begin(), difficulty.end(), [&](double d) { return d <= rec.theta; }));
    } else {
      active = split.train;
      rec.theta = std::numeric_limits<double>::infinity();
      rec.subgraph_nodes = graph.num_nodes();
    }
    const curriculum::LossResult loss =
        curriculum::total_loss(fw.probs, graph.labels(), state, cur, active, t);
    if (!std::isfinite(loss.breakdown.total)) {
      throw DivergenceError(t, "loss is not finite at epoch " + std::to_string(t));
    }
    tape.backward(loss.total);

    std::vector<Tensor> grads;
    std::vector<bool> mask;
    double sq = 0.0;
    for (std::size_t i = 0; i < fw.bound.size(); ++i) {
      const bool on = model.block_active(model.params().at(i).block, phase);
      mask.push_back(on);
      grads.push_back(fw.bound[i].grad());
      if (on) sq += grads.back().squaredNorm();
    }
    if (!std::isfinite(sq)) throw DivergenceError(t, "gradient is not finite at epoch " + std::to_string(t));
    if (selecting && rec.phase == 2) {
      // evaluation-mode score of the parameters that produced this epoch's loss
      const double f1 = evaluate(model, graph, split.val).macro_f1;
      if (f1 > best_f1) {
        best_f1 = f1;
        result.selected_epoch = t;
        result.selected_val_f1 = f1;
        best.clear();
        for (const Parameter& p : model.params().params()) best.push_back(p.value);
      }
    }
    opt.step(model.params().params(), grads, mask);

    const Tensor& probs = fw.probs.value();
    const ClassAccuracy acc = per_class_accuracy(probs, graph.labels(), split.train, graph.num_classes());
    state.update(acc.accuracy);
    Index correct = 0;
    for (Index v : split.train) {
      Index top = 0;
      probs.row(v).maxCoeff(&top);
      correct += top == graph.labels()[v];
    }
    rec.loss = loss.breakdown;
    rec.class_accuracy = acc.accuracy;
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(split.train.size());
    rec.grad_norm = std::sqrt(sq);
    rec.engage_score = fw.engage_score;
    rec.enact_score = fw.enact_score;
    rec.stage_score = model.mean_stage_score(fw.embeddings.value(), rec.phase + 1);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(result.history.epochs.back());
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < best.size(); ++i) model.params().params()[i].value = std::move(best[i]);
  } else {
    result.selected_epoch = total - 1;
  }
  return result;
}

Tensor predict(const Model& model, const Graph& graph) {
  Tape tape;
  return model.forward(tape, graph, StagePhase{}, false, nullptr).probs.value();
}

Tensor final_embeddings(const Model& model, const Graph& graph) {
  Tape tape;
  return model.forward(tape, graph, StagePhase{}, false, nullptr).embeddings.value();
}

Metrics evaluate(const Model& model, const Graph& graph, std::span<const Index> nodes) {
  return evaluate_predictions(predict(model, graph), graph.labels(), nodes);
}

}  // namespace cl3an
