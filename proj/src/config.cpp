#include "cl3an/config.hpp"

#include "cl3an/errors.hpp"

#include "json.hpp"

#include <set>

namespace cl3an {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
  }
  ObjectReader(const ObjectReader&) = delete;

  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown key \"" + where_ + "." + key + "\"");
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("\"" + where_ + "." + key + "\" has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json to_json(const SbmSpec& s) {
  return {{"class_sizes", s.class_sizes}, {"p_intra", s.p_intra},     {"p_inter", s.p_inter},
          {"feature_dim", s.feature_dim}, {"mean_scale", s.mean_scale}, {"noise", s.noise},
          {"seed", s.seed}};
}

SbmSpec sbm_from(const json& j, const std::string& where) {
  SbmSpec s;
  ObjectReader r(j, where);
  r.get("class_sizes", s.class_sizes);
  r.get("p_intra", s.p_intra);
  r.get("p_inter", s.p_inter);
  r.get("feature_dim", s.feature_dim);
  r.get("mean_scale", s.mean_scale);
  r.get("noise", s.noise);
  r.get("seed", s.seed);
  return s;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"dropout", c.dropout},
          {"hidden", c.hidden},
          {"embed_dim", c.embed_dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"seed", c.seed},
          {"variant", to_string(c.variant)},
          {"ablation", to_string(c.ablation)},
          {"batch_size", c.batch_size},
          {"select_checkpoint", c.select_checkpoint}};
}

TrainConfig train_from(const json& j, const std::string& where) {
  TrainConfig c;
  ObjectReader r(j, where);
  r.get("epochs", c.epochs);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("dropout", c.dropout);
  r.get("hidden", c.hidden);
  r.get("embed_dim", c.embed_dim);
  r.get("heads", c.heads);
  r.get("layers", c.layers);
  r.get("seed", c.seed);
  std::string variant = to_string(c.variant);
  std::string ablation = to_string(c.ablation);
  r.get("variant", variant);
  r.get("ablation", ablation);
  c.variant = parse_variant(variant);
  c.ablation = parse_ablation(ablation);
  r.get("batch_size", c.batch_size);
  r.get("select_checkpoint", c.select_checkpoint);
  return c;
}

json to_json(const curriculum::CurriculumConfig& c) {
  json phases = json::array();
  for (const auto& p : c.phases) phases.push_back({p.lambda_c, p.lambda_e});
  return {{"epochs", c.epochs},
          {"phases", phases},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lambda3", c.lambda3},
          {"tau", c.tau},
          {"difficulty",
           {{"degree", c.difficulty.degree},
            {"heterophily", c.difficulty.heterophily},
            {"rarity", c.difficulty.rarity}}},
          {"q_start", c.q_start},
          {"q_end", c.q_end},
          {"ramp_end", c.ramp_end},
          {"ema_decay", c.ema_decay},
          {"flags",
           {{"entropy", c.flags.entropy},
            {"time_cl", c.flags.time_cl},
            {"combined_cl", c.flags.combined_cl}}}};
}

curriculum::CurriculumConfig curriculum_from(const json& j, const std::string& where) {
  curriculum::CurriculumConfig c;
  ObjectReader r(j, where);
  r.get("epochs", c.epochs);
  if (const json* phases = r.child("phases")) {
    std::vector<std::vector<double>> rows;
    try {
      rows = phases->get<std::vector<std::vector<double>>>();
    } catch (const json::exception&) {
      throw ConfigError("\"" + r.path("phases") + "\" must be a list of [lambda_c, lambda_e] pairs");
    }
    c.phases.clear();
    for (const auto& row : rows) {
      if (row.size() != 2) throw ConfigError("\"" + r.path("phases") + "\" rows need two entries");
      c.phases.push_back({row[0], row[1]});
    }
  }
  r.get("lambda1", c.lambda1);
  r.get("lambda2", c.lambda2);
  r.get("lambda3", c.lambda3);
  r.get("tau", c.tau);
  if (const json* d = r.child("difficulty")) {
    ObjectReader dr(*d, r.path("difficulty"));
    dr.get("degree", c.difficulty.degree);
    dr.get("heterophily", c.difficulty.heterophily);
    dr.get("rarity", c.difficulty.rarity);
  }
  r.get("q_start", c.q_start);
  r.get("q_end", c.q_end);
  r.get("ramp_end", c.ramp_end);
  r.get("ema_decay", c.ema_decay);
  if (const json* f = r.child("flags")) {
    ObjectReader fr(*f, r.path("flags"));
    fr.get("entropy", c.flags.entropy);
    fr.get("time_cl", c.flags.time_cl);
    fr.get("combined_cl", c.flags.combined_cl);
  }
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.manifest.empty() == !dataset.synthetic.has_value()) {
    throw ConfigError("dataset needs exactly one of a manifest or a synthetic spec");
  }
  if (dataset.synthetic) {
    const SbmSpec& s = *dataset.synthetic;
    if (s.class_sizes.size() < 2) throw ConfigError("synthetic graph needs at least two classes");
    for (Index n : s.class_sizes) {
      if (n <= 0) throw ConfigError("synthetic class sizes must be positive");
    }
    if (!(s.p_intra >= 0 && s.p_intra <= 1 && s.p_inter >= 0 && s.p_inter <= 1)) {
      throw ConfigError("edge probabilities must lie in [0,1]");
    }
    if (s.feature_dim <= 0) throw ConfigError("synthetic feature_dim must be positive");
    if (s.noise < 0 || s.mean_scale < 0) throw ConfigError("synthetic noise and mean_scale must be >= 0");
  }
  train.validate();
  curriculum.validate();
  if (!(imbalance.rho > 0.0 && imbalance.rho <= 1.0)) throw ConfigError("rho must lie in (0,1]");
  if (split.train <= 0 || split.val < 0 || split.test < 0 ||
      split.train + split.val + split.test > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be nonnegative, train positive, sum <= 1");
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("seeds must be distinct");
}

std::string to_json(const RunConfig& c) {
  json dataset = json::object();
  if (!c.dataset.manifest.empty()) dataset["manifest"] = c.dataset.manifest;
  if (c.dataset.synthetic) dataset["synthetic"] = to_json(*c.dataset.synthetic);
  const json j = {{"schema", kRunConfigSchema},
                  {"dataset", dataset},
                  {"train", to_json(c.train)},
                  {"curriculum", to_json(c.curriculum)},
                  {"imbalance",
                   {{"rho", c.imbalance.rho},
                    {"minority_classes", c.imbalance.minority_classes},
                    {"seed", c.imbalance.seed}}},
                  {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
                  {"output_dir", c.output_dir},
                  {"seeds", c.seeds}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(j, "config");
  std::string schema = kRunConfigSchema;
  r.get("schema", schema);
  if (schema != kRunConfigSchema) throw ConfigError("unsupported config schema \"" + schema + "\"");
  if (const json* d = r.child("dataset")) {
    ObjectReader dr(*d, r.path("dataset"));
    dr.get("manifest", c.dataset.manifest);
    if (const json* s = dr.child("synthetic")) c.dataset.synthetic = sbm_from(*s, dr.path("synthetic"));
  }
  if (const json* t = r.child("train")) c.train = train_from(*t, r.path("train"));
  if (const json* cu = r.child("curriculum")) c.curriculum = curriculum_from(*cu, r.path("curriculum"));
  if (const json* im = r.child("imbalance")) {
    ObjectReader ir(*im, r.path("imbalance"));
    ir.get("rho", c.imbalance.rho);
    ir.get("minority_classes", c.imbalance.minority_classes);
    ir.get("seed", c.imbalance.seed);
  }
  if (const json* sp = r.child("split")) {
    ObjectReader sr(*sp, r.path("split"));
    sr.get("train", c.split.train);
    sr.get("val", c.split.val);
    sr.get("test", c.split.test);
  }
  r.get("output_dir", c.output_dir);
  r.get("seeds", c.seeds);
  return c;
}

}  // namespace cl3an
