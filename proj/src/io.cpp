#include "cl3an/io.hpp"

#include "cl3an/errors.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace cl3an::io {

using nlohmann::json;

namespace {

std::string fmt_double(double v, int digits = 17) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

[[noreturn]] void fail(const fs::path& file, std::size_t line, const std::string& what) {
  throw DataError(file.string() + ":" + std::to_string(line) + ": " + what);
}

// Line-oriented CSV reader: skips blank lines and, on the first line only, a
// header whose first field is not numeric.
template <class Fn>
void for_each_row(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_fields(line);
    double probe = 0;
    if (number == 1 && !parse_number(fields[0], probe)) continue;
    fn(fields, number);
  }
}

template <class T>
T require_field(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key)) throw DataError(file.string() + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(file.string() + ": field \"" + key + "\" has the wrong type");
  }
}

Tensor load_csv_features(const fs::path& path, Index n, Index f) {
  Tensor x(n, f);
  Index row = 0;
  for_each_row(path, [&](const std::vector<std::string>& fields, std::size_t line) {
    if (row >= n) fail(path, line, "more than " + std::to_string(n) + " feature rows");
    if (static_cast<Index>(fields.size()) != f) {
      fail(path, line, std::to_string(fields.size()) + " columns, expected " + std::to_string(f));
    }
    for (Index c = 0; c < f; ++c) {
      double v = 0;
      if (!parse_number(fields[c], v)) fail(path, line, "unparseable value \"" + fields[c] + "\"");
      x(row, c) = v;
    }
    ++row;
  });
  if (row != n) {
    throw DataError(path.string() + ": " + std::to_string(row) + " feature rows, expected " +
                    std::to_string(n));
  }
  return x;
}

Tensor load_f32_features(const fs::path& path, Index n, Index f) {
  static_assert(std::endian::native == std::endian::little, "binary features are little-endian");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const auto expected = static_cast<std::uintmax_t>(n) * static_cast<std::uintmax_t>(f) * 4u;
  const std::uintmax_t size = fs::file_size(path);
  if (size != expected) {
    throw DataError(path.string() + ": " + std::to_string(size) + " bytes, header declares " +
                    std::to_string(n) + "x" + std::to_string(f) + " float32 (" +
                    std::to_string(expected) + " bytes)");
  }
  std::vector<float> buf(static_cast<std::size_t>(n * f));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
  if (!in) throw DataError(path.string() + ": short read");
  Tensor x(n, f);
  for (Index i = 0; i < n * f; ++i) x.data()[i] = static_cast<double>(buf[i]);
  return x;
}

}  // namespace

DatasetManifest read_manifest(const fs::path& manifest_path) {
  json j;
  {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest " + manifest_path.string());
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw DataError(manifest_path.string() + ": " + e.what());
    }
  }
  DatasetManifest m;
  m.dir = manifest_path.parent_path();
  m.format_version = require_field<int>(j, "format_version", manifest_path);
  if (m.format_version != kDatasetFormatVersion) {
    throw DataError(manifest_path.string() + ": unknown format_version " +
                    std::to_string(m.format_version));
  }
  m.name = require_field<std::string>(j, "name", manifest_path);
  m.num_nodes = require_field<Index>(j, "num_nodes", manifest_path);
  m.num_classes = require_field<int>(j, "num_classes", manifest_path);
  m.feature_dim = require_field<Index>(j, "feature_dim", manifest_path);
  m.feature_file = require_field<std::string>(j, "feature_file", manifest_path);
  m.edge_file = require_field<std::string>(j, "edge_file", manifest_path);
  m.label_file = require_field<std::string>(j, "label_file", manifest_path);
  if (m.num_nodes <= 0 || m.num_classes <= 0 || m.feature_dim <= 0) {
    throw DataError(manifest_path.string() + ": num_nodes, num_classes and feature_dim must be positive");
  }
  const std::string dtype = j.value("feature_dtype", std::string("csv"));
  if (dtype == "csv") {
    m.feature_format = FeatureFormat::kCsv;
  } else if (dtype == "float32") {
    m.feature_format = FeatureFormat::kFloat32;
    // binary files carry no shape of their own, so the header must declare it
    const auto shape = require_field<std::vector<Index>>(j, "feature_shape", manifest_path);
    if (shape.size() != 2 || shape[0] != m.num_nodes || shape[1] != m.feature_dim) {
      throw DataError(manifest_path.string() + ": feature_shape disagrees with num_nodes x feature_dim");
    }
  } else {
    throw DataError(manifest_path.string() + ": unknown feature_dtype \"" + dtype + "\"");
  }
  return m;
}

Graph load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  const Index n = m.num_nodes;

  const fs::path label_path = m.dir / m.label_file;
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  for_each_row(label_path, [&](const std::vector<std::string>& f, std::size_t line) {
    Index node = 0;
    int label = 0;
    if (f.size() != 2 || !parse_number(f[0], node) || !parse_number(f[1], label)) {
      fail(label_path, line, "expected \"node,label\"");
    }
    if (node < 0 || node >= n) fail(label_path, line, "node " + f[0] + " outside [0," + std::to_string(n) + ")");
    if (label < 0 || label >= m.num_classes) {
      fail(label_path, line, "label " + f[1] + " outside [0," + std::to_string(m.num_classes) + ")");
    }
    if (labels[node] != -1) fail(label_path, line, "node " + f[0] + " labelled twice");
    labels[node] = label;
  });
  for (Index v = 0; v < n; ++v) {
    if (labels[v] < 0) throw DataError(label_path.string() + ": node " + std::to_string(v) + " has no label");
  }

  const fs::path edge_path = m.dir / m.edge_file;
  std::vector<std::pair<Index, Index>> edges;
  for_each_row(edge_path, [&](const std::vector<std::string>& f, std::size_t line) {
    Index a = 0, b = 0;
    if (f.size() != 2 || !parse_number(f[0], a) || !parse_number(f[1], b)) {
      fail(edge_path, line, "expected \"src,dst\"");
    }
    if (a < 0 || b < 0 || a >= n || b >= n) fail(edge_path, line, "endpoint outside [0," + std::to_string(n) + ")");
    edges.emplace_back(a, b);
  });

  const fs::path feature_path = m.dir / m.feature_file;
  Tensor x = m.feature_format == FeatureFormat::kCsv
                 ? load_csv_features(feature_path, n, m.feature_dim)
                 : load_f32_features(feature_path, n, m.feature_dim);
  try {
    return Graph::build(edges, std::move(x), std::move(labels), m.num_classes);
  } catch (const DataError& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
}

fs::path resolve_dataset(const std::string& ref) {
  const fs::path p(ref);
  if (fs::is_regular_file(p)) return p;
  if (fs::is_directory(p)) {
    if (fs::is_regular_file(p / "meta.json")) return p / "meta.json";
    throw DataError("directory " + ref + " has no meta.json");
  }
  const char* dir = std::getenv(kDataDirEnv);
  if (dir != nullptr && *dir != '\0') {
    const fs::path candidate = fs::path(dir) / ref / "meta.json";
    if (fs::is_regular_file(candidate)) return candidate;
    throw DataError("dataset \"" + ref + "\" not found (looked for " + candidate.string() + ")");
  }
  throw DataError("dataset \"" + ref + "\" not found and " + kDataDirEnv + " is unset");
}

void save_dataset(const Graph& graph, const fs::path& dir, const std::string& name,
                  FeatureFormat format) {
  const Index n = graph.num_nodes();
  const Index f = graph.feature_dim();
  std::string edges = "src,dst\n";
  for (const Edge& e : graph.edges()) edges += std::to_string(e.u) + "," + std::to_string(e.v) + "\n";
  std::string labels = "node,label\n";
  for (Index v = 0; v < n; ++v) labels += std::to_string(v) + "," + std::to_string(graph.labels()[v]) + "\n";

  json meta = {{"name", name},          {"num_nodes", n},           {"num_classes", graph.num_classes()},
               {"feature_dim", f},      {"edge_file", "edges.csv"}, {"label_file", "labels.csv"},
               {"format_version", kDatasetFormatVersion}};
  if (format == FeatureFormat::kCsv) {
    std::string x;
    for (Index r = 0; r < n; ++r) {
      for (Index c = 0; c < f; ++c) {
        if (c) x += ',';
        x += fmt_double(graph.features()(r, c));
      }
      x += '\n';
    }
    write_file_atomic(dir / "features.csv", x);
    meta["feature_file"] = "features.csv";
    meta["feature_dtype"] = "csv";
  } else {
    std::string x(static_cast<std::size_t>(n * f) * 4, '\0');
    for (Index i = 0; i < n * f; ++i) {
      const float v = static_cast<float>(graph.features().data()[i]);
      std::memcpy(x.data() + 4 * i, &v, 4);
    }
    write_file_atomic(dir / "features.f32", x);
    meta["feature_file"] = "features.f32";
    meta["feature_dtype"] = "float32";
    meta["feature_shape"] = {n, f};
  }
  write_file_atomic(dir / "edges.csv", edges);
  write_file_atomic(dir / "labels.csv", labels);
  // meta.json last: a manifest only appears once its files exist
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      fs::remove(tmp, ignored);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string sha1_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string git_blob_hash(std::string_view data) {
  std::string blob = "blob " + std::to_string(data.size());
  blob.push_back('\0');
  blob.append(data);
  return sha1_hex(blob);
}

std::string graph_digest(const Graph& graph) {
  // Text form with %a floats: exact and independent of host byte order.
  std::string s = "n " + std::to_string(graph.num_nodes()) + " c " +
                  std::to_string(graph.num_classes()) + " f " + std::to_string(graph.feature_dim()) + "\n";
  for (const Edge& e : graph.edges()) s += std::to_string(e.u) + " " + std::to_string(e.v) + "\n";
  for (int y : graph.labels()) s += std::to_string(y) + "\n";
  char buf[48];
  const Tensor& x = graph.features();
  for (Index i = 0; i < x.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a\n", x.data()[i]);
    s += buf;
  }
  return git_blob_hash(s);
}

std::string history_csv(const TrainHistory& history, int num_classes) {
  std::string out = std::string("# schema: ") + kHistorySchema + "\n";
  out += "epoch,phase,lambda_c,lambda_e,pacing,weighted_ce,ce,entropy,diversity,total,"
         "active_nodes,theta,subgraph_nodes,train_accuracy,grad_norm,stage_score,engage_score,"
         "enact_score";
  for (int c = 0; c < num_classes; ++c) out += ",acc_c" + std::to_string(c);
  out += '\n';
  for (const EpochRecord& r : history.epochs) {
    const auto& l = r.loss;
    out += std::to_string(l.epoch) + "," + std::to_string(r.phase);
    for (double v : {l.lambda_c, l.lambda_e, l.pacing, l.weighted_ce, l.ce, l.entropy, l.diversity, l.total}) {
      out += "," + fmt_double(v);
    }
    out += "," + std::to_string(l.active_nodes) + "," + fmt_double(r.theta) + "," +
           std::to_string(r.subgraph_nodes);
    for (double v : {r.train_accuracy, r.grad_norm, r.stage_score, r.engage_score, r.enact_score}) {
      out += "," + fmt_double(v);
    }
    for (int c = 0; c < num_classes; ++c) {
      out += "," + (c < static_cast<int>(r.class_accuracy.size()) ? fmt_double(r.class_accuracy[c]) : "nan");
    }
    out += '\n';
  }
  return out;
}

std::string confusion_csv(const Metrics& metrics) {
  const std::size_t c = metrics.confusion.size();
  std::string out = "true";
  for (std::size_t j = 0; j < c; ++j) out += ",pred_" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < c; ++i) {
    out += std::to_string(i);
    for (Index v : metrics.confusion[i]) out += "," + std::to_string(v);
    out += '\n';
  }
  return out;
}

std::string metrics_json(const Metrics& m) {
  const auto arr = [](const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
    return a;
  };
  json j = {{"schema", kMetricsSchema},
            {"accuracy", m.accuracy},
            {"macro_f1", m.macro_f1},
            {"macro_auc", m.macro_auc},
            {"precision", arr(m.precision)},
            {"recall", arr(m.recall)},
            {"f1", arr(m.f1)},
            {"auc", arr(m.auc)},
            {"confusion", m.confusion},
            {"excluded_classes", m.excluded_classes},
            {"warnings", m.warnings}};
  return j.dump(2) + "\n";
}

std::string embeddings_csv(const Tensor& embeddings, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != embeddings.rows()) {
    throw std::invalid_argument("embeddings_csv: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(embeddings.rows()) + " rows");
  }
  std::string out;
  for (Index c = 0; c < embeddings.cols(); ++c) out += "d" + std::to_string(c) + ",";
  out += "label\n";
  for (Index r = 0; r < embeddings.rows(); ++r) {
    for (Index c = 0; c < embeddings.cols(); ++c) out += fmt_double(embeddings(r, c), 9) + ",";
    out += std::to_string(labels[r]) + "\n";
  }
  return out;
}

EmbeddingTable read_embeddings_csv(const fs::path& path) {
  std::vector<std::vector<double>> rows;
  EmbeddingTable t;
  for_each_row(path, [&](const std::vector<std::string>& f, std::size_t line) {
    if (!rows.empty() && f.size() != rows.front().size() + 1) fail(path, line, "ragged row");
    std::vector<double> values(f.size() - 1);
    for (std::size_t i = 0; i + 1 < f.size(); ++i) {
      if (!parse_number(f[i], values[i])) fail(path, line, "unparseable value \"" + f[i] + "\"");
    }
    int label = 0;
    if (!parse_number(f.back(), label)) fail(path, line, "unparseable label \"" + f.back() + "\"");
    rows.push_back(std::move(values));
    t.labels.push_back(label);
  });
  const Index d = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  t.values.resize(static_cast<Index>(rows.size()), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Index c = 0; c < d; ++c) t.values(static_cast<Index>(r), c) = rows[r][c];
  }
  return t;
}

std::string model_json(const Model& model, const RunConfig& config, std::uint64_t seed) {
  const ModelConfig& m = model.config();
  json params = json::array();
  for (const Parameter& p : model.params().params()) {
    params.push_back({{"name", p.name},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"values", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}});
  }
  const json j = {{"schema", kModelSchema},
                  {"run_config", json::parse(to_json(config))},
                  {"seed", seed},
                  {"model",
                   {{"input_dim", m.input_dim},
                    {"num_classes", m.num_classes},
                    {"hidden", m.hidden},
                    {"layers", m.layers},
                    {"embed_dim", m.embed_dim},
                    {"heads", m.heads},
                    {"dropout", m.dropout},
                    {"variant", to_string(m.variant)},
                    {"ablation", to_string(m.ablation)},
                    {"init_seed", model.seed()}}},
                  {"params", params}};
  return j.dump() + "\n";
}

SavedModel load_model(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("schema").get<std::string>() != kModelSchema) {
      throw DataError(path.string() + ": not a " + std::string(kModelSchema) + " file");
    }
    const json& mj = j.at("model");
    ModelConfig m;
    m.input_dim = mj.at("input_dim").get<Index>();
    m.num_classes = mj.at("num_classes").get<int>();
    m.hidden = mj.at("hidden").get<int>();
    m.layers = mj.at("layers").get<int>();
    m.embed_dim = mj.at("embed_dim").get<int>();
    m.heads = mj.at("heads").get<int>();
    m.dropout = mj.at("dropout").get<double>();
    m.variant = parse_variant(mj.at("variant").get<std::string>());
    m.ablation = parse_ablation(mj.at("ablation").get<std::string>());
    SavedModel saved{Model(m, mj.at("init_seed").get<std::uint64_t>()),
                     run_config_from_json(j.at("run_config").dump()), j.at("seed").get<std::uint64_t>()};
    ParameterStore& store = saved.model.params();
    const json& params = j.at("params");
    if (params.size() != store.size()) {
      throw DataError(path.string() + ": " + std::to_string(params.size()) + " parameters, architecture has " +
                      std::to_string(store.size()));
    }
    for (const json& pj : params) {
      const std::string name = pj.at("name").get<std::string>();
      std::size_t idx = 0;
      try {
        idx = store.find(name);
      } catch (const std::out_of_range&) {
        throw DataError(path.string() + ": unknown parameter \"" + name + "\"");
      }
      Tensor& value = store.params()[idx].value;
      const auto values = pj.at("values").get<std::vector<double>>();
      if (pj.at("rows").get<Index>() != value.rows() || pj.at("cols").get<Index>() != value.cols() ||
          static_cast<Index>(values.size()) != value.size()) {
        throw DataError(path.string() + ": parameter \"" + name + "\" has shape " +
                        shape_string(pj.at("rows").get<Index>(), pj.at("cols").get<Index>()) +
                        ", expected " + shape_string(value));
      }
      std::copy(values.begin(), values.end(), value.data());
    }
    return saved;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed model file (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace cl3an::io
