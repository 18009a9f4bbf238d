#pragma once

// Dataset ingestion and result persistence. Every writer goes through
// write_file_atomic, so a crashed run leaves either the old file or the new
// one, never a truncated file.

#include "cl3an/config.hpp"
#include "cl3an/graph.hpp"
#include "cl3an/metrics.hpp"
#include "cl3an/trainer.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cl3an::io {

namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;
/// Directory searched for dataset names that are not existing paths.
inline constexpr const char* kDataDirEnv = "CL3AN_DATA_DIR";

inline constexpr const char* kHistorySchema = "cl3an.history/1";
inline constexpr const char* kMetricsSchema = "cl3an.metrics/1";

enum class FeatureFormat { kCsv, kFloat32 };

/// Parsed meta.json. File names are relative to the manifest's directory.
struct DatasetManifest {
  fs::path dir;
  std::string name;
  Index num_nodes = 0;
  int num_classes = 0;
  Index feature_dim = 0;
  std::string feature_file;
  std::string edge_file;
  std::string label_file;
  FeatureFormat feature_format = FeatureFormat::kCsv;
  int format_version = kDatasetFormatVersion;
};

/// Throws DataError for a missing field or unknown format_version.
DatasetManifest read_manifest(const fs::path& manifest_path);

/// Loads the graph described by a manifest. DataError messages name the file
/// and, for parse failures, the 1-based line.
Graph load_dataset(const fs::path& manifest_path);

/// An existing file is taken as the manifest and an existing directory must
/// hold meta.json. Anything else is looked up as <$CL3AN_DATA_DIR>/<ref>/meta.json.
fs::path resolve_dataset(const std::string& ref);

/// Writes meta.json, edges.csv, labels.csv and the features into `dir`.
void save_dataset(const Graph& graph, const fs::path& dir, const std::string& name,
                  FeatureFormat format = FeatureFormat::kCsv);

/// Writes to a sibling temporary file and renames it over `path`. Creates
/// missing parent directories.
void write_file_atomic(const fs::path& path, std::string_view content);
std::string read_file(const fs::path& path);

/// Lowercase hex SHA-1.
std::string sha1_hex(std::string_view data);
/// Git's object id for a blob: SHA-1 of "blob <size>\0" followed by the data.
std::string git_blob_hash(std::string_view data);

/// Content digest of a graph: edges, labels and the exact feature bits.
std::string graph_digest(const Graph& graph);

/// One row per epoch, preceded by a "# schema" comment line.
std::string history_csv(const TrainHistory& history, int num_classes);
/// Row i holds the counts of true class i across predicted classes.
std::string confusion_csv(const Metrics& metrics);
/// Metrics as a JSON document; NaN entries become null.
std::string metrics_json(const Metrics& metrics);

/// Columns d0..d{D-1} then label, values printed with 9 significant digits.
std::string embeddings_csv(const Tensor& embeddings, const std::vector<int>& labels);

struct EmbeddingTable {
  Tensor values;
  std::vector<int> labels;
};

EmbeddingTable read_embeddings_csv(const fs::path& path);

inline constexpr const char* kModelSchema = "cl3an.model/1";

/// A trained model with the run configuration and seed that produced it, so
/// the graph and split can be rebuilt.
struct SavedModel {
  Model model;
  RunConfig config;
  std::uint64_t seed = 0;
};

/// JSON with every parameter value; doubles round-trip exactly.
std::string model_json(const Model& model, const RunConfig& config, std::uint64_t seed);
/// Throws DataError when the file does not match the architecture it declares.
SavedModel load_model(const fs::path& path);

}  // namespace cl3an::io
