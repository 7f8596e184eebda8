#pragma once

// Model anonymizer for MPS and LP files: comments are dropped and the objective,
// variable and constraint names are replaced by OBJ, X1.., CON1.. with a local
// name map to restore result files afterwards.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace opttune {

enum class ModelFormat { mps, lp };
std::string_view to_string(ModelFormat format);
/// Chooses the format from a file extension (".mps", ".lp"); throws ValidationError otherwise.
ModelFormat format_from_path(const std::filesystem::path& path);
ModelFormat parse_model_format(std::string_view text);

struct ModelRow {
  std::string name;  // empty for unnamed LP constraints
  char sense = 'N';  // N, L, G or E
  std::optional<std::string> rhs;
  std::optional<std::string> range;
};

struct ModelColumn {
  std::string name;
  bool integer = false;
  /// (row index, coefficient text as written).
  std::vector<std::pair<std::size_t, std::string>> coefficients;
};

struct ModelBound {
  std::string type;  // UP LO FX FR MI PL BV LI UI SC
  std::size_t column = 0;
  std::optional<std::string> value;
};

/// Parsed model. Numbers are kept as their source text.
struct Model {
  std::string name;
  bool maximize = false;
  std::optional<std::size_t> objective;  // index of the objective row
  std::vector<ModelRow> rows;
  std::vector<ModelColumn> columns;
  std::vector<ModelBound> bounds;
  std::string rhs_set;
  std::string range_set;
  std::string bound_set;
  std::vector<std::string> comments;
};

/// Fixed and free MPS (sections NAME ROWS COLUMNS RHS RANGES BOUNDS ENDATA,
/// optional OBJSENSE, integrality markers). Throws ParseError with line/column.
Model parse_mps(std::string_view text);
/// Objective, constraints, bounds, general and binary sections.
Model parse_lp(std::string_view text);
Model parse_model(std::string_view text, ModelFormat format);
Model read_model(const std::filesystem::path& path, ModelFormat format);

std::string write_mps(const Model& model);
std::string write_lp(const Model& model);
std::string write_model(const Model& model, ModelFormat format);

/// generic <-> original pairs, each partition in first-appearance order.
class NameMap {
 public:
  enum class Partition { objective, variables, constraints };

  void add(Partition partition, std::string generic, std::string original);
  const std::vector<std::pair<std::string, std::string>>& pairs(Partition partition) const;
  std::size_t size() const;
  std::optional<std::string> original_of(std::string_view generic) const;
  std::optional<std::string> generic_of(std::string_view original) const;

  std::string source_digest;     // SHA-256 of the original model file
  std::string sanitized_digest;  // SHA-256 of the sanitized output
  std::string source_name;

 private:
  std::vector<std::pair<std::string, std::string>> objective_, variables_, constraints_;
  std::map<std::string, std::string, std::less<>> by_generic_;
  std::map<std::string, std::string, std::less<>> by_original_;
};

std::string write_namemap(const NameMap& map);
/// Throws ParseError for malformed or truncated map files.
NameMap parse_namemap(std::string_view text);
NameMap read_namemap(const std::filesystem::path& path);

/// Renames a model: the objective becomes OBJ, other rows CON1.., columns
/// X1.., the model name MODEL; set names become RHS, RNG and BND; comments go.
std::pair<Model, NameMap> anonymize(const Model& model);

struct SanitizeResult {
  std::filesystem::path sanitized;  // <input>.san.<ext>
  std::filesystem::path map;        // <input>.namemap
  NameMap names;
};

/// Anonymizes a model file and writes the sanitized model and the name map beside it
/// (or into `out_dir` when given).
SanitizeResult sanitize_file(const std::filesystem::path& input, ModelFormat format,
                             const std::filesystem::path& out_dir = {});

/// Replaces whole [A-Za-z0-9_] tokens that are generic names with their originals.
std::string deanonymize(std::string_view text, const NameMap& map);

/// True iff the model file's digest matches the map and every original name occurs in it.
bool verify_map(const NameMap& map, const std::filesystem::path& model_file);

}  // namespace opttune
