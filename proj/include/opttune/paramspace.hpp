#pragma once

// Declarative solver parameter spaces: definitions, concrete configurations,
// seeded sampling and the fixed-width numeric encoding used by the surrogate.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace opttune {

enum class ParamKind { categorical, integer, real, boolean };
enum class Scale { linear, log };

std::string_view to_string(ParamKind kind);
std::string_view to_string(Scale scale);

/// A single parameter value. Which alternative is held follows the kind of the
/// owning ParamDef: bool, int64 (integer), double (real), string (categorical).
using ParamValue = std::variant<bool, std::int64_t, double, std::string>;

/// Text used on solver command lines and in params files.
std::string format_value(const ParamValue& value);

/// Real parameter values are kept at 10 significant digits so that
/// encode/decode and text round trips reproduce the same double.
double canonical_real(double x);

/// The child is active only when `parent` is active and holds `equals`.
struct Condition {
  std::string parent;
  ParamValue equals;
};

struct ParamDef {
  std::string name;
  ParamKind kind = ParamKind::real;
  std::vector<std::string> choices;  // categorical only
  double lo = 0.0;                   // integer / real only, inclusive
  double hi = 0.0;
  ParamValue default_value;
  Scale scale = Scale::linear;
  std::optional<Condition> condition;

  bool numeric() const { return kind == ParamKind::integer || kind == ParamKind::real; }
  bool contains(const ParamValue& value) const;
  /// Number of slots this parameter occupies in an encoded vector.
  std::size_t width() const;
  /// Interprets a JSON scalar as a value of this parameter's kind. Throws ValidationError.
  ParamValue parse_value(const nlohmann::json& j) const;
  /// Same as parse_value but from command-line / params-file text.
  ParamValue parse_text(std::string_view text) const;
};

class ParamConfig;

class ParamSpace {
 public:
  ParamSpace() = default;
  /// Validates every ParamDef invariant; throws ValidationError naming the parameter.
  ParamSpace(std::string solver, std::string version, std::vector<ParamDef> params);

  const std::string& solver() const { return solver_; }
  const std::string& version() const { return version_; }
  const std::vector<ParamDef>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  const ParamDef* find(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  /// Parameter indices ordered so that every parent precedes its children.
  const std::vector<std::size_t>& resolution_order() const { return order_; }

  std::size_t encoding_width() const { return width_; }
  /// Offset of parameter `index` inside an encoded vector.
  std::size_t slot_offset(std::size_t index) const { return offsets_[index]; }

  /// Whether `def` is active under the given (possibly partial) assignment.
  bool is_active(const ParamDef& def, const std::map<std::string, ParamValue>& assigned) const;

  /// Throws ValidationError unless `config` assigns exactly the active parameters
  /// with in-domain values.
  void validate(const ParamConfig& config) const;

  /// Number of distinct configurations when every parameter is discrete and the
  /// count does not exceed `limit`; nullopt otherwise.
  std::optional<std::size_t> finite_size(std::size_t limit) const;

  /// Keeps only the named parameters; parents left out are treated as fixed at
  /// their defaults. Throws ValidationError for unknown names.
  ParamSpace restrict_to(const std::vector<std::string>& names) const;

 private:
  std::string solver_;
  std::string version_;
  std::vector<ParamDef> params_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> offsets_;
  std::size_t width_ = 0;
};

/// One concrete assignment of values to the active parameters of a space.
/// Immutable; `id()` is a digest of the sorted (name, value) pairs.
class ParamConfig {
 public:
  using Map = std::map<std::string, ParamValue>;

  ParamConfig() : ParamConfig(Map{}) {}
  explicit ParamConfig(Map values);

  const Map& values() const { return values_; }
  const std::string& id() const { return id_; }
  const ParamValue* get(std::string_view name) const;

  /// Canonical text the id is derived from.
  static std::string canonical_text(const Map& values);

  friend bool operator==(const ParamConfig& a, const ParamConfig& b) { return a.values_ == b.values_; }

 private:
  Map values_;
  std::string id_;
};

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the raw engine output (library-independent).
double uniform01(Rng& rng);
/// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

ParamSpace parse_space(const nlohmann::json& doc);
ParamSpace load_space(const std::filesystem::path& descriptor);
nlohmann::json space_to_json(const ParamSpace& space);

nlohmann::json config_to_json(const ParamConfig& config);
/// Parses an assignment object against `space` and validates it.
ParamConfig config_from_json(const ParamSpace& space, const nlohmann::json& j);

ParamConfig default_config(const ParamSpace& space);

/// Draws a value for one parameter (log-uniform on log scale).
ParamValue sample_value(const ParamDef& def, Rng& rng);
ParamConfig sample_one(const ParamSpace& space, Rng& rng);
std::vector<ParamConfig> sample(const ParamSpace& space, std::uint64_t seed, std::size_t n);

/// Completes a partial assignment: drops inactive parameters and fills newly
/// active ones from `fill` (or defaults when `fill` is null).
ParamConfig resolve(const ParamSpace& space, ParamConfig::Map values, Rng* fill = nullptr);

/// Every configuration of a fully discrete space, when there are at most `limit`.
std::optional<std::vector<ParamConfig>> enumerate(const ParamSpace& space, std::size_t limit);

/// Sentinel written into every slot of an inactive conditional parameter.
inline constexpr double kInactiveSlot = -1.0;

std::vector<double> encode(const ParamSpace& space, const ParamConfig& config);
ParamConfig decode(const ParamSpace& space, std::span<const double> vector);

/// Position of a numeric value on [0, 1] (after log transform where declared).
double to_unit(const ParamDef& def, double x);
/// Inverse of to_unit. Integers are rounded to nearest, ties toward lo.
ParamValue from_unit(const ParamDef& def, double u);

}  // namespace opttune
