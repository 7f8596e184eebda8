#pragma once

// One solver run per (config, instance, seed): argument rendering, the enforced
// time cap, wallclock measurement and the resulting EvaluationRecord.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "opttune/logparse.hpp"
#include "opttune/paramspace.hpp"

namespace opttune {

enum class ParamStyle { flag_value, equals, file };

std::string_view to_string(ParamStyle style);

/// How to launch one solver. `command` is an argv template; whole-argument
/// `{params}` expands to the rendered parameters, and `{problem}`, `{seed}`,
/// `{adapter_dir}` are substituted anywhere inside an argument.
struct SolverAdapter {
  std::string solver_id;
  std::vector<std::string> command;
  ParamStyle param_style = ParamStyle::flag_value;
  std::filesystem::path rules_file;   // empty: no rules
  std::filesystem::path params_file;  // parameter descriptor
  std::filesystem::path base_dir;     // directory of the adapter file
  std::vector<LogRule> rules;

  ParamSpace load_space() const;
};

/// Throws ValidationError when the template lacks {problem}.
SolverAdapter parse_adapter(const nlohmann::json& doc, const std::filesystem::path& base_dir);
SolverAdapter load_adapter(const std::filesystem::path& adapter_file);

/// Adapters found in a list of directories (`*.adapter`); earlier directories win.
class AdapterRegistry {
 public:
  explicit AdapterRegistry(std::vector<std::filesystem::path> dirs);

  /// Bundled adapters plus `$OPTTUNE_HOME/adapters`.
  static AdapterRegistry standard(const std::filesystem::path& home);

  std::vector<std::string> ids() const;
  bool contains(const std::string& id) const { return files_.count(id) != 0; }
  /// Throws ValidationError listing the registered ids for unknown solvers.
  SolverAdapter get(const std::string& id) const;

 private:
  std::map<std::string, std::filesystem::path> files_;
};

/// Directory holding the bundled descriptors, rules and adapters.
std::filesystem::path bundled_data_dir();
/// Directories searched for bare executable names in adapter commands.
std::vector<std::filesystem::path> executable_search_dirs();

struct RenderContext {
  std::uint64_t seed = 0;
  std::filesystem::path params_path;  // where param-style=file writes its file
};

/// Deterministic argv for one run. Never involves a shell. Throws
/// ValidationError on unresolved placeholders.
std::vector<std::string> render_args(const SolverAdapter& adapter, const ParamConfig& config,
                                     const std::filesystem::path& instance, const RenderContext& ctx = {});

/// Contents of the params file used by param-style=file.
std::string render_params_file(const ParamConfig& config);

enum class EvalStatus { ok, timeout, crash, parse_error };

std::string_view to_string(EvalStatus status);
EvalStatus parse_eval_status(std::string_view text);

struct EvaluationRecord {
  std::string config_id;
  ParamConfig config;
  std::string instance;
  std::uint64_t seed = 0;
  int run = 0;
  bool rerun = false;
  EvalStatus status = EvalStatus::crash;
  double wallclock_seconds = 0.0;
  double cap_seconds = 0.0;
  std::optional<int> exit_code;
  MetricSet metrics;
  std::string started_at;
  std::string finished_at;
  std::string worker_id;
  double penalized_cost = 0.0;
  std::string detail;

  friend bool operator==(const EvaluationRecord&, const EvaluationRecord&) = default;
};

nlohmann::json record_to_json(const EvaluationRecord& record);
EvaluationRecord record_from_json(const nlohmann::json& j);

/// Reads back a ParamConfig whose value types follow the JSON scalar types.
ParamConfig config_from_typed_json(const nlohmann::json& j);

inline constexpr double kDefaultPenaltyFactor = 10.0;

struct EvalRequest {
  ParamConfig config;
  std::filesystem::path instance;
  double cap_seconds = 0.0;
  std::uint64_t seed = 0;
  int run = 0;
  bool rerun = false;
  /// Root for `<config-id>/<instance>/<seed>.log` and `.record`.
  std::filesystem::path artifacts_dir;
  /// "wallclock" or the name of a numeric log metric.
  std::string objective = "wallclock";
  double penalty_factor = kDefaultPenaltyFactor;
  double kill_grace_seconds = 4.5;
  std::string worker_id;
  const std::atomic<bool>* cancel = nullptr;
};

/// Runs the solver once and persists its log and record. Never throws for
/// solver failures; they become crash / timeout / parse-error records.
/// Returns nullopt only when the run was cancelled.
std::optional<EvaluationRecord> run_once(const SolverAdapter& adapter, const EvalRequest& request);

/// Location of the artifacts for one run.
std::filesystem::path eval_artifact_stem(const std::filesystem::path& artifacts_dir, const std::string& config_id,
                                         const std::filesystem::path& instance, std::uint64_t seed, bool rerun);

std::string utc_timestamp_now();

}  // namespace opttune
