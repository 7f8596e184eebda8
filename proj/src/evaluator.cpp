#include "opttune/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <regex>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/subprocess.hpp"

#ifndef OPTTUNE_DATA_DIR
#define OPTTUNE_DATA_DIR "data"
#endif
#ifndef OPTTUNE_BIN_DIR
#define OPTTUNE_BIN_DIR ""
#endif

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ParamStyle style) {
  switch (style) {
    case ParamStyle::flag_value: return "flag-value";
    case ParamStyle::equals: return "equals";
    case ParamStyle::file: return "file";
  }
  return "?";
}

std::string_view to_string(EvalStatus status) {
  switch (status) {
    case EvalStatus::ok: return "ok";
    case EvalStatus::timeout: return "timeout";
    case EvalStatus::crash: return "crash";
    case EvalStatus::parse_error: return "parse-error";
  }
  return "?";
}

EvalStatus parse_eval_status(std::string_view text) {
  if (text == "ok") return EvalStatus::ok;
  if (text == "timeout") return EvalStatus::timeout;
  if (text == "crash") return EvalStatus::crash;
  if (text == "parse-error") return EvalStatus::parse_error;
  throw ParseError("unknown evaluation status '" + std::string(text) + "'");
}

// ----------------------------------------------------------------- adapters

ParamSpace SolverAdapter::load_space() const {
  if (params_file.empty()) throw ValidationError(solver_id, "adapter has no parameter descriptor");
  return opttune::load_space(params_file);
}

SolverAdapter parse_adapter(const json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) throw ParseError("adapter document must be an object");
  SolverAdapter a;
  a.base_dir = base_dir;
  a.solver_id = doc.value("solver-id", "");
  if (a.solver_id.empty()) throw ValidationError("solver-id", "adapter needs a solver-id");
  if (!doc.contains("command") || !doc["command"].is_array() || doc["command"].empty())
    throw ValidationError("command", "adapter needs a non-empty command list");
  a.command = doc["command"].get<std::vector<std::string>>();
  bool has_problem = false;
  for (const auto& arg : a.command) has_problem |= arg.find("{problem}") != std::string::npos;
  if (!has_problem) throw ValidationError("command", "command template must contain {problem}");

  const auto style = doc.value("param-style", "flag-value");
  if (style == "flag-value") a.param_style = ParamStyle::flag_value;
  else if (style == "equals") a.param_style = ParamStyle::equals;
  else if (style == "file") a.param_style = ParamStyle::file;
  else throw ValidationError("param-style", "unknown param-style '" + style + "'");

  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  if (auto r = doc.value("rules-file", ""); !r.empty()) {
    a.rules_file = resolve(r);
    a.rules = load_rules(a.rules_file);
  }
  if (auto p = doc.value("params-file", ""); !p.empty()) a.params_file = resolve(p);
  return a;
}

SolverAdapter load_adapter(const fs::path& adapter_file) {
  return parse_adapter(read_json_file(adapter_file), fs::absolute(adapter_file).parent_path());
}

fs::path bundled_data_dir() {
  if (const char* env = std::getenv("OPTTUNE_DATA_DIR"); env && *env) return env;
  return OPTTUNE_DATA_DIR;
}

std::vector<fs::path> executable_search_dirs() {
  std::vector<fs::path> dirs;
  std::error_code ec;
  auto self = fs::read_symlink("/proc/self/exe", ec);
  if (!ec) dirs.push_back(self.parent_path());
  if (std::string_view(OPTTUNE_BIN_DIR).size()) dirs.emplace_back(OPTTUNE_BIN_DIR);
  return dirs;
}

AdapterRegistry::AdapterRegistry(std::vector<fs::path> dirs) {
  for (const auto& dir : dirs) {
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) continue;
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(dir, ec))
      if (e.path().extension() == ".adapter") found.push_back(e.path());
    std::sort(found.begin(), found.end());
    for (const auto& f : found) {
      try {
        const auto doc = read_json_file(f);
        files_.emplace(doc.value("solver-id", f.stem().string()), f);
      } catch (const Error&) {
        // Broken adapter files are reported when requested by id.
        files_.emplace(f.stem().string(), f);
      }
    }
  }
}

AdapterRegistry AdapterRegistry::standard(const fs::path& home) {
  return AdapterRegistry({home / "adapters", bundled_data_dir()});
}

std::vector<std::string> AdapterRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : files_) out.push_back(id);
  return out;
}

SolverAdapter AdapterRegistry::get(const std::string& id) const {
  auto it = files_.find(id);
  if (it == files_.end()) {
    std::string list;
    for (const auto& [k, _] : files_) list += (list.empty() ? "" : ", ") + k;
    throw ValidationError("solver", "unknown solver '" + id + "'; available solvers: " + list);
  }
  return load_adapter(it->second);
}

// ---------------------------------------------------------------- rendering

std::string render_params_file(const ParamConfig& config) {
  std::string out;
  for (const auto& [name, value] : config.values()) out += name + " " + format_value(value) + "\n";
  return out;
}

std::vector<std::string> render_args(const SolverAdapter& adapter, const ParamConfig& config, const fs::path& instance,
                                     const RenderContext& ctx) {
  static const std::regex placeholder(R"(\{[A-Za-z_][A-Za-z0-9_-]*\})");
  std::vector<std::string> argv;
  for (const auto& arg : adapter.command) {
    if (arg == "{params}") {
      switch (adapter.param_style) {
        case ParamStyle::flag_value:
          for (const auto& [name, value] : config.values()) {
            argv.push_back("-" + name);
            argv.push_back(format_value(value));
          }
          break;
        case ParamStyle::equals:
          for (const auto& [name, value] : config.values()) argv.push_back("--" + name + "=" + format_value(value));
          break;
        case ParamStyle::file:
          if (ctx.params_path.empty()) throw ValidationError("{params}", "param-style=file needs a params file path");
          write_file_atomic(ctx.params_path, render_params_file(config));
          argv.push_back(ctx.params_path.string());
          break;
      }
      continue;
    }
    std::string out;
    std::size_t pos = 0;
    for (auto it = std::sregex_iterator(arg.begin(), arg.end(), placeholder); it != std::sregex_iterator(); ++it) {
      out.append(arg, pos, static_cast<std::size_t>(it->position()) - pos);
      const auto key = it->str();
      if (key == "{problem}") out += instance.string();
      else if (key == "{seed}") out += std::to_string(ctx.seed);
      else if (key == "{adapter_dir}") out += adapter.base_dir.string();
      else throw ValidationError(key, "unresolved placeholder in command template");
      pos = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(arg, pos);
    argv.push_back(std::move(out));
  }
  return argv;
}

// ------------------------------------------------------------------ records

std::string utc_timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

ParamConfig config_from_typed_json(const json& j) {
  ParamConfig::Map values;
  for (const auto& [name, v] : j.items()) {
    if (v.is_boolean()) values.emplace(name, v.get<bool>());
    else if (v.is_number_integer()) values.emplace(name, v.get<std::int64_t>());
    else if (v.is_number_float()) values.emplace(name, v.get<double>());
    else if (v.is_string()) values.emplace(name, v.get<std::string>());
    else throw ParseError("parameter '" + name + "' has a non-scalar value");
  }
  return ParamConfig(std::move(values));
}

json record_to_json(const EvaluationRecord& r) {
  json j{{"config_id", r.config_id},
         {"config", config_to_json(r.config)},
         {"instance", r.instance},
         {"seed", r.seed},
         {"run", r.run},
         {"rerun", r.rerun},
         {"status", to_string(r.status)},
         {"wallclock_seconds", r.wallclock_seconds},
         {"cap_seconds", r.cap_seconds},
         {"exit_code", r.exit_code ? json(*r.exit_code) : json(nullptr)},
         {"metrics", metrics_to_json(r.metrics)},
         {"started_at", r.started_at},
         {"finished_at", r.finished_at},
         {"worker_id", r.worker_id},
         {"penalized_cost", r.penalized_cost}};
  if (!r.detail.empty()) j["detail"] = r.detail;
  return j;
}

EvaluationRecord record_from_json(const json& j) {
  EvaluationRecord r;
  r.config_id = j.at("config_id").get<std::string>();
  r.config = config_from_typed_json(j.at("config"));
  r.instance = j.at("instance").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.run = j.value("run", 0);
  r.rerun = j.value("rerun", false);
  r.status = parse_eval_status(j.at("status").get<std::string>());
  r.wallclock_seconds = j.value("wallclock_seconds", 0.0);
  r.cap_seconds = j.at("cap_seconds").get<double>();
  if (j.contains("exit_code") && !j["exit_code"].is_null()) r.exit_code = j["exit_code"].get<int>();
  r.metrics = metrics_from_json(j.at("metrics"));
  r.started_at = j.value("started_at", "");
  r.finished_at = j.value("finished_at", "");
  r.worker_id = j.value("worker_id", "");
  r.penalized_cost = j.at("penalized_cost").get<double>();
  r.detail = j.value("detail", "");
  return r;
}

fs::path eval_artifact_stem(const fs::path& artifacts_dir, const std::string& config_id, const fs::path& instance,
                            std::uint64_t seed, bool rerun) {
  return artifacts_dir / config_id / instance.filename() / (std::to_string(seed) + (rerun ? ".rerun" : ""));
}

std::optional<EvaluationRecord> run_once(const SolverAdapter& adapter, const EvalRequest& req) {
  EvaluationRecord rec;
  rec.config_id = req.config.id();
  rec.config = req.config;
  rec.instance = req.instance.string();
  rec.seed = req.seed;
  rec.run = req.run;
  rec.rerun = req.rerun;
  rec.cap_seconds = req.cap_seconds;
  rec.worker_id = req.worker_id;

  const auto stem = eval_artifact_stem(req.artifacts_dir, rec.config_id, req.instance, req.seed, req.rerun);
  fs::create_directories(stem.parent_path());
  auto log_path = stem;
  log_path += ".log";
  auto params_path = stem;
  params_path += ".params";
  fs::remove(log_path);

  rec.started_at = utc_timestamp_now();
  ProcessOutcome outcome;
  try {
    auto argv = render_args(adapter, req.config, req.instance, RenderContext{req.seed, params_path});
    auto exe = find_executable(argv.front(), adapter.base_dir, executable_search_dirs());
    if (!exe) {
      outcome.error = "executable not found: " + argv.front();
    } else {
      argv.front() = exe->string();
      outcome = run_process(argv, log_path, ProcessLimits{req.cap_seconds, req.kill_grace_seconds}, req.cancel);
    }
  } catch (const Error& e) {
    outcome.error = e.what();
  }
  rec.finished_at = utc_timestamp_now();
  if (outcome.kind == ProcessOutcome::Kind::cancelled) return std::nullopt;

  rec.wallclock_seconds = outcome.wallclock_seconds;
  rec.exit_code = outcome.exit_code;
  if (fs::exists(log_path)) rec.metrics = parse_log_file(adapter.rules, log_path);

  switch (outcome.kind) {
    case ProcessOutcome::Kind::timed_out:
      rec.status = EvalStatus::timeout;
      break;
    case ProcessOutcome::Kind::spawn_failed:
      rec.status = EvalStatus::crash;
      rec.exit_code.reset();
      rec.detail = outcome.error;
      break;
    case ProcessOutcome::Kind::signaled:
      rec.status = EvalStatus::crash;
      rec.detail = "terminated by signal " + std::to_string(outcome.signal);
      break;
    case ProcessOutcome::Kind::exited:
      if (outcome.exit_code != 0) {
        rec.status = EvalStatus::crash;
        rec.detail = "exit code " + std::to_string(*outcome.exit_code);
      } else if (!rec.metrics.complete()) {
        rec.status = EvalStatus::parse_error;
        rec.detail = "missing metrics:";
        for (const auto& m : rec.metrics.missing) rec.detail += " " + m;
      } else {
        rec.status = EvalStatus::ok;
      }
      break;
    case ProcessOutcome::Kind::cancelled: break;
  }

  if (rec.status == EvalStatus::ok) {
    if (req.objective == "wallclock") {
      rec.penalized_cost = rec.wallclock_seconds;
    } else if (const Metric* m = rec.metrics.find(req.objective); m && m->as_real()) {
      rec.penalized_cost = *m->as_real();
    } else {
      rec.status = EvalStatus::parse_error;
      rec.detail = "objective metric '" + req.objective + "' missing or not numeric";
    }
  }
  if (rec.status != EvalStatus::ok) rec.penalized_cost = req.penalty_factor * req.cap_seconds;

  auto record_path = stem;
  record_path += ".record";
  write_file_atomic(record_path, record_to_json(rec).dump(2) + "\n");
  return rec;
}

}  // namespace opttune
