#include "opttune/taskman.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/subprocess.hpp"

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------- enums

std::string_view to_string(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "?";
}

LogLevel parse_log_level(std::string_view text) {
  for (auto l : {LogLevel::debug, LogLevel::info, LogLevel::warn, LogLevel::error})
    if (to_string(l) == text) return l;
  throw ValidationError("log-level", "expected debug, info, warn or error, got '" + std::string(text) + "'");
}

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::created: return "created";
    case TaskStatus::running: return "running";
    case TaskStatus::finished: return "finished";
    case TaskStatus::failed: return "failed";
    case TaskStatus::deleted: return "deleted";
  }
  return "?";
}

std::string_view to_string(TerminationReason reason) {
  switch (reason) {
    case TerminationReason::combo_budget: return "combo-budget";
    case TerminationReason::time_budget: return "time-budget";
    case TerminationReason::exhausted: return "exhausted";
    case TerminationReason::user_stop: return "user-stop";
    case TerminationReason::error: return "error";
  }
  return "?";
}

TaskStatus parse_task_status(std::string_view text) {
  for (auto s : {TaskStatus::created, TaskStatus::running, TaskStatus::finished, TaskStatus::failed,
                 TaskStatus::deleted})
    if (to_string(s) == text) return s;
  throw ParseError("unknown task status '" + std::string(text) + "'");
}

TerminationReason parse_termination_reason(std::string_view text) {
  for (auto r : {TerminationReason::combo_budget, TerminationReason::time_budget, TerminationReason::exhausted,
                 TerminationReason::user_stop, TerminationReason::error})
    if (to_string(r) == text) return r;
  throw ParseError("unknown termination reason '" + std::string(text) + "'");
}

bool transition_allowed(TaskStatus from, TaskStatus to) {
  switch (from) {
    case TaskStatus::created: return to == TaskStatus::running || to == TaskStatus::deleted;
    case TaskStatus::running: return to == TaskStatus::finished || to == TaskStatus::failed;
    case TaskStatus::finished:
    case TaskStatus::failed: return to == TaskStatus::deleted;
    case TaskStatus::deleted: return false;
  }
  return false;
}

// ------------------------------------------------------------------ config

namespace {

const std::set<std::string> kConfigKeys{
    "name",          "solver",        "problems",        "parameters",       "tuning-objective",
    "max-distinct-para-combos",       "max-tuning-time", "max-eval-time",    "log-level",
    "verbose",       "concurrency",   "runs-per-config", "seed",             "strategy",
    "ensemble-size", "candidate-pool", "capping-factor", "adaptive-capping", "penalty-factor"};

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  if (key == "problem") key = "problems";
  return key;
}

double number(const std::string& key, const json& v) {
  if (!v.is_number()) throw ValidationError(key, "must be a number");
  return v.get<double>();
}

std::int64_t integer(const std::string& key, const json& v) {
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::isfinite(d) && d == std::floor(d) && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  throw ValidationError(key, "must be an integer");
}

std::string text(const std::string& key, const json& v) {
  if (!v.is_string()) throw ValidationError(key, "must be a string");
  return v.get<std::string>();
}

std::vector<std::string> string_list(const std::string& key, const json& v) {
  std::vector<std::string> out;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const auto comma = std::min(s.find(',', pos), s.size());
      std::string item = s.substr(pos, comma - pos);
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (!item.empty()) out.push_back(item);
      pos = comma + 1;
    }
    return out;
  }
  if (!v.is_array()) throw ValidationError(key, "must be a list of strings");
  for (const auto& e : v) out.push_back(text(key, e));
  return out;
}

}  // namespace

TaskConfig parse_task_config(const json& doc) {
  if (!doc.is_object()) throw ValidationError("config", "task config must be an object");
  std::map<std::string, json> given;
  for (const auto& [raw, v] : doc.items()) {
    const auto key = normalize_key(raw);
    if (!kConfigKeys.count(key)) throw ValidationError(raw, "unknown task config key");
    if (!given.emplace(key, v).second) throw ValidationError(key, "given more than once");
  }

  TaskConfig c;
  for (const auto& [key, v] : given) {
    if (key == "name") c.name = text(key, v);
    else if (key == "solver") c.solver = text(key, v);
    else if (key == "problems") c.problems = v.is_string() ? std::vector<std::string>{v.get<std::string>()} : string_list(key, v);
    else if (key == "parameters") c.parameters = string_list(key, v);
    else if (key == "tuning-objective") c.tuning_objective = text(key, v);
    else if (key == "max-distinct-para-combos") c.max_distinct_para_combos = integer(key, v);
    else if (key == "max-tuning-time") c.max_tuning_time = number(key, v);
    else if (key == "max-eval-time") c.max_eval_time = number(key, v);
    else if (key == "log-level") c.log_level = parse_log_level(text(key, v));
    else if (key == "verbose") c.verbose = static_cast<int>(integer(key, v));
    else if (key == "concurrency") c.concurrency = static_cast<int>(integer(key, v));
    else if (key == "runs-per-config") c.runs_per_config = static_cast<int>(integer(key, v));
    else if (key == "seed") {
      const auto s = integer(key, v);
      if (s < 0) throw ValidationError(key, "must be >= 0");
      c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "strategy") c.strategy = parse_strategy(text(key, v));
    else if (key == "ensemble-size") c.ensemble_size = static_cast<int>(integer(key, v));
    else if (key == "candidate-pool") c.candidate_pool = static_cast<int>(integer(key, v));
    else if (key == "capping-factor") c.capping_factor = number(key, v);
    else if (key == "adaptive-capping") {
      if (!v.is_boolean()) throw ValidationError(key, "must be true or false");
      c.adaptive_capping = v.get<bool>();
    } else if (key == "penalty-factor") c.penalty_factor = number(key, v);
  }

  if (c.solver.empty()) throw ValidationError("solver", "is required");
  if (c.tuning_objective.empty()) throw ValidationError("tuning-objective", "must not be empty");
  if (c.max_distinct_para_combos <= 0) throw ValidationError("max-distinct-para-combos", "must be > 0");
  if (!(c.max_tuning_time > 0.0) || !std::isfinite(c.max_tuning_time))
    throw ValidationError("max-tuning-time", "must be > 0");
  if (!(c.max_eval_time > 0.0) || !std::isfinite(c.max_eval_time))
    throw ValidationError("max-eval-time", "must be > 0");
  if (c.verbose < 0 || c.verbose > 2) throw ValidationError("verbose", "must be 0, 1 or 2");
  if (c.concurrency < 1) throw ValidationError("concurrency", "must be >= 1");
  if (c.runs_per_config < 1) throw ValidationError("runs-per-config", "must be >= 1");
  if (c.ensemble_size < 1) throw ValidationError("ensemble-size", "must be >= 1");
  if (c.candidate_pool < 1) throw ValidationError("candidate-pool", "must be >= 1");
  if (!(c.capping_factor >= 1.0)) throw ValidationError("capping-factor", "must be >= 1");
  if (!(c.penalty_factor >= 1.0)) throw ValidationError("penalty-factor", "must be >= 1");
  for (const auto& p : c.problems)
    if (p.empty()) throw ValidationError("problems", "empty path");
  return c;
}

json task_config_to_json(const TaskConfig& c) {
  return json{{"name", c.name},
              {"solver", c.solver},
              {"problems", c.problems},
              {"parameters", c.parameters},
              {"tuning-objective", c.tuning_objective},
              {"max-distinct-para-combos", c.max_distinct_para_combos},
              {"max-tuning-time", c.max_tuning_time},
              {"max-eval-time", c.max_eval_time},
              {"log-level", to_string(c.log_level)},
              {"verbose", c.verbose},
              {"concurrency", c.concurrency},
              {"runs-per-config", c.runs_per_config},
              {"seed", c.seed},
              {"strategy", to_string(c.strategy)},
              {"ensemble-size", c.ensemble_size},
              {"candidate-pool", c.candidate_pool},
              {"capping-factor", c.capping_factor},
              {"adaptive-capping", c.adaptive_capping},
              {"penalty-factor", c.penalty_factor}};
}

// ------------------------------------------------------------------- state

json task_state_to_json(const TaskState& s) {
  return json{{"task_id", s.id},
              {"state", to_string(s.status)},
              {"termination_reason", s.reason ? json(std::string(to_string(*s.reason))) : json(nullptr)},
              {"error", s.error},
              {"created_at", s.created_at},
              {"started_at", s.started_at},
              {"finished_at", s.finished_at},
              {"started_epoch", s.started_epoch},
              {"finished_epoch", s.finished_epoch},
              {"runner_pid", s.runner_pid},
              {"distinct_configs", s.distinct_configs},
              {"evaluations", s.evaluations},
              {"best_config_id", s.best_config_id},
              {"best_cost", s.best_cost ? json(*s.best_cost) : json(nullptr)}};
}

TaskState task_state_from_json(const json& j) {
  TaskState s;
  s.id = j.at("task_id").get<std::string>();
  s.status = parse_task_status(j.at("state").get<std::string>());
  if (!j.at("termination_reason").is_null())
    s.reason = parse_termination_reason(j["termination_reason"].get<std::string>());
  s.error = j.value("error", "");
  s.created_at = j.value("created_at", "");
  s.started_at = j.value("started_at", "");
  s.finished_at = j.value("finished_at", "");
  s.started_epoch = j.value("started_epoch", 0.0);
  s.finished_epoch = j.value("finished_epoch", 0.0);
  s.runner_pid = j.value("runner_pid", 0L);
  s.distinct_configs = j.value("distinct_configs", std::size_t{0});
  s.evaluations = j.value("evaluations", std::size_t{0});
  s.best_config_id = j.value("best_config_id", "");
  if (j.contains("best_cost") && !j["best_cost"].is_null()) s.best_cost = j["best_cost"].get<double>();
  return s;
}

double progress_fraction(double elapsed_seconds, std::size_t distinct, const TaskConfig& config) {
  const double by_time = std::max(0.0, elapsed_seconds) / config.max_tuning_time;
  const double by_combos = static_cast<double>(distinct) / static_cast<double>(config.max_distinct_para_combos);
  return std::min(1.0, std::max(by_time, by_combos));
}

json task_summary_to_json(const TaskSummary& s) {
  json j = task_state_to_json(s.state);
  j.erase("runner_pid");
  j.erase("started_epoch");
  j.erase("finished_epoch");
  j["name"] = s.name;
  j["solver"] = s.solver;
  j["progress"] = s.progress;
  j["tail"] = s.tail;
  return j;
}

// ------------------------------------------------------------------ helpers

namespace {

double epoch_now() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// Exclusive advisory lock on a task directory (held across processes).
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fd_ = ::open((dir / ".lock").c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot lock " + dir.string());
    while (::flock(fd_, LOCK_EX) != 0 && errno == EINTR) {
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

bool process_alive(long pid) { return pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM); }

void save_state(const fs::path& dir, const TaskState& s) {
  write_file_atomic(dir / "state.json", task_state_to_json(s).dump(2) + "\n");
}

TaskState read_state(const fs::path& dir) { return task_state_from_json(read_json_file(dir / "state.json")); }

std::vector<std::string> complete_lines(const fs::path& file) {
  std::vector<std::string> lines;
  std::ifstream in(file, std::ios::binary);
  if (!in) return lines;
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (true) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) break;
    lines.push_back(data.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::string new_task_id() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char suffix[8];
  std::snprintf(suffix, sizeof suffix, "%06llx", static_cast<unsigned long long>(rng() & 0xFFFFFF));
  return std::string(stamp) + "-" + suffix;
}

bool valid_task_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_';
  });
}

void check_readable(const std::string& problem) {
  std::ifstream in(problem, std::ios::binary);
  if (!in || fs::is_directory(problem)) throw ValidationError("problems", "cannot read problem file '" + problem + "'");
}

/// Appends timestamped lines to tuner.log and forwards them to the sink.
class TaskLog {
 public:
  TaskLog(const fs::path& file, LogLevel threshold, std::function<void(const std::string&)> sink)
      : out_(file, std::ios::app | std::ios::binary), threshold_(threshold), sink_(std::move(sink)) {}

  void write(LogLevel level, const std::string& message) {
    if (level < threshold_) return;
    std::string upper(to_string(level));
    std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
    const std::string line = utc_timestamp_now() + " " + upper + " " + message;
    out_ << line << '\n';
    out_.flush();
    if (sink_) sink_(line);
  }

 private:
  std::ofstream out_;
  LogLevel threshold_;
  std::function<void(const std::string&)> sink_;
};

std::string format_cost(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// ------------------------------------------------------------------ runner

struct PendingConfig {
  ParamConfig config;
  double cap = 0.0;
  bool rerun = false;
  std::vector<EvaluationRecord> records;
};

class Runner {
 public:
  Runner(const fs::path& dir, const TaskConfig& cfg, const SolverAdapter& adapter, const ParamSpace& space,
         std::shared_ptr<std::atomic<bool>> stop, std::function<void(const std::string&)> sink)
      : dir_(dir),
        cfg_(cfg),
        adapter_(std::make_shared<SolverAdapter>(adapter)),
        log_(dir / "tuner.log", cfg.log_level, std::move(sink)),
        stop_(std::move(stop)),
        search_(space, search_options(cfg)),
        backend_(static_cast<std::size_t>(cfg.concurrency)),
        history_(dir / "history.jsonl", std::ios::app | std::ios::binary) {}

  /// Runs the loop; returns the termination reason.
  TerminationReason run(TaskState& state) {
    state_ = &state;
    const auto t0 = std::chrono::steady_clock::now();
    const double hard_deadline = cfg_.max_tuning_time + cfg_.max_eval_time;
    std::optional<TerminationReason> reason;
    bool baseline_done = false;
    const auto detail = cfg_.verbose >= 1 ? LogLevel::info : LogLevel::debug;

    log_.write(LogLevel::info, "task " + state.id + " started: solver=" + cfg_.solver + " strategy=" +
                                   std::string(to_string(cfg_.strategy)) + " problems=" +
                                   std::to_string(cfg_.problems.size()) + " space=" +
                                   std::to_string(search_.space().size()) + " parameters");

    while (true) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (stop_->load() || fs::exists(dir_ / "stop.request")) {
        if (!reason || *reason != TerminationReason::user_stop) {
          log_.write(LogLevel::info, "stop requested; cancelling in-flight evaluations");
          backend_.cancel_all();
          pending_.clear();
          queue_.clear();
        }
        reason = TerminationReason::user_stop;
        break;
      }
      if (elapsed >= hard_deadline) {
        if (!pending_.empty()) {
          log_.write(LogLevel::warn, "hard time limit reached; cancelling in-flight evaluations");
          backend_.cancel_all();
        }
        if (!reason) reason = TerminationReason::time_budget;
        break;
      }
      if (!reason) {
        if (search_.proposed_count() >= static_cast<std::size_t>(cfg_.max_distinct_para_combos))
          reason = TerminationReason::combo_budget;
        else if (elapsed >= cfg_.max_tuning_time)
          reason = TerminationReason::time_budget;
        if (reason) log_.write(LogLevel::info, "no further proposals: " + std::string(to_string(*reason)));
      }
      if (!baseline_done && pending_.empty() && search_.proposed_count() > 0) baseline_done = true;

      const auto slots = static_cast<std::size_t>(cfg_.concurrency);
      if (!reason && queue_.empty() && pending_.size() < slots && (baseline_done || search_.proposed_count() == 0)) {
        const auto remaining = static_cast<std::size_t>(cfg_.max_distinct_para_combos) - search_.proposed_count();
        const std::size_t want = baseline_done ? std::min(slots - pending_.size(), remaining) : 1;
        const auto batch = propose(search_, want);
        if (batch.empty()) {
          reason = TerminationReason::exhausted;
          log_.write(LogLevel::info, "no further proposals: exhausted");
        }
        for (const auto& c : batch) {
          const double cap = next_cap(search_, cfg_.max_eval_time);
          log_.write(detail, "propose " + c.id() + " cap=" + format_cost(cap) + "s " + config_to_json(c).dump());
          enqueue(c, cap, false);
        }
      }
      if (reason && pending_.empty()) break;

      while (!queue_.empty() && backend_.in_flight() < backend_.capacity()) {
        backend_.submit(std::move(queue_.front()));
        queue_.pop_front();
      }
      const double left = hard_deadline - elapsed;
      const auto wait = std::chrono::milliseconds(static_cast<long>(std::clamp(left * 1000.0, 1.0, 100.0)));
      if (auto done = backend_.await_completion(wait)) complete(*done, reason);
    }

    state.distinct_configs = search_.distinct_count();
    log_.write(LogLevel::info, "search ended: " + std::string(to_string(*reason)) + " after " +
                                   std::to_string(seq_) + " evaluations of " +
                                   std::to_string(search_.distinct_count()) + " configurations");
    return *reason;
  }

  TaskLog& log() { return log_; }

 private:
  static SearchOptions search_options(const TaskConfig& cfg) {
    SearchOptions o;
    o.strategy = cfg.strategy;
    o.seed = cfg.seed;
    o.ensemble_size = static_cast<std::size_t>(cfg.ensemble_size);
    o.random_candidates = static_cast<std::size_t>(cfg.candidate_pool);
    o.mutation_candidates = static_cast<std::size_t>(cfg.candidate_pool);
    o.capping_factor = cfg.capping_factor;
    o.adaptive_capping = cfg.adaptive_capping && cfg.tuning_objective == "wallclock";
    return o;
  }

  void enqueue(const ParamConfig& config, double cap, bool rerun) {
    auto& p = pending_[config.id()];
    p.config = config;
    p.cap = cap;
    p.rerun = rerun;
    p.records.clear();
    for (const auto& problem : cfg_.problems) {
      for (int r = 0; r < cfg_.runs_per_config; ++r) {
        Job job;
        job.tag = ++tag_;
        job.adapter = adapter_;
        job.request.config = config;
        job.request.instance = problem;
        job.request.cap_seconds = cap;
        job.request.seed = cfg_.seed + static_cast<std::uint64_t>(r);
        job.request.run = r;
        job.request.rerun = rerun;
        job.request.artifacts_dir = dir_ / "evals";
        job.request.objective = cfg_.tuning_objective;
        job.request.penalty_factor = cfg_.penalty_factor;
        tags_[job.tag] = config.id();
        queue_.push_back(std::move(job));
      }
    }
  }

  void complete(const Completion& done, const std::optional<TerminationReason>& reason) {
    const auto tag = tags_.find(done.tag);
    if (tag == tags_.end()) return;
    const std::string config_id = tag->second;
    tags_.erase(tag);
    if (!done.error.empty()) throw Error("evaluation backend failed: " + done.error);
    if (!done.record) return;
    const EvaluationRecord& rec = *done.record;

    ++seq_;
    history_ << history_entry_to_json(history_entry_from_record(seq_, rec)).dump() << '\n';
    history_.flush();
    state_->evaluations = seq_;

    const auto per_eval = cfg_.verbose >= 2 ? LogLevel::info : LogLevel::debug;
    const auto level = rec.status == EvalStatus::ok ? per_eval : std::max(per_eval, LogLevel::warn);
    log_.write(level, "eval " + std::to_string(seq_) + " config=" + rec.config_id + " instance=" +
                          fs::path(rec.instance).filename().string() + " run=" + std::to_string(rec.run) +
                          (rec.rerun ? " rerun" : "") + " status=" + std::string(to_string(rec.status)) +
                          " time=" + format_cost(rec.wallclock_seconds) + "s cost=" + format_cost(rec.penalized_cost) +
                          (rec.detail.empty() ? "" : " (" + rec.detail + ")"));

    auto pit = pending_.find(config_id);
    if (pit == pending_.end()) return;
    PendingConfig& p = pit->second;
    p.records.push_back(rec);
    if (p.records.size() < cfg_.problems.size() * static_cast<std::size_t>(cfg_.runs_per_config)) return;

    Aggregate agg;
    agg.config = p.config;
    agg.cost = aggregate_cost(p.records);
    agg.all_ok = std::all_of(p.records.begin(), p.records.end(),
                             [](const EvaluationRecord& r) { return r.status == EvalStatus::ok; });
    for (const auto& r : p.records) agg.max_run_seconds = std::max(agg.max_run_seconds, r.wallclock_seconds);

    bool rerun = false;
    const bool capped_timeout = std::any_of(p.records.begin(), p.records.end(), [&](const EvaluationRecord& r) {
      return r.status == EvalStatus::timeout && r.cap_seconds < cfg_.max_eval_time;
    });
    const bool budget_left = !reason || *reason == TerminationReason::combo_budget ||
                             *reason == TerminationReason::exhausted;
    if (!p.rerun && capped_timeout && budget_left) {
      const Aggregate* inc = search_.incumbent();
      const auto predicted = predicted_cost(search_, p.config);
      rerun = !inc || !predicted || *predicted < inc->cost;
    }

    const Aggregate* before = search_.incumbent();
    const std::string before_id = before ? before->config.id() : "";
    update(search_, agg);
    const Aggregate* inc = search_.incumbent();
    log_.write(cfg_.verbose >= 1 ? LogLevel::info : LogLevel::debug,
               "result " + config_id + " cost=" + format_cost(agg.cost) + (agg.all_ok ? "" : " (failed runs)") +
                   " distinct=" + std::to_string(search_.distinct_count()) +
                   (inc ? " incumbent=" + inc->config.id() + " cost=" + format_cost(inc->cost) : ""));
    if (inc && inc->config.id() != before_id)
      log_.write(LogLevel::info, "new incumbent " + inc->config.id() + " cost=" + format_cost(inc->cost));

    state_->distinct_configs = search_.distinct_count();
    if (inc) {
      state_->best_config_id = inc->config.id();
      state_->best_cost = inc->cost;
    }
    save_state(dir_, *state_);

    if (rerun) {
      log_.write(LogLevel::info, "rerun " + config_id + " at full cap " + format_cost(cfg_.max_eval_time) + "s");
      const ParamConfig config = p.config;
      enqueue(config, cfg_.max_eval_time, true);
    } else {
      pending_.erase(pit);
    }
  }

  fs::path dir_;
  const TaskConfig& cfg_;
  std::shared_ptr<const SolverAdapter> adapter_;
  TaskLog log_;
  std::shared_ptr<std::atomic<bool>> stop_;
  SearchState search_;
  LocalBackend backend_;
  std::ofstream history_;
  TaskState* state_ = nullptr;
  std::map<std::string, PendingConfig> pending_;
  std::deque<Job> queue_;
  std::map<std::uint64_t, std::string> tags_;
  std::uint64_t tag_ = 0;
  std::uint64_t seq_ = 0;
};

}  // namespace

// ------------------------------------------------------------- TaskManager

TaskManager::TaskManager(fs::path home)
    : home_(std::move(home)), registry_(AdapterRegistry::standard(home_)) {
  fs::create_directories(home_ / "tasks");
}

TaskManager::~TaskManager() {
  stop_all();
  std::map<std::string, std::thread> threads;
  {
    std::lock_guard lock(mu_);
    threads.swap(threads_);
  }
  for (auto& [id, t] : threads)
    if (t.joinable()) t.join();
}

fs::path TaskManager::default_home() {
  if (const char* h = std::getenv("OPTTUNE_HOME"); h && *h) return h;
  if (const char* h = std::getenv("HOME"); h && *h) return fs::path(h) / ".opttune";
  return ".opttune";
}

fs::path TaskManager::task_dir(const std::string& id) const {
  if (!valid_task_id(id)) throw NotFoundError("unknown task '" + id + "'");
  return home_ / "tasks" / id;
}

fs::path TaskManager::task_file(const std::string& id, TaskFile file) const {
  const auto dir = task_dir(id);
  switch (file) {
    case TaskFile::recommended: return dir / "recommended_params.json";
    case TaskFile::log: return dir / "tuner.log";
    case TaskFile::history: return dir / "history.jsonl";
    case TaskFile::report: return dir / "report.json";
    case TaskFile::config: return dir / "task.json";
  }
  return dir;
}

void TaskManager::check_exists(const std::string& id) const {
  if (!fs::exists(task_dir(id) / "state.json")) throw NotFoundError("unknown task '" + id + "'");
}

void TaskManager::set_output_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard lock(mu_);
  sink_ = std::move(sink);
}

std::string TaskManager::create(const json& config_doc) {
  TaskConfig cfg = parse_task_config(config_doc);
  const SolverAdapter adapter = registry_.get(cfg.solver);
  const ParamSpace full = adapter.load_space();
  try {
    full.restrict_to(cfg.parameters);
  } catch (const ValidationError& e) {
    throw ValidationError("parameters", e.what());
  }
  if (cfg.tuning_objective != "wallclock") {
    const auto& rules = adapter.rules;
    if (std::none_of(rules.begin(), rules.end(), [&](const LogRule& r) { return r.name() == cfg.tuning_objective; })) {
      std::string names = "wallclock";
      for (const auto& r : rules) names += ", " + r.name();
      throw ValidationError("tuning-objective", "unknown metric '" + cfg.tuning_objective + "'; available: " + names);
    }
  }
  std::set<std::string> basenames;
  for (auto& p : cfg.problems) {
    check_readable(p);
    p = fs::absolute(p).lexically_normal().string();
    if (!basenames.insert(fs::path(p).filename().string()).second)
      throw ValidationError("problems", "two problems share the file name '" + fs::path(p).filename().string() + "'");
  }

  std::string id;
  fs::path dir;
  for (int attempt = 0;; ++attempt) {
    id = new_task_id();
    dir = home_ / "tasks" / id;
    if (fs::create_directory(dir)) break;
    if (attempt > 100) throw Error("cannot allocate a task directory under " + home_.string());
  }
  write_file_atomic(dir / "submitted.json", config_doc.dump(2) + "\n");
  json normalized = task_config_to_json(cfg);
  normalized["task-id"] = id;
  write_file_atomic(dir / "task.json", normalized.dump(2) + "\n");
  TaskState st;
  st.id = id;
  st.created_at = utc_timestamp_now();
  save_state(dir, st);
  std::ofstream(dir / "history.jsonl", std::ios::app);
  std::ofstream(dir / "tuner.log", std::ios::app);
  return id;
}

TaskConfig TaskManager::config(const std::string& id) const {
  check_exists(id);
  json doc = read_json_file(task_dir(id) / "task.json");
  doc.erase("task-id");
  return parse_task_config(doc);
}

fs::path TaskManager::add_problem(const std::string& id, const std::string& filename, std::string_view content) {
  check_exists(id);
  const auto dir = task_dir(id);
  const auto base = fs::path(filename).filename().string();
  if (base.empty() || base == "." || base == "..") throw ValidationError("filename", "invalid file name");
  DirLock lock(dir);
  const TaskState st = read_state(dir);
  if (st.status != TaskStatus::created)
    throw TransitionError("problems can only be added to a created task (task is " + std::string(to_string(st.status)) + ")");
  json doc = read_json_file(dir / "task.json");
  auto problems = doc.at("problems").get<std::vector<std::string>>();
  for (const auto& p : problems)
    if (fs::path(p).filename() == base) throw ValidationError("problems", "a problem named '" + base + "' already exists");
  fs::create_directories(dir / "problems");
  const auto stored = dir / "problems" / base;
  write_file_atomic(stored, content);
  problems.push_back(stored.string());
  doc["problems"] = problems;
  write_file_atomic(dir / "task.json", doc.dump(2) + "\n");
  return stored;
}

TaskState TaskManager::load_state(const std::string& id) const {
  check_exists(id);
  return read_state(task_dir(id));
}

std::shared_ptr<std::atomic<bool>> TaskManager::prepare_run(const std::string& id) {
  check_exists(id);
  const auto dir = task_dir(id);
  const TaskConfig cfg = config(id);
  auto flag = std::make_shared<std::atomic<bool>>(false);
  {
    std::lock_guard lock(mu_);
    if (stop_flags_.count(id)) throw TransitionError("task " + id + " is already running");
  }
  DirLock lock(dir);
  TaskState st = read_state(dir);
  if (st.status != TaskStatus::created)
    throw TransitionError("task " + id + " is " + std::string(to_string(st.status)) + "; only created tasks can run");
  if (cfg.problems.empty()) throw ValidationError("problems", "at least one problem is required to run a task");
  for (const auto& p : cfg.problems) check_readable(p);
  const SolverAdapter adapter = registry_.get(cfg.solver);
  if (!find_executable(adapter.command.front(), adapter.base_dir, executable_search_dirs()))
    throw ValidationError("solver", "executable '" + adapter.command.front() + "' not found");

  fs::remove(dir / "stop.request");
  st.status = TaskStatus::running;
  st.started_at = utc_timestamp_now();
  st.started_epoch = epoch_now();
  st.runner_pid = static_cast<long>(::getpid());
  save_state(dir, st);
  std::lock_guard reg(mu_);
  stop_flags_[id] = flag;
  return flag;
}

TaskSummary TaskManager::execute(const std::string& id, std::shared_ptr<std::atomic<bool>> stop) {
  const auto dir = task_dir(id);
  const TaskConfig cfg = config(id);
  TaskState st = read_state(dir);
  std::function<void(const std::string&)> sink;
  {
    std::lock_guard lock(mu_);
    sink = sink_;
  }

  std::optional<TerminationReason> reason;
  std::string error;
  {
    std::unique_ptr<Runner> runner;
    try {
      const SolverAdapter adapter = registry_.get(cfg.solver);
      const ParamSpace space = adapter.load_space().restrict_to(cfg.parameters);
      runner = std::make_unique<Runner>(dir, cfg, adapter, space, stop, sink);
      reason = runner->run(st);
    } catch (const std::exception& e) {
      error = e.what();
      TaskLog(dir / "tuner.log", LogLevel::debug, sink).write(LogLevel::error, "task failed: " + error);
    }
  }

  if (reason) {
    try {
      TuningReport rep = compute_report(read_history(dir / "history.jsonl"),
                                        default_config(registry_.get(cfg.solver).load_space().restrict_to(cfg.parameters)).id(),
                                        cfg.problems, cfg.runs_per_config);
      rep.task_id = id;
      rep.solver = cfg.solver;
      rep.objective = cfg.tuning_objective;
      rep.wallclock_seconds = epoch_now() - st.started_epoch;
      rep.reason = reason;
      write_file_atomic(dir / "report.json", report_to_json(rep).dump(2) + "\n");
      const json recommended{{"solver", cfg.solver},
                             {"config_id", rep.best_config_id},
                             {"params", rep.best_params},
                             {"cost", rep.t_tuned},
                             {"default_cost", rep.t_default},
                             {"speedup", std::isfinite(rep.speedup) ? json(rep.speedup) : json(nullptr)}};
      write_file_atomic(dir / "recommended_params.json", recommended.dump(2) + "\n");
      char ratio[32];
      std::snprintf(ratio, sizeof ratio, "%.2f", rep.speedup);
      TaskLog(dir / "tuner.log", LogLevel::debug, sink)
          .write(LogLevel::info, "recommended " + rep.best_config_id + " " + rep.best_params.dump() + " cost=" +
                                     format_cost(rep.t_tuned) + " default=" + format_cost(rep.t_default) +
                                     " speedup=" + ratio + "x");
    } catch (const std::exception& e) {
      TaskLog(dir / "tuner.log", LogLevel::debug, sink).write(LogLevel::warn, std::string("no report: ") + e.what());
    }
  }

  {
    DirLock lock(dir);
    TaskState disk = read_state(dir);
    st.created_at = disk.created_at;
    st.status = reason ? TaskStatus::finished : TaskStatus::failed;
    st.reason = reason ? reason : std::optional(TerminationReason::error);
    st.error = error;
    st.finished_at = utc_timestamp_now();
    st.finished_epoch = epoch_now();
    save_state(dir, st);
    fs::remove(dir / "stop.request");
  }
  TaskLog(dir / "tuner.log", LogLevel::debug, sink)
      .write(LogLevel::info, "task " + id + " " + std::string(to_string(st.status)) + " (" +
                                 std::string(to_string(*st.reason)) + ")");
  {
    std::lock_guard lock(mu_);
    stop_flags_.erase(id);
  }
  return status(id);
}

TaskSummary TaskManager::run(const std::string& id) { return execute(id, prepare_run(id)); }

void TaskManager::start(const std::string& id) {
  auto flag = prepare_run(id);
  std::lock_guard lock(mu_);
  auto& slot = threads_[id];
  if (slot.joinable()) slot.join();
  slot = std::thread([this, id, flag] { execute(id, flag); });
}

void TaskManager::wait(const std::string& id) {
  std::thread t;
  {
    std::lock_guard lock(mu_);
    auto it = threads_.find(id);
    if (it == threads_.end()) return;
    t = std::move(it->second);
    threads_.erase(it);
  }
  if (t.joinable()) t.join();
}

void TaskManager::stop(const std::string& id) {
  check_exists(id);
  {
    std::lock_guard lock(mu_);
    if (auto it = stop_flags_.find(id); it != stop_flags_.end()) {
      it->second->store(true);
      return;
    }
  }
  const auto dir = task_dir(id);
  DirLock lock(dir);
  const TaskState st = read_state(dir);
  if (st.status != TaskStatus::running)
    throw TransitionError("task " + id + " is " + std::string(to_string(st.status)) + "; only running tasks can stop");
  write_file_atomic(dir / "stop.request", utc_timestamp_now() + "\n");
}

void TaskManager::stop_all() {
  std::lock_guard lock(mu_);
  for (auto& [id, flag] : stop_flags_) flag->store(true);
}

void TaskManager::remove(const std::string& id) {
  check_exists(id);
  const auto dir = task_dir(id);
  {
    std::lock_guard lock(mu_);
    if (stop_flags_.count(id)) throw TransitionError("task " + id + " is running; stop it first");
  }
  DirLock lock(dir);
  TaskState st = read_state(dir);
  if (!transition_allowed(st.status, TaskStatus::deleted))
    throw TransitionError("task " + id + " is " + std::string(to_string(st.status)) + "; it cannot be deleted");
  st.status = TaskStatus::deleted;
  save_state(dir, st);
  std::error_code ec;
  fs::remove_all(dir / "evals", ec);
}

TaskSummary TaskManager::status(const std::string& id, std::size_t tail_lines) const {
  const auto dir = task_dir(id);
  TaskState st = load_state(id);
  const TaskConfig cfg = config(id);
  if (st.status == TaskStatus::running && st.runner_pid != static_cast<long>(::getpid()) &&
      !process_alive(st.runner_pid)) {
    DirLock lock(dir);
    st = read_state(dir);
    if (st.status == TaskStatus::running && !process_alive(st.runner_pid)) {
      st.status = TaskStatus::failed;
      st.reason = TerminationReason::error;
      st.error = "runner process " + std::to_string(st.runner_pid) + " exited unexpectedly";
      st.finished_at = utc_timestamp_now();
      st.finished_epoch = epoch_now();
      save_state(dir, st);
    }
  }

  TaskSummary s;
  s.id = id;
  s.name = cfg.name;
  s.solver = cfg.solver;
  switch (st.status) {
    case TaskStatus::created: s.progress = 0.0; break;
    case TaskStatus::running: s.progress = progress_fraction(epoch_now() - st.started_epoch, st.distinct_configs, cfg); break;
    case TaskStatus::finished: s.progress = 1.0; break;
    case TaskStatus::failed:
    case TaskStatus::deleted:
      s.progress = st.finished_epoch > 0.0 ? progress_fraction(st.finished_epoch - st.started_epoch, st.distinct_configs, cfg)
                                           : 0.0;
      if (st.status == TaskStatus::deleted && st.reason && *st.reason != TerminationReason::error) s.progress = 1.0;
      break;
  }
  s.state = std::move(st);
  if (tail_lines > 0) {
    auto lines = complete_lines(dir / "tuner.log");
    const auto from = lines.size() > tail_lines ? lines.size() - tail_lines : 0;
    s.tail.assign(lines.begin() + static_cast<std::ptrdiff_t>(from), lines.end());
  }
  return s;
}

std::vector<TaskSummary> TaskManager::list(bool deleted) const {
  std::vector<TaskSummary> out;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(home_ / "tasks", ec)) {
    const auto id = entry.path().filename().string();
    if (!valid_task_id(id) || !fs::exists(entry.path() / "state.json")) continue;
    try {
      TaskSummary s = status(id, 0);
      if ((s.state.status == TaskStatus::deleted) == deleted) out.push_back(std::move(s));
    } catch (const Error&) {
    }
  }
  std::sort(out.begin(), out.end(), [](const TaskSummary& a, const TaskSummary& b) {
    return std::tie(a.state.created_at, a.id) < std::tie(b.state.created_at, b.id);
  });
  return out;
}

TuningReport TaskManager::report(const std::string& id) const {
  const TaskState st = load_state(id);
  const bool finished = st.status == TaskStatus::finished ||
                        (st.status == TaskStatus::deleted && st.reason && *st.reason != TerminationReason::error);
  if (!finished)
    throw TransitionError("task " + id + " is " + std::string(to_string(st.status)) + "; reports need a finished task");
  const TaskConfig cfg = config(id);
  const auto dir = task_dir(id);
  const ParamSpace space = registry_.get(cfg.solver).load_space().restrict_to(cfg.parameters);
  TuningReport rep = compute_report(read_history(dir / "history.jsonl"), default_config(space).id(), cfg.problems,
                                    cfg.runs_per_config);
  rep.task_id = id;
  rep.solver = cfg.solver;
  rep.objective = cfg.tuning_objective;
  rep.wallclock_seconds = st.finished_epoch - st.started_epoch;
  rep.reason = st.reason;
  write_file_atomic(dir / "report.json", report_to_json(rep).dump(2) + "\n");
  return rep;
}

OutputChunk TaskManager::output(const std::string& id, std::size_t since) const {
  check_exists(id);
  OutputChunk chunk;
  auto lines = complete_lines(task_dir(id) / "tuner.log");
  chunk.next = lines.size();
  if (since < lines.size())
    chunk.lines.assign(std::make_move_iterator(lines.begin() + static_cast<std::ptrdiff_t>(since)),
                       std::make_move_iterator(lines.end()));
  return chunk;
}

}  // namespace opttune
