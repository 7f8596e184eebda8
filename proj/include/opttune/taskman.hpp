#pragma once

// Tuning task lifecycle: configuration, the evaluation backend, the search
// loop with its stopping conditions, on-disk persistence and reports.

#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "opttune/evaluator.hpp"
#include "opttune/search.hpp"

namespace opttune {

enum class LogLevel { debug, info, warn, error };
std::string_view to_string(LogLevel level);
LogLevel parse_log_level(std::string_view text);

struct TaskConfig {
  std::string name;
  std::string solver;
  std::vector<std::string> problems;
  std::vector<std::string> parameters;  // empty: tune the whole space
  std::string tuning_objective = "wallclock";
  std::int64_t max_distinct_para_combos = 200;
  double max_tuning_time = 3600.0;
  double max_eval_time = 900.0;
  LogLevel log_level = LogLevel::info;
  int verbose = 1;
  int concurrency = 4;
  int runs_per_config = 1;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::surrogate;
  int ensemble_size = 32;
  int candidate_pool = 500;
  double capping_factor = 2.0;
  bool adaptive_capping = true;
  double penalty_factor = kDefaultPenaltyFactor;
};

/// Reads a task config document. Keys may use hyphens or underscores and
/// `problem` is accepted for `problems`. Unknown keys and out-of-range values
/// throw ValidationError naming the key.
TaskConfig parse_task_config(const nlohmann::json& doc);
/// Normalized document with every key present (hyphenated spelling).
nlohmann::json task_config_to_json(const TaskConfig& config);

enum class TaskStatus { created, running, finished, failed, deleted };
enum class TerminationReason { combo_budget, time_budget, exhausted, user_stop, error };
std::string_view to_string(TaskStatus status);
std::string_view to_string(TerminationReason reason);
TaskStatus parse_task_status(std::string_view text);
TerminationReason parse_termination_reason(std::string_view text);
bool transition_allowed(TaskStatus from, TaskStatus to);

/// Contents of state.json.
struct TaskState {
  std::string id;
  TaskStatus status = TaskStatus::created;
  std::optional<TerminationReason> reason;
  std::string error;
  std::string created_at;
  std::string started_at;
  std::string finished_at;
  double started_epoch = 0.0;
  double finished_epoch = 0.0;
  long runner_pid = 0;
  std::size_t distinct_configs = 0;
  std::size_t evaluations = 0;
  std::string best_config_id;
  std::optional<double> best_cost;
};

nlohmann::json task_state_to_json(const TaskState& state);
TaskState task_state_from_json(const nlohmann::json& j);

/// max(elapsed / max-tuning-time, distinct / max-distinct-para-combos), capped at 1.
double progress_fraction(double elapsed_seconds, std::size_t distinct, const TaskConfig& config);

// ---------------------------------------------------------------------------
// Backend

struct Job {
  std::uint64_t tag = 0;
  std::shared_ptr<const SolverAdapter> adapter;
  EvalRequest request;  // `cancel` is set by the backend
};

struct Completion {
  std::uint64_t tag = 0;
  std::optional<EvaluationRecord> record;  // empty when cancelled or failed
  std::string error;                       // set when the backend could not run the job
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws Error when `capacity()` jobs are already in flight.
  virtual void submit(Job job) = 0;
  /// Next finished job, in completion order, or nullopt after `timeout`.
  virtual std::optional<Completion> await_completion(std::chrono::milliseconds timeout) = 0;
  /// Kills running jobs and drops queued ones; returns once nothing is in flight.
  /// No completion of an earlier submission is delivered afterwards.
  virtual void cancel_all() = 0;
  virtual std::size_t capacity() const = 0;
};

/// Worker pool of `capacity` threads running evaluations as subprocesses.
class LocalBackend : public Backend {
 public:
  explicit LocalBackend(std::size_t capacity);
  ~LocalBackend() override;
  LocalBackend(const LocalBackend&) = delete;
  LocalBackend& operator=(const LocalBackend&) = delete;

  void submit(Job job) override;
  std::optional<Completion> await_completion(std::chrono::milliseconds timeout) override;
  void cancel_all() override;
  std::size_t capacity() const override { return workers_.size(); }
  std::size_t in_flight() const;

 private:
  void work(std::size_t index);

  mutable std::mutex mu_;
  std::condition_variable jobs_cv_;
  std::condition_variable done_cv_;
  std::deque<Job> queue_;
  std::deque<Completion> completions_;
  std::size_t running_ = 0;
  std::uint64_t generation_ = 0;
  bool shutdown_ = false;
  std::atomic<bool> cancel_{false};
  std::vector<std::thread> workers_;
};

// ---------------------------------------------------------------------------
// Costs and reports

/// Shifted geometric mean (shift 1) over problems of each problem's mean
/// penalized cost. Records of one configuration across problems and runs.
double aggregate_cost(std::span<const EvaluationRecord> records);
double aggregate_cost(const std::map<std::string, std::vector<double>>& costs_by_problem);

/// T_default / T_tuned.
double speedup_ratio(double t_default, double t_tuned);

/// Counts of ratios in [0,2), [2,4), [4,32), [32,100), [100,inf).
struct SpeedupBuckets {
  std::array<std::size_t, 5> counts{};
  std::size_t total = 0;
  /// Share of ratios >= threshold; threshold must be a bucket edge.
  double fraction_at_least(double threshold) const;
};
SpeedupBuckets speedup_buckets(std::span<const double> ratios);

struct SolvablePoint {
  double budget = 0.0;
  std::size_t default_count = 0;
  std::size_t tuned_count = 0;
};
/// Problems solved within each budget, for default and tuned times.
std::vector<SolvablePoint> solvable_curve(std::span<const std::pair<double, double>> default_tuned,
                                          std::span<const double> budgets);

/// One line of history.jsonl.
struct HistoryEntry {
  std::uint64_t seq = 0;
  std::string config_id;
  nlohmann::json params;
  std::string instance;
  int run = 0;
  std::uint64_t seed = 0;
  bool rerun = false;
  EvalStatus status = EvalStatus::crash;
  double cap_seconds = 0.0;
  double penalized_cost = 0.0;
  std::optional<int> exit_code;
  nlohmann::json metrics;
};

nlohmann::json history_entry_to_json(const HistoryEntry& entry);
HistoryEntry history_entry_from_json(const nlohmann::json& j);
HistoryEntry history_entry_from_record(std::uint64_t seq, const EvaluationRecord& record);
/// Reads history.jsonl; an incomplete trailing line (interrupted write) is ignored.
std::vector<HistoryEntry> read_history(const std::filesystem::path& history_file);

struct InstanceResult {
  std::string instance;
  double t_default = 0.0;
  double t_tuned = 0.0;
  double speedup = 1.0;
};

struct TuningReport {
  std::string task_id;
  std::string solver;
  std::string objective;
  std::string default_config_id;
  std::string best_config_id;
  nlohmann::json best_params;
  double t_default = 0.0;
  double t_tuned = 0.0;
  double speedup = 1.0;
  std::vector<InstanceResult> per_instance;
  SpeedupBuckets buckets;
  std::vector<SolvablePoint> solvable;
  std::size_t evaluations = 0;
  std::size_t distinct_configs = 0;
  double wallclock_seconds = 0.0;
  std::optional<TerminationReason> reason;
};

/// Report from persisted history alone. `default_config_id` names the baseline;
/// only configurations with a record for every (problem, run) take part.
TuningReport compute_report(std::span<const HistoryEntry> history, const std::string& default_config_id,
                            const std::vector<std::string>& problems, int runs_per_config);
nlohmann::json report_to_json(const TuningReport& report);

// ---------------------------------------------------------------------------
// Task manager

struct TaskSummary {
  std::string id;
  std::string name;
  std::string solver;
  TaskState state;
  double progress = 0.0;
  std::vector<std::string> tail;
};
nlohmann::json task_summary_to_json(const TaskSummary& summary);

struct OutputChunk {
  std::vector<std::string> lines;
  std::size_t next = 0;  // line index to ask for next
};

enum class TaskFile { recommended, log, history, report, config };

class TaskManager {
 public:
  /// Tasks live in `home/tasks/<id>/`; adapters are looked up in
  /// `home/adapters` and the bundled data directory.
  explicit TaskManager(std::filesystem::path home);
  ~TaskManager();
  TaskManager(const TaskManager&) = delete;
  TaskManager& operator=(const TaskManager&) = delete;

  /// $OPTTUNE_HOME, or ~/.opttune.
  static std::filesystem::path default_home();

  const std::filesystem::path& home() const { return home_; }
  const AdapterRegistry& adapters() const { return registry_; }
  std::filesystem::path task_dir(const std::string& id) const;
  std::filesystem::path task_file(const std::string& id, TaskFile file) const;

  /// Validates and persists a new task; returns its id.
  std::string create(const nlohmann::json& config_doc);
  TaskConfig config(const std::string& id) const;

  /// Stores an uploaded problem in the task directory and adds it to the
  /// task's problems. Only for created tasks.
  std::filesystem::path add_problem(const std::string& id, const std::string& filename, std::string_view content);

  /// Runs the task to completion on the calling thread.
  TaskSummary run(const std::string& id);
  /// Runs the task on a background thread owned by this manager.
  void start(const std::string& id);
  /// Blocks until a task started by this manager has finished.
  void wait(const std::string& id);
  /// Asks a running task (in this or another process) to stop with reason user-stop.
  void stop(const std::string& id);
  /// Stops every task running in this process.
  void stop_all();
  /// Moves a task to the deleted list and removes its evaluation artifacts.
  void remove(const std::string& id);

  std::vector<TaskSummary> list(bool deleted = false) const;
  TaskSummary status(const std::string& id, std::size_t tail_lines = 20) const;
  /// Report of a finished task (written to report.json). Throws TransitionError otherwise.
  TuningReport report(const std::string& id) const;
  /// Complete tuner.log lines from index `since` on.
  OutputChunk output(const std::string& id, std::size_t since) const;

  /// Receives every tuner.log line written by tasks run in this process.
  void set_output_sink(std::function<void(const std::string&)> sink);

 private:
  std::shared_ptr<std::atomic<bool>> prepare_run(const std::string& id);
  TaskSummary execute(const std::string& id, std::shared_ptr<std::atomic<bool>> stop);
  TaskState load_state(const std::string& id) const;
  void check_exists(const std::string& id) const;

  std::filesystem::path home_;
  AdapterRegistry registry_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<std::atomic<bool>>> stop_flags_;
  std::map<std::string, std::thread> threads_;
  std::function<void(const std::string&)> sink_;
};

}  // namespace opttune
