#include "opttune/cli.hpp"

#include <CLI11.hpp>
#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <atomic>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "opttune/error.hpp"
#include "opttune/httpapi.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/sanitizer.hpp"
#include "opttune/taskman.hpp"

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Routes SIGINT/SIGTERM to a callback on a dedicated thread while alive.
/// Must be constructed before the threads it should shield are started.
class SignalWatch {
 public:
  explicit SignalWatch(std::function<void()> on_signal) {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    sigaddset(&set_, SIGUSR2);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
    thread_ = std::thread([this, cb = std::move(on_signal)] {
      while (true) {
        int sig = 0;
        if (sigwait(&set_, &sig) != 0) continue;
        if (sig == SIGUSR2) return;
        fired_ = true;
        cb();
      }
    });
  }
  ~SignalWatch() {
    pthread_kill(thread_.native_handle(), SIGUSR2);
    thread_.join();
    pthread_sigmask(SIG_SETMASK, &old_, nullptr);
  }
  SignalWatch(const SignalWatch&) = delete;
  SignalWatch& operator=(const SignalWatch&) = delete;

  bool fired() const { return fired_; }

 private:
  sigset_t set_{};
  sigset_t old_{};
  std::atomic<bool> fired_{false};
  std::thread thread_;
};

struct Common {
  std::string format = "text";
  bool json_flag = false;
  bool json() const { return json_flag || format == "json"; }
};

void add_format(CLI::App* cmd, Common& c) {
  cmd->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"text", "json"}));
  cmd->add_flag("--json", c.json_flag, "Same as --format json");
}

std::string fmt_number(double x) {
  if (!std::isfinite(x)) return x > 0 ? "inf" : "-";
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

void print_summary(std::ostream& out, const TaskSummary& s, bool with_tail) {
  const auto& st = s.state;
  out << "task:        " << s.id << "\n"
      << "name:        " << s.name << "\n"
      << "solver:      " << s.solver << "\n"
      << "state:       " << to_string(st.status) << "\n"
      << "progress:    " << std::fixed << std::setprecision(2) << s.progress << std::defaultfloat << "\n";
  if (st.reason) out << "reason:      " << to_string(*st.reason) << "\n";
  if (!st.error.empty()) out << "error:       " << st.error << "\n";
  out << "evaluations: " << st.evaluations << " (" << st.distinct_configs << " configurations)\n";
  if (!st.best_config_id.empty())
    out << "best:        " << st.best_config_id << " cost " << (st.best_cost ? fmt_number(*st.best_cost) : "-") << "\n";
  if (with_tail && !s.tail.empty()) {
    out << "output:\n";
    for (const auto& l : s.tail) out << "  " << l << "\n";
  }
}

void print_report(std::ostream& out, const TuningReport& r) {
  out << "task:        " << r.task_id << "\n"
      << "solver:      " << r.solver << "\n"
      << "objective:   " << r.objective << "\n"
      << "default:     " << r.default_config_id << "  " << fmt_number(r.t_default) << "\n"
      << "best:        " << r.best_config_id << "  " << fmt_number(r.t_tuned) << "\n"
      << "speed-up:    " << fmt_number(r.speedup) << "x\n"
      << "evaluations: " << r.evaluations << " (" << r.distinct_configs << " configurations)\n";
  if (r.reason) out << "reason:      " << to_string(*r.reason) << "\n";
  out << "per instance:\n";
  for (const auto& i : r.per_instance)
    out << "  " << i.instance << "  " << fmt_number(i.t_default) << " -> " << fmt_number(i.t_tuned) << "  ("
        << fmt_number(i.speedup) << "x)\n";
  out << "recommended parameters:\n";
  for (const auto& [k, v] : r.best_params.items())
    out << "  " << k << " = " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
}

/// Sets `key`, dropping any underscore spelling already present.
void set_key(json& doc, const std::string& key, json value) {
  std::string underscored = key;
  std::replace(underscored.begin(), underscored.end(), '-', '_');
  doc.erase(underscored);
  doc[key] = std::move(value);
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Blocking run with live output; Ctrl-C stops the task with reason user-stop.
int run_and_follow(TaskManager& tasks, const std::string& id, bool json_out, std::ostream& out) {
  std::mutex out_mu;
  if (!json_out)
    tasks.set_output_sink([&](const std::string& line) {
      std::lock_guard lock(out_mu);
      out << line << "\n" << std::flush;
    });
  TaskSummary s;
  {
    SignalWatch watch([&] {
      try {
        tasks.stop(id);
      } catch (const std::exception&) {
      }
    });
    s = tasks.run(id);
  }
  tasks.set_output_sink({});
  if (json_out) out << task_summary_to_json(s).dump(2) << "\n";
  else print_summary(out, s, false);
  return s.state.status == TaskStatus::finished ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Automatic hyperparameter tuner for black-box solvers", "opttune"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  std::string home;
  app.add_option("--home", home, "Task home (default $OPTTUNE_HOME or ~/.opttune)");

  Common common;
  std::string task_id;
  std::optional<int> exit_code;
  auto manager = [&] { return std::make_unique<TaskManager>(home.empty() ? TaskManager::default_home() : fs::path(home)); };

  // create-task
  auto* create = app.add_subcommand("create-task", "Create a tuning task (and optionally run it)");
  std::string solver, config_file, name, parameters, strategy, objective;
  std::vector<std::string> problems;
  std::optional<double> max_tuning_time, max_eval_time;
  std::optional<std::int64_t> max_combos, seed, concurrency;
  bool run_now = false;
  create->add_option("--solver", solver, "Registered solver adapter, e.g. cbc or mocksolver");
  create->add_option("--problem", problems, "Problem file; repeat for several")->allow_extra_args(false);
  create->add_option("--config", config_file, "Task configuration file (JSON)")->check(CLI::ExistingFile);
  create->add_option("--name", name, "Task name");
  create->add_option("--max-tuning-time", max_tuning_time, "Seconds before the task stops");
  create->add_option("--max-eval-time", max_eval_time, "Seconds allowed for one evaluation");
  create->add_option("--max-distinct-para-combos", max_combos, "Distinct configurations to evaluate");
  create->add_option("--parameters", parameters, "Comma-separated parameters to tune");
  create->add_option("--tuning-objective", objective, "wallclock or a metric name from the solver's rules");
  create->add_option("--strategy", strategy, "surrogate, random or grid");
  create->add_option("--seed", seed, "Random seed");
  create->add_option("--concurrency", concurrency, "Parallel evaluations");
  create->add_flag("--run", run_now, "Run the task right after creating it");
  add_format(create, common);
  create->callback([&] {
    json doc = json::object();
    if (!config_file.empty()) {
      doc = read_json_file(config_file);
      if (!doc.is_object()) throw ValidationError("config", "task configuration must be an object");
    }
    json all_problems = json::array();
    for (const char* key : {"problems", "problem"}) {
      if (auto it = doc.find(key); it != doc.end()) {
        if (it->is_string()) all_problems.push_back(*it);
        else if (it->is_array()) for (const auto& p : *it) all_problems.push_back(p);
        else throw ValidationError(key, "must be a path or a list of paths");
        doc.erase(key);
      }
    }
    for (const auto& p : problems) all_problems.push_back(p);
    doc["problems"] = all_problems;
    if (!solver.empty()) set_key(doc, "solver", solver);
    if (!doc.contains("solver")) throw UsageError("--solver is required (or a solver key in --config)");
    if (!name.empty()) set_key(doc, "name", name);
    if (max_tuning_time) set_key(doc, "max-tuning-time", *max_tuning_time);
    if (max_eval_time) set_key(doc, "max-eval-time", *max_eval_time);
    if (max_combos) set_key(doc, "max-distinct-para-combos", *max_combos);
    if (!parameters.empty()) set_key(doc, "parameters", parameters);
    if (!objective.empty()) set_key(doc, "tuning-objective", objective);
    if (!strategy.empty()) set_key(doc, "strategy", strategy);
    if (seed) set_key(doc, "seed", *seed);
    if (concurrency) set_key(doc, "concurrency", *concurrency);

    auto tasks = manager();
    const auto id = tasks->create(doc);
    if (!run_now) {
      if (common.json()) out << json{{"task_id", id}}.dump(2) << "\n";
      else out << id << "\n";
      return;
    }
    if (!common.json()) out << id << "\n" << std::flush;
    exit_code = run_and_follow(*tasks, id, common.json(), out);
  });

  // run
  auto* run = app.add_subcommand("run", "Run a created task in the foreground");
  run->add_option("task-id", task_id)->required();
  add_format(run, common);
  run->callback([&] {
    auto tasks = manager();
    exit_code = run_and_follow(*tasks, task_id, common.json(), out);
  });

  // list
  auto* list = app.add_subcommand("list", "List tasks");
  bool deleted = false;
  list->add_flag("--deleted", deleted, "List deleted tasks instead of active ones");
  add_format(list, common);
  list->callback([&] {
    const auto tasks = manager()->list(deleted);
    if (common.json()) {
      json arr = json::array();
      for (const auto& s : tasks) arr.push_back(task_summary_to_json(s));
      out << arr.dump(2) << "\n";
      return;
    }
    out << std::left << std::setw(24) << "TASK" << std::setw(20) << "NAME" << std::setw(12) << "SOLVER"
        << std::setw(10) << "STATE" << std::setw(10) << "PROGRESS" << "REASON\n";
    for (const auto& s : tasks) {
      std::ostringstream progress;
      progress << std::fixed << std::setprecision(0) << s.progress * 100.0 << "%";
      out << std::setw(24) << s.id << std::setw(20) << s.name << std::setw(12) << s.solver << std::setw(10)
          << to_string(s.state.status) << std::setw(10) << progress.str()
          << (s.state.reason ? std::string(to_string(*s.state.reason)) : "") << "\n";
    }
    out << std::right;
  });

  // status
  auto* status = app.add_subcommand("status", "Show a task's state and recent output");
  bool follow = false;
  status->add_option("task-id", task_id)->required();
  status->add_flag("--follow,-f", follow, "Stream output lines until the task stops running");
  add_format(status, common);
  status->callback([&] {
    auto tasks = manager();
    if (follow) {
      std::size_t since = 0;
      while (true) {
        const bool running = tasks->status(task_id, 0).state.status == TaskStatus::running;
        const auto chunk = tasks->output(task_id, since);
        for (const auto& l : chunk.lines) {
          if (common.json()) out << json{{"line", l}}.dump() << "\n";
          else out << l << "\n";
        }
        out << std::flush;
        since = chunk.next;
        if (!running) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
      }
    }
    const auto s = tasks->status(task_id, follow ? 0 : 20);
    if (common.json()) out << task_summary_to_json(s).dump(2) << "\n";
    else print_summary(out, s, !follow);
  });

  // stop
  auto* stop = app.add_subcommand("stop", "Ask a running task to stop");
  stop->add_option("task-id", task_id)->required();
  add_format(stop, common);
  stop->callback([&] {
    manager()->stop(task_id);
    if (common.json()) out << json{{"task_id", task_id}, {"stop_requested", true}}.dump(2) << "\n";
    else out << "stop requested for " << task_id << "\n";
  });

  // delete
  auto* del = app.add_subcommand("delete", "Move a task to the deleted list");
  del->add_option("task-id", task_id)->required();
  add_format(del, common);
  del->callback([&] {
    manager()->remove(task_id);
    if (common.json()) out << json{{"task_id", task_id}, {"state", "deleted"}}.dump(2) << "\n";
    else out << "deleted " << task_id << "\n";
  });

  // report
  auto* report = app.add_subcommand("report", "Print the tuning report of a finished task");
  report->add_option("task-id", task_id)->required();
  add_format(report, common);
  report->callback([&] {
    const auto r = manager()->report(task_id);
    if (common.json()) out << report_to_json(r).dump(2) << "\n";
    else print_report(out, r);
  });

  // sanitize
  auto* sanitize = app.add_subcommand("sanitize", "Anonymize an MPS or LP model");
  std::string model_format, input, out_dir;
  bool sanitize_json = false;
  sanitize->add_option("--format", model_format, "Model format: mps or lp (default: from the extension)");
  sanitize->add_option("file", input, "Model file")->required()->check(CLI::ExistingFile);
  sanitize->add_option("--out-dir", out_dir, "Directory for the outputs (default: beside the input)");
  sanitize->add_flag("--json", sanitize_json, "Machine-readable output");
  sanitize->callback([&] {
    ModelFormat format;
    try {
      format = model_format.empty() ? format_from_path(input) : parse_model_format(model_format);
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
    const auto r = sanitize_file(input, format, out_dir);
    if (sanitize_json)
      out << json{{"sanitized", r.sanitized.string()}, {"map", r.map.string()}, {"names", r.names.size()}}.dump(2)
          << "\n";
    else out << r.sanitized.string() << "\n" << r.map.string() << "\n";
  });

  // desanitize
  auto* desanitize = app.add_subcommand("desanitize", "Restore original names in a solution or log file");
  std::string result_file, map_file, model_file, output_file;
  bool desanitize_json = false;
  desanitize->add_option("file", result_file, "File produced from the sanitized model")->required()->check(CLI::ExistingFile);
  desanitize->add_option("--map", map_file, "Name map written by sanitize")->required()->check(CLI::ExistingFile);
  desanitize->add_option("--model", model_file, "Original model; the map must match it")->check(CLI::ExistingFile);
  desanitize->add_option("--output,-o", output_file, "Write here instead of standard output");
  desanitize->add_flag("--json", desanitize_json, "Machine-readable output");
  desanitize->callback([&] {
    const auto map = read_namemap(map_file);
    if (!model_file.empty() && !verify_map(map, model_file))
      throw ValidationError("map", "name map " + map_file + " does not belong to " + model_file);
    const auto text = deanonymize(read_text_file(result_file), map);
    if (!output_file.empty()) write_file_atomic(output_file, text);
    if (desanitize_json) {
      json doc{{"names", map.size()}};
      if (output_file.empty()) doc["text"] = text;
      else doc["output"] = output_file;
      out << doc.dump(2) << "\n";
    } else if (output_file.empty()) {
      out << text;
    }
  });

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the HTTP task API");
  std::string addr = "127.0.0.1:8080";
  std::size_t max_upload_mb = 256;
  serve->add_option("--addr", addr, "host:port to listen on")->capture_default_str();
  serve->add_option("--max-upload-mb", max_upload_mb, "Upload size cap in MiB")->capture_default_str();
  serve->callback([&] {
    const auto colon = addr.rfind(':');
    int port = -1;
    try {
      if (colon != std::string::npos) port = std::stoi(addr.substr(colon + 1));
    } catch (const std::exception&) {
    }
    if (colon == std::string::npos || port < 0 || port > 65535) throw UsageError("--addr must be host:port");
    const auto host = addr.substr(0, colon);

    auto tasks = manager();
    ApiOptions options;
    options.max_upload_bytes = max_upload_mb << 20;
    auto server = std::make_unique<ApiServer>(*tasks, options);
    {
      SignalWatch watch([&] {
        tasks->stop_all();
        server->stop();
      });
      if (!server->bind(host, port)) {
        err << "opttune: cannot listen on " << addr << "\n";
        exit_code = 1;
        return;
      }
      out << "listening on http://" << host << ":" << server->port() << "\n" << std::flush;
      if (watch.fired()) server->stop();
      else server->listen();
      tasks->stop_all();
    }
    server.reset();
    tasks.reset();
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    err << "opttune: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "opttune: " << e.what() << "\n";
    return 1;
  }
  return exit_code.value_or(0);
}

}  // namespace opttune
