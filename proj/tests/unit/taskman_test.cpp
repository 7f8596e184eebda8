#include <gtest/gtest.h>

#include <chrono>
#include <set>
#include <thread>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/taskman.hpp"
#include "testkit.hpp"

namespace opttune {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const json kOneBoolean = json::parse(R"({
  "solver": "flagsolver", "version": "1",
  "parameters": [{"name": "flag", "kind": "boolean", "default": false}]})");

TEST(TaskConfig, DefaultsAndAliases) {
  const auto c = parse_task_config(json{{"solver", "mocksolver"}, {"problem", "a.mps"}, {"max_eval_time", 5}});
  EXPECT_EQ(c.problems, std::vector<std::string>{"a.mps"});
  EXPECT_EQ(c.max_eval_time, 5.0);
  EXPECT_EQ(c.max_distinct_para_combos, 200);
  EXPECT_EQ(c.tuning_objective, "wallclock");
  EXPECT_EQ(c.strategy, Strategy::surrogate);
  EXPECT_EQ(parse_task_config(task_config_to_json(c)).max_eval_time, 5.0);
  EXPECT_EQ(parse_task_config(json{{"solver", "s"}, {"parameters", "cuts, preprocess"}}).parameters,
            (std::vector<std::string>{"cuts", "preprocess"}));
}

TEST(TaskConfig, ErrorsNameTheKey) {
  auto key_of = [](json doc) {
    try {
      parse_task_config(doc);
    } catch (const ValidationError& e) {
      return e.subject();
    }
    return std::string("<accepted>");
  };
  EXPECT_EQ(key_of({{"solver", "s"}, {"max-eval-time", 0}}), "max-eval-time");
  EXPECT_EQ(key_of({{"solver", "s"}, {"max-tuning-time", -1}}), "max-tuning-time");
  EXPECT_EQ(key_of({{"solver", "s"}, {"max-distinct-para-combos", 0}}), "max-distinct-para-combos");
  EXPECT_EQ(key_of({{"solver", "s"}, {"max-distinct-para-combos", 2.5}}), "max-distinct-para-combos");
  EXPECT_EQ(key_of({{"solver", "s"}, {"concurrency", 0}}), "concurrency");
  EXPECT_EQ(key_of({{"solver", "s"}, {"capping-factor", 0.5}}), "capping-factor");
  EXPECT_EQ(key_of({{"solver", "s"}, {"verbose", 3}}), "verbose");
  EXPECT_EQ(key_of({{"solver", "s"}, {"colour", "red"}}), "colour");
  EXPECT_EQ(key_of({{"solver", "s"}, {"seed", -1}}), "seed");
  EXPECT_EQ(key_of({{"solver", "s"}, {"max_eval_time", 1}, {"max-eval-time", 2}}), "max-eval-time");
  EXPECT_EQ(key_of({{"problems", {"a"}}}), "solver");
}

TEST(TaskState, TransitionTable) {
  using S = TaskStatus;
  EXPECT_TRUE(transition_allowed(S::created, S::running));
  EXPECT_TRUE(transition_allowed(S::created, S::deleted));
  EXPECT_TRUE(transition_allowed(S::running, S::finished));
  EXPECT_TRUE(transition_allowed(S::running, S::failed));
  EXPECT_TRUE(transition_allowed(S::finished, S::deleted));
  EXPECT_TRUE(transition_allowed(S::failed, S::deleted));
  EXPECT_FALSE(transition_allowed(S::running, S::deleted));
  EXPECT_FALSE(transition_allowed(S::finished, S::running));
  EXPECT_FALSE(transition_allowed(S::deleted, S::created));
  for (auto s : {S::created, S::running, S::finished, S::failed, S::deleted}) {
    EXPECT_FALSE(transition_allowed(s, S::created));
    EXPECT_EQ(parse_task_status(to_string(s)), s);
  }
}

TEST(TaskState, JsonRoundTrip) {
  TaskState s;
  s.id = "t1";
  s.status = TaskStatus::finished;
  s.reason = TerminationReason::time_budget;
  s.distinct_configs = 4;
  s.best_cost = 1.5;
  s.best_config_id = "abc";
  const auto back = task_state_from_json(task_state_to_json(s));
  EXPECT_EQ(task_state_to_json(back), task_state_to_json(s));
}

TEST(Progress, MaxOfTimeAndComboFractions) {
  TaskConfig c;
  c.max_tuning_time = 100;
  c.max_distinct_para_combos = 10;
  EXPECT_DOUBLE_EQ(progress_fraction(20, 1, c), 0.2);
  EXPECT_DOUBLE_EQ(progress_fraction(5, 3, c), 0.3);
  EXPECT_DOUBLE_EQ(progress_fraction(500, 3, c), 1.0);
  EXPECT_DOUBLE_EQ(progress_fraction(0, 0, c), 0.0);
}

TEST(LocalBackend, RejectsWorkBeyondCapacity) {
  testkit::TempDir dir;
  testkit::write_file(dir / "p.mps", "NAME\n");
  auto adapter = std::make_shared<SolverAdapter>(load_adapter(testkit::write_mock_adapter(dir.path(), "m",
                                                                                          {{"force_time", -1}})));
  LocalBackend backend(2);
  auto job = [&](std::uint64_t tag) {
    Job j;
    j.tag = tag;
    j.adapter = adapter;
    j.request.config = default_config(adapter->load_space());
    j.request.instance = dir / "p.mps";
    j.request.cap_seconds = 30;
    j.request.seed = tag;
    j.request.artifacts_dir = dir / "evals";
    return j;
  };
  backend.submit(job(1));
  backend.submit(job(2));
  EXPECT_THROW(backend.submit(job(3)), Error);
  const auto t0 = Clock::now();
  backend.cancel_all();
  EXPECT_LT(seconds_since(t0), 5.0);
  EXPECT_EQ(backend.in_flight(), 0u);
  EXPECT_FALSE(backend.await_completion(std::chrono::milliseconds(100)));
  backend.submit(job(4));
}

TEST(LocalBackend, DeliversCompletions) {
  testkit::TempDir dir;
  testkit::write_file(dir / "p.mps", "NAME\n");
  auto adapter = std::make_shared<SolverAdapter>(load_adapter(testkit::write_mock_adapter(dir.path(), "m",
                                                                                          {{"force_time", 0.05}})));
  LocalBackend backend(3);
  std::set<std::uint64_t> tags;
  for (std::uint64_t t = 1; t <= 3; ++t) {
    Job j;
    j.tag = t;
    j.adapter = adapter;
    j.request.config = default_config(adapter->load_space());
    j.request.instance = dir / "p.mps";
    j.request.cap_seconds = 10;
    j.request.seed = t;
    j.request.artifacts_dir = dir / "evals";
    backend.submit(std::move(j));
  }
  for (int i = 0; i < 3; ++i) {
    auto c = backend.await_completion(std::chrono::seconds(10));
    ASSERT_TRUE(c);
    ASSERT_TRUE(c->record);
    EXPECT_EQ(c->record->status, EvalStatus::ok);
    tags.insert(c->tag);
  }
  EXPECT_EQ(tags, (std::set<std::uint64_t>{1, 2, 3}));
}

class Tasks : public ::testing::Test {
 protected:
  void SetUp() override {
    testkit::write_file(home / "p1.mps", "NAME P1\nENDATA\n");
    testkit::write_file(home / "p2.mps", "NAME P2\nENDATA\n");
    testkit::write_mock_adapter(home / "adapters", "fastmock", {{"base_time", 0.02}});
    testkit::write_mock_adapter(home / "adapters", "flagsolver",
                                {{"space", kOneBoolean}, {"optimum", {{"flag", true}}}, {"base_time", 0.02}});
    testkit::write_mock_adapter(home / "adapters", "slowmock", {{"force_time", 0.5}});
    testkit::write_mock_adapter(home / "adapters", "crashmock", {{"force_time", 0.01}, {"exit_code", 1}});
    manager = std::make_unique<TaskManager>(home.path());
  }

  json task(const std::string& solver, json extra = json::object()) {
    json doc{{"solver", solver}, {"problems", {(home / "p1.mps").string()}}, {"max-eval-time", 5}};
    doc.update(extra);
    return doc;
  }

  testkit::TempDir home;
  std::unique_ptr<TaskManager> manager;
};

TEST_F(Tasks, CreateFillsDefaultsAndPersists) {
  const auto id = manager->create({{"solver", "fastmock"}, {"problems", {(home / "p1.mps").string()}}});
  const auto s = manager->status(id);
  EXPECT_EQ(s.state.status, TaskStatus::created);
  EXPECT_DOUBLE_EQ(s.progress, 0.0);
  const auto doc = read_json_file(manager->task_file(id, TaskFile::config));
  EXPECT_EQ(doc["max-distinct-para-combos"], 200);
  EXPECT_EQ(doc["max-tuning-time"], 3600.0);
  EXPECT_EQ(doc["task-id"], id);
  EXPECT_TRUE(fs::exists(manager->task_dir(id) / "submitted.json"));
}

TEST_F(Tasks, CreateValidatesAgainstAdapter) {
  auto key_of = [&](json doc) {
    try {
      manager->create(doc);
    } catch (const ValidationError& e) {
      return e.subject();
    }
    return std::string("<accepted>");
  };
  EXPECT_EQ(key_of(task("gurobi")), "solver");
  EXPECT_EQ(key_of(task("fastmock", {{"problems", {(home / "missing.mps").string()}}})), "problems");
  EXPECT_EQ(key_of(task("fastmock", {{"parameters", {"threads", "warp_drive"}}})), "parameters");
  EXPECT_EQ(key_of(task("fastmock", {{"tuning-objective", "happiness"}})), "tuning-objective");
  EXPECT_EQ(key_of(task("fastmock", {{"max-eval-time", 0}})), "max-eval-time");
  EXPECT_EQ(key_of(task("fastmock", {{"tuning-objective", "runtime"}})), "<accepted>");
}

TEST_F(Tasks, CbcStyleConfigRestrictsSpace) {
  testkit::write_file(home / "multimlp.nl", "g3 1 1 0\n");
  const auto id = manager->create({{"solver", "cbc"},
                             {"problem", (home / "multimlp.nl").string()},
                             {"max_tuning_time", 200},
                             {"parameters", {"cuts", "preprocess"}}});
  const auto cfg = manager->config(id);
  EXPECT_EQ(cfg.max_tuning_time, 200.0);
  EXPECT_EQ(manager->adapters().get("cbc").load_space().restrict_to(cfg.parameters).size(), 2u);
}

TEST_F(Tasks, ComboBudgetStopsAtExactlyN) {
  const auto id = manager->create(task("fastmock", {{"max-distinct-para-combos", 10}, {"concurrency", 3}}));
  const auto s = manager->run(id);
  EXPECT_EQ(s.state.status, TaskStatus::finished);
  EXPECT_EQ(s.state.reason, TerminationReason::combo_budget);
  std::set<std::string> ids;
  for (const auto& e : read_history(manager->task_file(id, TaskFile::history))) ids.insert(e.config_id);
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_EQ(s.state.distinct_configs, 10u);
  EXPECT_DOUBLE_EQ(s.progress, 1.0);
  const auto rec = read_json_file(manager->task_file(id, TaskFile::recommended));
  EXPECT_EQ(rec["solver"], "fastmock");
  EXPECT_TRUE(rec["params"].is_object());
  EXPECT_TRUE(fs::exists(manager->task_file(id, TaskFile::report)));
}

TEST_F(Tasks, BaselineDefaultRunsFirstOnEveryProblem) {
  const auto id = manager->create(task("fastmock", {{"max-distinct-para-combos", 4},
                                              {"problems", {(home / "p1.mps").string(), (home / "p2.mps").string()}}}));
  manager->run(id);
  const auto h = read_history(manager->task_file(id, TaskFile::history));
  ASSERT_GE(h.size(), 2u);
  const auto def = default_config(manager->adapters().get("fastmock").load_space()).id();
  EXPECT_EQ(h[0].config_id, def);
  EXPECT_EQ(h[1].config_id, def);
  EXPECT_NE(h[0].instance, h[1].instance);
  EXPECT_EQ(manager->report(id).default_config_id, def);
}

TEST_F(Tasks, TimeBudgetIsSoftForProposals) {
  const auto id = manager->create(task("slowmock", {{"max-tuning-time", 2}, {"max-eval-time", 3}, {"concurrency", 2}}));
  const auto t0 = Clock::now();
  const auto s = manager->run(id);
  const double took = seconds_since(t0);
  EXPECT_EQ(s.state.reason, TerminationReason::time_budget);
  EXPECT_GE(took, 2.0);
  EXPECT_LE(took, 2.0 + 3.0 + 1.0);
}

TEST_F(Tasks, ExhaustsOneBooleanSpace) {
  const auto id = manager->create(task("flagsolver"));
  const auto s = manager->run(id);
  EXPECT_EQ(s.state.reason, TerminationReason::exhausted);
  EXPECT_EQ(s.state.distinct_configs, 2u);
  EXPECT_EQ(read_json_file(manager->task_file(id, TaskFile::recommended))["params"], json({{"flag", true}}));
}

TEST_F(Tasks, CrashingSolverDoesNotFailTask) {
  const auto id = manager->create(task("crashmock", {{"max-distinct-para-combos", 3}}));
  const auto s = manager->run(id);
  EXPECT_EQ(s.state.status, TaskStatus::finished);
  for (const auto& e : read_history(manager->task_file(id, TaskFile::history))) {
    EXPECT_EQ(e.status, EvalStatus::crash);
    EXPECT_DOUBLE_EQ(e.penalized_cost, 10.0 * e.cap_seconds);
  }
}

TEST_F(Tasks, StopRunningTask) {
  const auto id = manager->create(task("slowmock", {{"max-tuning-time", 60}}));
  manager->start(id);
  std::this_thread::sleep_for(std::chrono::milliseconds(700));
  EXPECT_EQ(manager->status(id).state.status, TaskStatus::running);
  EXPECT_THROW(manager->start(id), TransitionError);
  EXPECT_THROW(manager->remove(id), TransitionError);
  const auto t0 = Clock::now();
  manager->stop(id);
  manager->wait(id);
  EXPECT_LT(seconds_since(t0), 5.0);
  const auto s = manager->status(id);
  EXPECT_EQ(s.state.status, TaskStatus::finished);
  EXPECT_EQ(s.state.reason, TerminationReason::user_stop);
  EXPECT_THROW(manager->stop(id), TransitionError);
}

TEST_F(Tasks, StopThroughFileFromAnotherManager) {
  const auto id = manager->create(task("slowmock", {{"max-tuning-time", 60}}));
  manager->start(id);
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  TaskManager other(home.path());
  other.stop(id);
  manager->wait(id);
  EXPECT_EQ(manager->status(id).state.reason, TerminationReason::user_stop);
}

TEST_F(Tasks, ProgressMidRunFollowsFormula) {
  const auto id = manager->create(task("slowmock", {{"max-tuning-time", 20}, {"max-distinct-para-combos", 50}}));
  manager->start(id);
  std::this_thread::sleep_for(std::chrono::milliseconds(1500));
  const auto before = Clock::now();
  const auto s = manager->status(id);
  const auto st = task_state_from_json(read_json_file(manager->task_dir(id) / "state.json"));
  manager->stop(id);
  manager->wait(id);
  ASSERT_EQ(s.state.status, TaskStatus::running);
  EXPECT_GT(s.progress, 0.0);
  EXPECT_LT(s.progress, 1.0);
  const double elapsed = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count() -
                         st.started_epoch - seconds_since(before);
  TaskConfig c = manager->config(id);
  EXPECT_NEAR(s.progress, progress_fraction(elapsed, s.state.distinct_configs, c), 0.02);
}

TEST_F(Tasks, DeleteLifecycle) {
  const auto fresh = manager->create(task("fastmock"));
  manager->remove(fresh);
  EXPECT_EQ(manager->status(fresh).state.status, TaskStatus::deleted);
  EXPECT_THROW(manager->remove(fresh), TransitionError);
  EXPECT_THROW(manager->start(fresh), TransitionError);

  const auto done = manager->create(task("fastmock", {{"max-distinct-para-combos", 3}}));
  manager->run(done);
  EXPECT_TRUE(fs::exists(manager->task_dir(done) / "evals"));
  manager->remove(done);
  EXPECT_FALSE(fs::exists(manager->task_dir(done) / "evals"));
  EXPECT_TRUE(fs::exists(manager->task_file(done, TaskFile::report)));
  EXPECT_TRUE(fs::exists(manager->task_file(done, TaskFile::config)));
  EXPECT_NO_THROW(manager->report(done));

  EXPECT_TRUE(manager->list(false).empty());
  EXPECT_EQ(manager->list(true).size(), 2u);
  EXPECT_THROW(manager->status("nope"), NotFoundError);
  EXPECT_THROW(manager->status("../etc"), NotFoundError);
}

TEST_F(Tasks, ReportNeedsFinishedTask) {
  const auto id = manager->create(task("fastmock"));
  EXPECT_THROW(manager->report(id), TransitionError);
}

TEST_F(Tasks, OutputPagesThroughLog) {
  const auto id = manager->create(task("fastmock", {{"max-distinct-para-combos", 3}}));
  std::vector<std::string> sunk;
  manager->set_output_sink([&](const std::string& line) { sunk.push_back(line); });
  manager->run(id);
  const auto all = manager->output(id, 0);
  EXPECT_EQ(all.lines.size(), all.next);
  EXPECT_EQ(all.lines, sunk);
  const auto rest = manager->output(id, 2);
  EXPECT_EQ(rest.lines.size(), all.lines.size() - 2);
  EXPECT_EQ(rest.lines.front(), all.lines[2]);
  EXPECT_TRUE(manager->output(id, all.next + 5).lines.empty());
  EXPECT_EQ(manager->status(id, 3).tail.size(), 3u);
}

TEST_F(Tasks, UploadedProblemsJoinTask) {
  const auto id = manager->create({{"solver", "fastmock"}, {"max-distinct-para-combos", 2}});
  EXPECT_THROW(manager->run(id), ValidationError);
  const auto stored = manager->add_problem(id, "../../up.mps", "NAME UP\nENDATA\n");
  EXPECT_EQ(stored.parent_path(), manager->task_dir(id) / "problems");
  EXPECT_THROW(manager->add_problem(id, "up.mps", "x"), ValidationError);
  EXPECT_EQ(manager->config(id).problems, std::vector<std::string>{stored.string()});
  EXPECT_EQ(manager->run(id).state.status, TaskStatus::finished);
  EXPECT_THROW(manager->add_problem(id, "late.mps", "x"), TransitionError);
}

TEST_F(Tasks, AdaptiveCapBoundsSlowConfigurations) {
  const json space = json::parse(R"({
    "solver": "levels", "version": "1",
    "parameters": [{"name": "n", "kind": "integer", "domain": [0, 3], "default": 0}]})");
  // runtimes 0.1, 0.6, 1.1, 1.6 s against a cap of max(1, 2 x 0.1) s
  testkit::write_mock_adapter(home / "adapters", "capmock",
                              {{"space", space},
                               {"optimum", {{"n", 0}}},
                               {"base_time", 0.1},
                               {"surface", {{"family", "linear"}, {"coefficients", {15.0}}}}});
  manager = std::make_unique<TaskManager>(home.path());
  const auto id = manager->create(task("capmock", {{"max-eval-time", 5}, {"concurrency", 1}}));
  const auto s = manager->run(id);
  EXPECT_EQ(s.state.reason, TerminationReason::exhausted);
  const auto h = read_history(manager->task_file(id, TaskFile::history));
  std::size_t capped = 0;
  for (const auto& e : h) {
    if (e.rerun) {
      EXPECT_DOUBLE_EQ(e.cap_seconds, 5.0);
    } else if (e.seq > 1) {
      EXPECT_DOUBLE_EQ(e.cap_seconds, 1.0);
    }
    if (e.status == EvalStatus::timeout) {
      ++capped;
      EXPECT_DOUBLE_EQ(e.penalized_cost, 10.0);
    }
  }
  EXPECT_EQ(capped, 2u);
  EXPECT_EQ(read_json_file(manager->task_file(id, TaskFile::recommended))["params"], json({{"n", 0}}));
}

}  // namespace
}  // namespace opttune
