#include <gtest/gtest.h>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "opttune/cli.hpp"
#include "opttune/jsonio.hpp"
#include "testkit.hpp"

namespace opttune {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    testkit::write_file(home / "p1.mps", "NAME P1\nENDATA\n");
    testkit::write_mock_adapter(home / "adapters", "fastmock", {{"base_time", 0.02}});
    testkit::write_mock_adapter(home / "adapters", "slowmock", {{"force_time", 0.5}});
  }

  Result cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"--home", home.path().string()});
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
  }

  std::string create(const std::string& solver, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"create-task", "--solver", solver, "--problem", (home / "p1.mps").string(),
                                  "--max-eval-time", "5"};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    auto id = r.out;
    while (!id.empty() && id.back() == '\n') id.pop_back();
    return id;
  }

  testkit::TempDir home;
};

TEST_F(Cli, CreateListStatus) {
  const auto id = create("fastmock", {"--name", "first"});
  ASSERT_FALSE(id.empty());
  const auto list = cli({"list", "--json"});
  ASSERT_EQ(list.code, 0);
  const auto arr = json::parse(list.out);
  ASSERT_EQ(arr.size(), 1u);
  EXPECT_EQ(arr[0]["task_id"], id);
  EXPECT_EQ(arr[0]["name"], "first");
  EXPECT_EQ(arr[0]["state"], "created");
  const auto table = cli({"list"});
  EXPECT_NE(table.out.find("TASK"), std::string::npos);
  EXPECT_NE(table.out.find(id), std::string::npos);
  const auto status = cli({"status", id, "--format", "json"});
  ASSERT_EQ(status.code, 0);
  EXPECT_EQ(json::parse(status.out)["progress"], 0.0);
}

TEST_F(Cli, CreateWithConfigFileAndOverrides) {
  testkit::write_file(home / "task.json",
                      json{{"solver", "fastmock"}, {"problems", {(home / "p1.mps").string()}}, {"seed", 4}}.dump());
  const auto r = cli({"create-task", "--config", (home / "task.json").string(), "--seed", "9", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto id = json::parse(r.out)["task_id"].get<std::string>();
  EXPECT_EQ(read_json_file(TaskManager(home.path()).task_file(id, TaskFile::config))["seed"], 9);
}

TEST_F(Cli, RunAndReport) {
  const auto id = create("fastmock", {"--max-distinct-para-combos", "4", "--tuning-objective", "runtime"});
  const auto run = cli({"run", id, "--json"});
  ASSERT_EQ(run.code, 0) << run.err;
  const auto summary = json::parse(run.out);
  EXPECT_EQ(summary["state"], "finished");
  EXPECT_EQ(summary["termination_reason"], "combo-budget");
  EXPECT_EQ(summary["distinct_configs"], 4);
  const auto report = cli({"report", id, "--json"});
  ASSERT_EQ(report.code, 0) << report.err;
  const auto doc = json::parse(report.out);
  EXPECT_EQ(doc["task_id"], id);
  EXPECT_GE(doc["speedup"].get<double>(), 1.0);
  const auto text = cli({"report", id});
  EXPECT_NE(text.out.find("recommended parameters:"), std::string::npos);
}

TEST_F(Cli, ErrorsAndExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"create-task", "--problem", "x.mps"}).code, 2);
  EXPECT_EQ(cli({"list", "--format", "yaml"}).code, 2);
  const auto unknown = cli({"status", "nope"});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("nope"), std::string::npos);
  const auto bad = cli({"create-task", "--solver", "fastmock", "--max-eval-time", "-3"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("max-eval-time"), std::string::npos);
  const auto id = create("fastmock");
  EXPECT_EQ(cli({"report", id}).code, 1);
  EXPECT_EQ(cli({"stop", id}).code, 1);
  EXPECT_EQ(cli({"delete", id}).code, 0);
  EXPECT_EQ(json::parse(cli({"list", "--deleted", "--json"}).out).size(), 1u);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(Cli, SanitizeAndDesanitize) {
  const auto model = home / "tiny.mps";
  fs::copy_file(testkit::fixtures_dir() / "models" / "tiny.mps", model);
  const auto r = cli({"sanitize", model.string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = json::parse(r.out);
  EXPECT_EQ(doc["sanitized"], (home / "tiny.mps.san.mps").string());
  EXPECT_EQ(doc["names"], 4);
  testkit::write_file(home / "solution.txt", "X1 1\nX2 3\nCON1 4\n");
  const auto back = cli({"desanitize", (home / "solution.txt").string(), "--map", doc["map"], "--model", model.string()});
  ASSERT_EQ(back.code, 0) << back.err;
  EXPECT_EQ(back.out, "XONE 1\nYTWO 3\nLIM1 4\n");
  testkit::write_file(home / "other.mps", read_text_file(model) + "* changed\n");
  EXPECT_EQ(cli({"desanitize", (home / "solution.txt").string(), "--map", doc["map"], "--model",
                 (home / "other.mps").string()})
                .code,
            1);
}

TEST_F(Cli, SanitizeRejectsUnsupportedInput) {
  testkit::write_file(home / "model.nl", "g3 1 1 0\n");
  EXPECT_EQ(cli({"sanitize", (home / "model.nl").string()}).code, 2);
  testkit::write_file(home / "broken.mps", "NAME\nROWS\n Q  c\nENDATA\n");
  const auto r = cli({"sanitize", (home / "broken.mps").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("3"), std::string::npos);
  EXPECT_EQ(cli({"sanitize", (home / "missing.mps").string()}).code, 2);
}

TEST_F(Cli, EmptyHomeAndRepeatedCreates) {
  const auto empty = cli({"list", "--json"});
  EXPECT_EQ(empty.code, 0);
  EXPECT_TRUE(json::parse(empty.out).empty());
  EXPECT_NE(create("fastmock"), create("fastmock"));
  const auto unknown = cli({"create-task", "--solver", "cplex", "--problem", (home / "p1.mps").string()});
  EXPECT_EQ(unknown.code, 1);
  EXPECT_NE(unknown.err.find("mocksolver"), std::string::npos);
  EXPECT_NE(unknown.err.find("cbc"), std::string::npos);
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& out_file) {
  const pid_t pid = fork();
  if (pid == 0) {
    const int fd = ::open(out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(fd, 1);
    dup2(fd, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(argv[0], argv.data());
    _exit(127);
  }
  return pid;
}

/// Exit status, or -1 if the child outlives `limit` (it is killed then).
int wait_exit(pid_t pid, std::chrono::seconds limit) {
  const auto t0 = std::chrono::steady_clock::now();
  int status = 0;
  while (waitpid(pid, &status, WNOHANG) == 0) {
    if (std::chrono::steady_clock::now() - t0 > limit) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      return -1;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool wait_for_text(const fs::path& file, const std::string& text) {
  const auto t0 = std::chrono::steady_clock::now();
  while (std::chrono::steady_clock::now() - t0 < std::chrono::seconds(20)) {
    if (fs::exists(file) && read_text_file(file).find(text) != std::string::npos) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

TEST_F(Cli, ServeStopsTasksOnInterruptAndRejectsBusyPort) {
  const auto opttune = (testkit::bin_dir() / "opttune").string();
  const auto log1 = home / "serve1.txt";
  const pid_t server = spawn({opttune, "--home", home.path().string(), "serve", "--addr", "127.0.0.1:0"}, log1);
  ASSERT_TRUE(wait_for_text(log1, "listening on"));
  const auto text = read_text_file(log1);
  const int port = std::stoi(text.substr(text.rfind(':') + 1));

  const auto log2 = home / "serve2.txt";
  const pid_t busy =
      spawn({opttune, "--home", home.path().string(), "serve", "--addr", "127.0.0.1:" + std::to_string(port)}, log2);
  EXPECT_EQ(wait_exit(busy, std::chrono::seconds(10)), 1);

  httplib::Client client("127.0.0.1", port);
  const auto created = client.Post("/api/v1/tasks",
                                   json{{"solver", "slowmock"},
                                        {"problems", {(home / "p1.mps").string()}},
                                        {"max-tuning-time", 60}}
                                       .dump(),
                                   "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  const auto id = json::parse(created->body)["task_id"].get<std::string>();
  ASSERT_EQ(client.Post("/api/v1/tasks/" + id + "/run", "", "application/json")->status, 202);
  std::this_thread::sleep_for(std::chrono::milliseconds(800));
  ASSERT_EQ(kill(server, SIGINT), 0);
  EXPECT_EQ(wait_exit(server, std::chrono::seconds(15)), 0) << read_text_file(log1);
  const auto s = json::parse(cli({"status", id, "--json"}).out);
  EXPECT_EQ(s["state"], "finished");
  EXPECT_EQ(s["termination_reason"], "user-stop");
}

TEST_F(Cli, InterruptStopsForegroundRun) {
  const auto out_file = home / "stdout.txt";
  const auto opttune = (testkit::bin_dir() / "opttune").string();
  const std::vector<std::string> args{opttune, "--home", home.path().string(), "create-task", "--solver", "slowmock",
                                      "--problem", (home / "p1.mps").string(), "--max-tuning-time", "60", "--run"};
  const pid_t pid = fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    const int fd = ::open(out_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    dup2(fd, 1);
    dup2(fd, 2);
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(argv[0], argv.data());
    _exit(127);
  }
  const auto t0 = std::chrono::steady_clock::now();
  while (std::chrono::steady_clock::now() - t0 < std::chrono::seconds(20)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (fs::exists(out_file) && read_text_file(out_file).find("started:") != std::string::npos) break;
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  ASSERT_EQ(kill(pid, SIGINT), 0);
  const auto t1 = std::chrono::steady_clock::now();
  int status = 0;
  while (waitpid(pid, &status, WNOHANG) == 0) {
    if (std::chrono::steady_clock::now() - t1 > std::chrono::seconds(15)) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      FAIL() << "opttune did not exit after SIGINT:\n" << read_text_file(out_file);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  ASSERT_TRUE(WIFEXITED(status)) << read_text_file(out_file);
  EXPECT_EQ(WEXITSTATUS(status), 0) << read_text_file(out_file);
  const auto list = json::parse(cli({"list", "--json"}).out);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0]["state"], "finished");
  EXPECT_EQ(list[0]["termination_reason"], "user-stop");
}

}  // namespace
}  // namespace opttune
