#include "opttune/subprocess.hpp"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace opttune {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

struct SpawnResources {
  posix_spawn_file_actions_t actions{};
  posix_spawnattr_t attr{};
  SpawnResources() {
    posix_spawn_file_actions_init(&actions);
    posix_spawnattr_init(&attr);
  }
  ~SpawnResources() {
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
  }
};

int open_pidfd(pid_t pid) {
#ifdef SYS_pidfd_open
  return static_cast<int>(::syscall(SYS_pidfd_open, pid, 0));
#else
  (void)pid;
  return -1;
#endif
}

// Blocks until the child is a zombie or `timeout_ms` passes. True if it exited.
bool wait_exit(int pidfd, pid_t pid, int timeout_ms) {
  if (pidfd >= 0) {
    pollfd p{pidfd, POLLIN, 0};
    int r = ::poll(&p, 1, timeout_ms);
    return r > 0;
  }
  // No pidfd: poll waitid without reaping.
  const auto until = Clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    siginfo_t info{};
    if (::waitid(P_PID, static_cast<id_t>(pid), &info, WEXITED | WNOHANG | WNOWAIT) == 0 && info.si_pid == pid)
      return true;
    if (Clock::now() >= until) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace

ProcessOutcome run_process(const std::vector<std::string>& argv, const std::filesystem::path& log_file,
                           const ProcessLimits& limits, const std::atomic<bool>* cancel) {
  ProcessOutcome out;
  if (argv.empty()) {
    out.error = "empty command";
    return out;
  }
  Fd log(::open(log_file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
  if (log.get() < 0) {
    out.error = "cannot open log " + log_file.string() + ": " + std::strerror(errno);
    return out;
  }

  SpawnResources res;
  posix_spawn_file_actions_addopen(&res.actions, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_adddup2(&res.actions, log.get(), 1);
  posix_spawn_file_actions_adddup2(&res.actions, log.get(), 2);
  sigset_t empty, defaults;
  sigemptyset(&empty);
  sigemptyset(&defaults);
  for (int s : {SIGINT, SIGTERM, SIGPIPE, SIGHUP, SIGQUIT}) sigaddset(&defaults, s);
  posix_spawnattr_setsigmask(&res.attr, &empty);
  posix_spawnattr_setsigdefault(&res.attr, &defaults);
  posix_spawnattr_setpgroup(&res.attr, 0);
  posix_spawnattr_setflags(&res.attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGMASK | POSIX_SPAWN_SETSIGDEF);

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  const auto t0 = Clock::now();
  pid_t pid = 0;
  if (int rc = ::posix_spawn(&pid, cargv[0], &res.actions, &res.attr, cargv.data(), environ); rc != 0) {
    out.error = "cannot start " + argv[0] + ": " + std::strerror(rc);
    out.wallclock_seconds = seconds_since(t0);
    return out;
  }
  Fd pidfd(open_pidfd(pid));

  bool terminated = false;
  bool killed = false;
  bool cancelled = false;
  double term_at = 0.0;
  while (true) {
    const double now = seconds_since(t0);
    double next = 0.05;  // cancellation check interval
    if (!terminated && limits.cap_seconds > 0) next = std::min(next, limits.cap_seconds - now);
    if (terminated && !killed) next = std::min(next, term_at + limits.grace_seconds - now);
    const int ms = static_cast<int>(std::max(0.0, next) * 1000.0) + (next > 0 ? 1 : 0);
    if (wait_exit(pidfd.get(), pid, ms)) break;

    const double t = seconds_since(t0);
    if (cancel && cancel->load() && !killed) {
      cancelled = true;
      ::kill(-pid, SIGKILL);
      killed = true;
      terminated = true;
    } else if (!terminated && limits.cap_seconds > 0 && t >= limits.cap_seconds) {
      ::kill(-pid, SIGTERM);
      terminated = true;
      term_at = t;
    } else if (terminated && !killed && t >= term_at + limits.grace_seconds) {
      ::kill(-pid, SIGKILL);
      killed = true;
    }
  }
  out.wallclock_seconds = seconds_since(t0);
  // The group leader is a zombie here, so its pid cannot have been reused.
  ::kill(-pid, SIGKILL);
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }

  if (cancelled) {
    out.kind = ProcessOutcome::Kind::cancelled;
  } else if (terminated || (limits.cap_seconds > 0 && out.wallclock_seconds >= limits.cap_seconds)) {
    out.kind = ProcessOutcome::Kind::timed_out;
  } else if (WIFEXITED(status)) {
    out.kind = ProcessOutcome::Kind::exited;
    out.exit_code = WEXITSTATUS(status);
  } else {
    out.kind = ProcessOutcome::Kind::signaled;
    out.signal = WIFSIGNALED(status) ? WTERMSIG(status) : 0;
  }
  if (WIFEXITED(status)) out.exit_code = WEXITSTATUS(status);
  return out;
}

std::optional<std::filesystem::path> find_executable(const std::string& name, const std::filesystem::path& base_dir,
                                                     const std::vector<std::filesystem::path>& search_dirs) {
  namespace fs = std::filesystem;
  auto usable = [](const fs::path& p) { return ::access(p.c_str(), X_OK) == 0 && !fs::is_directory(p); };
  if (name.empty()) return std::nullopt;
  if (name.find('/') != std::string::npos) {
    fs::path p(name);
    if (p.is_relative() && !base_dir.empty() && usable(base_dir / p)) return base_dir / p;
    if (usable(p)) return p;
    return std::nullopt;
  }
  std::vector<fs::path> dirs;
  if (!base_dir.empty()) dirs.push_back(base_dir);
  dirs.insert(dirs.end(), search_dirs.begin(), search_dirs.end());
  if (const char* path = std::getenv("PATH")) {
    std::stringstream ss(path);
    std::string d;
    while (std::getline(ss, d, ':'))
      if (!d.empty()) dirs.emplace_back(d);
  }
  for (const auto& d : dirs)
    if (usable(d / name)) return d / name;
  return std::nullopt;
}

}  // namespace opttune
