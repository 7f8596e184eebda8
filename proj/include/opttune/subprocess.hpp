#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace opttune {

struct ProcessLimits {
  double cap_seconds = 0.0;    // <= 0 means no limit
  double grace_seconds = 4.5;  // SIGTERM -> SIGKILL delay
};

struct ProcessOutcome {
  enum class Kind { exited, signaled, timed_out, cancelled, spawn_failed };
  Kind kind = Kind::spawn_failed;
  std::optional<int> exit_code;
  int signal = 0;
  double wallclock_seconds = 0.0;
  std::string error;
};

/// Runs `argv` directly (no shell) in its own process group with stdout and
/// stderr appended to `log_file`. Once the cap is reached the group gets
/// SIGTERM and, after the grace period, SIGKILL. Setting `*cancel` kills the
/// group immediately.
ProcessOutcome run_process(const std::vector<std::string>& argv, const std::filesystem::path& log_file,
                           const ProcessLimits& limits, const std::atomic<bool>* cancel = nullptr);

/// Finds an executable: paths with a '/' are taken as given (relative ones
/// against `base_dir` first), bare names are looked up in `search_dirs` and then PATH.
std::optional<std::filesystem::path> find_executable(const std::string& name, const std::filesystem::path& base_dir,
                                                     const std::vector<std::filesystem::path>& search_dirs = {});

}  // namespace opttune
