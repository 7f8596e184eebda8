#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <string>

namespace opttune {

class TaskManager;

struct ApiOptions {
  std::size_t max_upload_bytes = std::size_t{256} << 20;
  /// Longest wait of GET /tasks/{id}/output before it answers with no lines.
  std::chrono::milliseconds poll_timeout{25000};
  std::size_t threads = 32;
};

/// HTTP task API under /api/v1 over a shared TaskManager.
class ApiServer {
 public:
  explicit ApiServer(TaskManager& tasks, ApiOptions options = {});
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Port 0 picks a free port. False if the address cannot be bound.
  bool bind(const std::string& host, int port);
  int port() const;
  /// Serves until stop(); false if the server failed.
  bool listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace opttune
