#include "opttune/error.hpp"
#include "opttune/taskman.hpp"

namespace opttune {

LocalBackend::LocalBackend(std::size_t capacity) {
  if (capacity == 0) throw ValidationError("concurrency", "must be >= 1");
  for (std::size_t i = 0; i < capacity; ++i) workers_.emplace_back([this, i] { work(i); });
}

LocalBackend::~LocalBackend() {
  cancel_all();
  {
    std::lock_guard lock(mu_);
    shutdown_ = true;
  }
  jobs_cv_.notify_all();
  for (auto& t : workers_) t.join();
}

std::size_t LocalBackend::in_flight() const {
  std::lock_guard lock(mu_);
  return queue_.size() + running_;
}

void LocalBackend::submit(Job job) {
  {
    std::lock_guard lock(mu_);
    if (queue_.size() + running_ >= workers_.size())
      throw Error("backend at capacity (" + std::to_string(workers_.size()) + " evaluations in flight)");
    queue_.push_back(std::move(job));
  }
  jobs_cv_.notify_one();
}

std::optional<Completion> LocalBackend::await_completion(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!done_cv_.wait_for(lock, timeout, [&] { return !completions_.empty(); })) return std::nullopt;
  Completion c = std::move(completions_.front());
  completions_.pop_front();
  return c;
}

void LocalBackend::cancel_all() {
  std::unique_lock lock(mu_);
  queue_.clear();
  cancel_ = true;
  done_cv_.wait(lock, [&] { return running_ == 0; });
  completions_.clear();
  ++generation_;
  cancel_ = false;
}

void LocalBackend::work(std::size_t index) {
  const std::string worker_id = "local-" + std::to_string(index);
  std::unique_lock lock(mu_);
  while (true) {
    jobs_cv_.wait(lock, [&] { return shutdown_ || !queue_.empty(); });
    if (queue_.empty()) return;
    Job job = std::move(queue_.front());
    queue_.pop_front();
    ++running_;
    const auto generation = generation_;
    lock.unlock();

    Completion done{job.tag, std::nullopt, {}};
    job.request.cancel = &cancel_;
    job.request.worker_id = worker_id;
    try {
      done.record = run_once(*job.adapter, job.request);
    } catch (const std::exception& e) {
      done.error = e.what();
    }

    lock.lock();
    --running_;
    if (generation == generation_ && !cancel_) completions_.push_back(std::move(done));
    done_cv_.notify_all();
  }
}

}  // namespace opttune
