#include "opttune/httpapi.hpp"

#include <httplib.h>

#include <atomic>
#include <thread>

#include "opttune/error.hpp"
#include "opttune/jsonio.hpp"
#include "opttune/taskman.hpp"

namespace opttune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& key = {}) {
  json body{{"error", message}};
  if (!key.empty()) body["errors"] = json::array({json{{"key", key}, {"message", message}}});
  send_json(res, status, body);
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler inner) {
  return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
    try {
      inner(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const TransitionError& e) {
      send_error(res, 409, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 400, e.what(), e.subject());
    } catch (const ParseError& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json doc = parse_json(req.body, "request body");
  if (!doc.is_object()) throw ValidationError("body", "must be an object");
  return doc;
}

/// {name, solver, problems, config} with config keys merged at top level.
json task_document(const json& body) {
  json doc = json::object();
  if (auto it = body.find("config"); it != body.end() && !it->is_null()) {
    if (!it->is_object()) throw ValidationError("config", "must be an object");
    doc = *it;
  }
  for (const auto& [key, value] : body.items()) {
    if (key == "config") continue;
    if (doc.contains(key)) throw ValidationError(key, "given both at top level and in config");
    doc[key] = value;
  }
  return doc;
}

}  // namespace

struct ApiServer::Impl {
  Impl(TaskManager& t, ApiOptions o) : tasks(t), options(o) {}

  TaskManager& tasks;
  ApiOptions options;
  httplib::Server server;
  int port = -1;
  std::atomic<bool> stopping{false};

  void routes();
  void output(const httplib::Request& req, httplib::Response& res);
  void download(const httplib::Request& req, httplib::Response& res);
};

void ApiServer::Impl::routes() {
  const std::string id = "/api/v1/tasks/([^/]+)";

  server.Get("/api/v1/tasks", guarded([this](const auto& req, auto& res) {
    const std::string state = req.has_param("state") ? req.get_param_value("state") : "active";
    if (state != "active" && state != "deleted") throw ValidationError("state", "must be active or deleted");
    json list = json::array();
    for (const auto& s : tasks.list(state == "deleted")) list.push_back(task_summary_to_json(s));
    send_json(res, 200, list);
  }));

  server.Post("/api/v1/tasks", guarded([this](const auto& req, auto& res) {
    const auto task_id = tasks.create(task_document(parse_body(req)));
    send_json(res, 201, {{"task_id", task_id}});
  }));

  server.Get(id, guarded([this](const auto& req, auto& res) {
    send_json(res, 200, task_summary_to_json(tasks.status(req.matches[1])));
  }));

  server.Delete(id, guarded([this](const auto& req, auto& res) {
    tasks.remove(req.matches[1]);
    res.status = 204;
  }));

  server.Post(id + "/problems", guarded([this](const auto& req, auto& res) {
    const std::string task_id = req.matches[1];
    tasks.task_dir(task_id);
    if (!req.is_multipart_form_data() || req.files.empty())
      throw ValidationError("file", "expected a multipart upload with at least one file");
    json stored = json::array();
    for (const auto& [field, file] : req.files) {
      if (file.filename.empty()) continue;
      stored.push_back(tasks.add_problem(task_id, file.filename, file.content).string());
    }
    if (stored.empty()) throw ValidationError("file", "upload carries no file name");
    send_json(res, 201, {{"stored_path", stored.front()}, {"stored_paths", stored}});
  }));

  server.Post(id + "/run", guarded([this](const auto& req, auto& res) {
    const std::string task_id = req.matches[1];
    tasks.start(task_id);
    send_json(res, 202, {{"task_id", task_id}, {"state", "running"}});
  }));

  server.Post(id + "/stop", guarded([this](const auto& req, auto& res) {
    const std::string task_id = req.matches[1];
    tasks.stop(task_id);
    send_json(res, 202, {{"task_id", task_id}, {"stop_requested", true}});
  }));

  server.Get(id + "/output", guarded([this](const auto& req, auto& res) { output(req, res); }));

  server.Get(id + "/report", guarded([this](const auto& req, auto& res) {
    send_json(res, 200, report_to_json(tasks.report(req.matches[1])));
  }));

  server.Get(id + "/files/([^/]+)", guarded([this](const auto& req, auto& res) { download(req, res); }));

  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 413) send_error(res, 413, "upload exceeds the size limit");
    else if (res.status == 404) send_error(res, 404, "no such route");
    else send_error(res, res.status, httplib::status_message(res.status));
  });
}

void ApiServer::Impl::output(const httplib::Request& req, httplib::Response& res) {
  const std::string task_id = req.matches[1];
  std::size_t since = 0;
  if (req.has_param("since")) {
    const auto text = req.get_param_value("since");
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size() || v < 0) throw std::invalid_argument(text);
      since = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ValidationError("since", "must be a non-negative line number");
    }
  }
  auto timeout = options.poll_timeout;
  if (req.has_param("timeout")) {
    try {
      const double s = std::stod(req.get_param_value("timeout"));
      if (s < 0) throw std::invalid_argument("negative");
      timeout = std::min(timeout, std::chrono::milliseconds(static_cast<long long>(s * 1000.0)));
    } catch (const std::exception&) {
      throw ValidationError("timeout", "must be a non-negative number of seconds");
    }
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  OutputChunk chunk = tasks.output(task_id, since);
  while (chunk.lines.empty() && !stopping && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    chunk = tasks.output(task_id, since);
  }
  res.set_header("X-Next-Since", std::to_string(chunk.next));
  send_json(res, 200, {{"since", since}, {"next", chunk.next}, {"lines", chunk.lines}});
}

void ApiServer::Impl::download(const httplib::Request& req, httplib::Response& res) {
  const std::string task_id = req.matches[1];
  const std::string which = req.matches[2];
  TaskFile file;
  std::string content_type = "text/plain";
  if (which == "recommended") {
    file = TaskFile::recommended;
    content_type = kJson;
  } else if (which == "log") {
    file = TaskFile::log;
  } else if (which == "history") {
    file = TaskFile::history;
    content_type = "application/x-ndjson";
  } else {
    throw NotFoundError("unknown file '" + which + "'; expected recommended, log or history");
  }
  const auto path = tasks.task_file(task_id, file);
  if (!fs::exists(path)) {
    const auto state = tasks.status(task_id, 0).state.status;
    throw TransitionError("task " + task_id + " is " + std::string(to_string(state)) + "; " + which +
                          " is not available yet");
  }
  res.status = 200;
  res.set_header("Content-Disposition", "attachment; filename=\"" + path.filename().string() + "\"");
  res.set_content(read_text_file(path), content_type);
}

ApiServer::ApiServer(TaskManager& tasks, ApiOptions options) : impl_(std::make_unique<Impl>(tasks, options)) {
  const auto threads = options.threads;
  impl_->server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  impl_->server.set_payload_max_length(options.max_upload_bytes);
  // SO_REUSEADDR without SO_REUSEPORT.
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  impl_->routes();
}

ApiServer::~ApiServer() { stop(); }

bool ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
    return impl_->port > 0;
  }
  if (!impl_->server.bind_to_port(host, port)) return false;
  impl_->port = port;
  return true;
}

int ApiServer::port() const { return impl_->port; }

bool ApiServer::listen() { return impl_->server.listen_after_bind(); }

void ApiServer::stop() {
  impl_->stopping = true;
  impl_->server.stop();
}

void ApiServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace opttune
