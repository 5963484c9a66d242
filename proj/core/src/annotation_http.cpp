#include "preflab/annotation_http.hpp"

#include <httplib.h>

#include "preflab/error.hpp"

namespace preflab {

namespace {

HttpReply json_reply(int status, const nlohmann::ordered_json& j) { return {status, "application/json", j.dump()}; }

HttpReply error_reply(int status, const std::string& msg) {
  nlohmann::ordered_json j;
  j["error"] = msg;
  return json_reply(status, j);
}

std::string param(const std::map<std::string, std::string>& q, const std::string& key) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) throw ConfigError("missing query parameter '" + key + "'");
  return it->second;
}

}  // namespace

HttpReply handle_api(AnnotationServer& server, const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query, const std::string& body) {
  try {
    if (path == "/api/next" && method == "GET") {
      const auto task = server.next_task(param(query, "labeler"));
      nlohmann::ordered_json j;
      j["task"] = task ? task_to_json(*task, server.config().vocab) : nlohmann::ordered_json(nullptr);
      return json_reply(200, j);
    }
    if (path == "/api/label" && method == "POST") {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(body);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("body is not JSON: ") + e.what());
      }
      const auto ack = server.submit(submission_from_json(j));
      nlohmann::ordered_json out;
      out["status"] = ack.status == SubmitStatus::Stored ? "stored" : "duplicate";
      out["record"] = to_json(ack.record, server.config().vocab);
      return json_reply(200, out);
    }
    if (path == "/api/stats" && method == "GET") return json_reply(200, to_json(server.stats()));
    if (path == "/api/agreement" && method == "GET") {
      const auto r = server.agreement(param(query, "a"), param(query, "b"));
      nlohmann::ordered_json j;
      j["a"] = query.at("a");
      j["b"] = query.at("b");
      j["agreement"] = r.agreement;
      j["n"] = r.n;
      return json_reply(200, j);
    }
    return error_reply(404, "no route for " + method + " " + path);
  } catch (const AuthError& e) {
    return error_reply(403, e.what());
  } catch (const ConflictError& e) {
    return error_reply(409, e.what());
  } catch (const RejectedInputError& e) {
    const std::string msg = e.what();
    return error_reply(msg.rfind("overlap", 0) == 0 || msg.rfind("no overlap", 0) == 0 ? 409 : 422, msg);
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
}

struct AnnotationHttpService::Impl {
  AnnotationServer& server;
  std::filesystem::path static_dir;
  httplib::Server http;

  Impl(AnnotationServer& s, std::filesystem::path dir) : server(s), static_dir(std::move(dir)) {}
};

AnnotationHttpService::AnnotationHttpService(AnnotationServer& server, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(server, std::move(static_dir))) {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> q;
    for (const auto& [k, v] : req.params) q.emplace(k, v);
    const HttpReply r = handle_api(impl_->server, req.method, req.path, q, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  // httplib's default also sets SO_REUSEPORT, which lets a second server share a busy port.
  impl_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
  });
  for (const char* p : {"/api/next", "/api/stats", "/api/agreement"}) impl_->http.Get(p, route);
  impl_->http.Post("/api/label", route);
  if (!impl_->static_dir.empty() && std::filesystem::is_directory(impl_->static_dir))
    impl_->http.set_mount_point("/", impl_->static_dir.string());
}

AnnotationHttpService::~AnnotationHttpService() { stop(); }

int AnnotationHttpService::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0) bound = impl_->http.bind_to_any_port(host);
  else if (impl_->http.bind_to_port(host, port)) bound = port;
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return bound;
}

void AnnotationHttpService::run() { impl_->http.listen_after_bind(); }

void AnnotationHttpService::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

bool AnnotationHttpService::running() const { return impl_->http.is_running(); }

}  // namespace preflab
