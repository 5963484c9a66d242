#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "preflab/annotation.hpp"

namespace preflab {

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Routes one /api request without any socket: GET /api/next, POST
/// /api/label, GET /api/stats, GET /api/agreement. Errors become JSON bodies
/// {"error": ...} with 400 (bad input), 403 (unknown labeler), 404 (unknown
/// route), 409 (conflicting label or incomplete overlap) or 422 (task not
/// assigned to the labeler).
HttpReply handle_api(AnnotationServer& server, const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query, const std::string& body);

/// HTTP front end: the /api routes plus static files under `static_dir` at /.
class AnnotationHttpService {
 public:
  AnnotationHttpService(AnnotationServer& server, std::filesystem::path static_dir);
  ~AnnotationHttpService();
  AnnotationHttpService(const AnnotationHttpService&) = delete;
  AnnotationHttpService& operator=(const AnnotationHttpService&) = delete;

  /// Binds to host:port (port 0 picks a free one) and returns the port.
  /// Throws Error when the port is in use.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void run();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace preflab
