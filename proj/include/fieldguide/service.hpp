#pragma once

#include "fieldguide/dataset.hpp"
#include "fieldguide/learner.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace fieldguide {

struct ServiceOptions {
  std::filesystem::path data_dir;                   // session transcripts live in data_dir/sessions
  std::optional<std::filesystem::path> static_dir;  // UI bundle served at /
  std::size_t job_workers = 1;
  ClassifierConfig classifier;
  EvalMode eval_mode = EvalMode::generalized;
};

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Annotation sessions over HTTP/JSON. `handle` is transport-free so it can
/// be driven directly; HttpServer binds it to a socket.
class Service {
 public:
  /// `ds` must be normalized. Transcripts already in the data directory are
  /// reloaded.
  Service(Dataset ds, EmbeddingModel model, ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// `path` is the full request path, e.g. "/api/v1/sessions".
  ApiResponse handle(const std::string& method, const std::string& path, const std::string& body);

  /// Blocks until every queued training job has finished.
  void wait_for_jobs();

  const Dataset& dataset() const;
  const EmbeddingModel& model() const;
  const ServiceOptions& options() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds (port 0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fieldguide
