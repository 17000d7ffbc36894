#pragma once

#include "taskgrasp/pipeline.hpp"

#include <json.hpp>

#include <memory>
#include <string>

namespace taskgrasp {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int workers = 2;  // concurrent pipeline runs
};

/// HTTP front end over run_pipeline. Every route lives under /v1/:
///
///   GET  /v1/health
///   POST /v1/runs                      submit; JSON or multipart upload, ?wait=1 blocks
///   GET  /v1/runs                      published and in-flight runs
///   GET  /v1/runs/{id}                 trace document (status "queued"/"running" while in flight)
///   GET  /v1/runs/{id}/mask|cloud|grasps|rgb|depth
///   POST /v1/runs/{id}/override        {"part": "body"}
///   GET  /v1/runs/{id}/events          server-sent stage events
///
/// Malformed requests get 4xx with {"error": {"code", "message"}}; stage
/// failures are reported inside the trace.
class PipelineService {
 public:
  PipelineService(PipelineConfig cfg, ServiceOptions options = {});
  ~PipelineService();
  PipelineService(const PipelineService&) = delete;
  PipelineService& operator=(const PipelineService&) = delete;

  /// Binds the socket and returns the port actually bound.
  int bind();
  /// Serves until stop(); bind() first.
  void listen();
  /// bind() plus listen() on a background thread.
  int start();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Parses a POST /v1/runs JSON body into an observation. Accepts
/// {"scene": {"classes": [...], "seed": n}} or {"scene": <scene document>};
/// throws InvalidArgument or SceneTooCrowded.
Observation observation_from_request(const nlohmann::json& body);

}  // namespace taskgrasp
