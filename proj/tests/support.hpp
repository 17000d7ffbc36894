#pragma once

#include "taskgrasp/pipeline.hpp"

#include <httplib.h>

#include <filesystem>
#include <random>
#include <string>
#include <thread>

namespace testing {

using namespace taskgrasp;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("taskgrasp-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// httplib server on an ephemeral port, stopped on destruction.
class StubServer {
 public:
  httplib::Server server;

  int start() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
    return port_;
  }
  std::string url(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port_) + prefix;
  }
  ~StubServer() {
    server.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  int port_ = 0;
  std::thread thread_;
};

inline Observation synthetic_observation(const SceneDescription& scene) {
  return Observation::from_render(render_observation(scene, default_intrinsics(), top_down_camera()), scene);
}

/// Smallest distance from a world point to the samples of `part` on any object of `cls`.
inline double distance_to_part(const SceneDescription& scene, ObjectClass cls, int part, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : scene.objects) {
    if (o.object_class != cls) continue;
    for (const auto& s : o.samples)
      if (s.part == part) best = std::min(best, (s.point - p).norm());
  }
  return best;
}

inline PipelineConfig offline_config() {
  PipelineConfig cfg;
  cfg.trace_dir.clear();
  return cfg;
}

}  // namespace testing
