#pragma once

#include "taskgrasp/geometry.hpp"
#include "taskgrasp/gripper.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace taskgrasp {

struct CandidateSet {
  std::vector<GraspPose> grasps;  // descending score
  /// Indices of the two generating points per grasp, when produced by the sampler.
  std::vector<std::pair<int, int>> contacts;
  std::string source_cloud_id;

  bool empty() const { return grasps.empty(); }
  std::size_t size() const { return grasps.size(); }
};

/// Per-point normal from a plane fit over the k nearest neighbours, oriented
/// toward the camera origin. Points whose neighbourhood has rank < 2 get
/// normal_valid = 0 and a zero normal.
PointCloud estimate_normals(const PointCloud& cloud, int k = 8);

struct SamplerConfig {
  int budget = 256;
  std::uint64_t seed = 0;
  double friction_cone_deg = 15.0;
  int trials_per_candidate = 64;
};

/// Antipodal pair search over a cloud with normals. Throws NoFeasibleGrasp
/// when no pair is accepted.
CandidateSet sample_grasps(const PointCloud& cloud, const GripperSpec& gripper, const SamplerConfig& config = {});

/// Stable order: score descending, then translation lexicographically ascending.
void sort_candidates(CandidateSet& set);

std::string cloud_digest(const PointCloud& cloud);

/// Source of grasp candidates for a (mask-filtered) cloud.
class GraspBackend {
 public:
  virtual ~GraspBackend() = default;
  virtual CandidateSet generate(const PointCloud& cloud, const GripperSpec& gripper) = 0;
  virtual std::string name() const = 0;
};

class SamplerGraspBackend final : public GraspBackend {
 public:
  SamplerGraspBackend(SamplerConfig config, int normal_neighbors) : config_(config), k_(normal_neighbors) {}
  CandidateSet generate(const PointCloud& cloud, const GripperSpec& gripper) override;
  std::string name() const override { return "sampler"; }

 private:
  SamplerConfig config_;
  int k_;
};

/// HTTP client for an external grasp model.
///
///   POST {base_url}/v1/grasps
///   {"version": 1, "points": [[x, y, z], ...], "max_width": w}
///   -> {"version": 1, "grasps": [{"rotation": [9 numbers, row-major],
///        "translation": [x, y, z], "width": w, "score": s}, ...]}
///
/// Grasps that fail pose validation or carry a score outside [0, 1] are dropped.
class RemoteGraspBackend final : public GraspBackend {
 public:
  RemoteGraspBackend(std::string base_url, std::chrono::milliseconds timeout);
  CandidateSet generate(const PointCloud& cloud, const GripperSpec& gripper) override;
  std::string name() const override { return "remote"; }

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

nlohmann::json grasp_to_json(const GraspPose& g);
GraspPose grasp_from_json(const nlohmann::json& j);

}  // namespace taskgrasp
