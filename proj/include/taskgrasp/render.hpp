#pragma once

#include "taskgrasp/image.hpp"
#include "taskgrasp/scene.hpp"

#include <filesystem>

namespace taskgrasp {

struct RenderedObservation {
  ColorImage rgb;
  DepthImage depth;
  LabelMap labels;
  CameraIntrinsics intrinsics;
  RigidTransform camera_pose = RigidTransform::Identity();  // camera -> world
};

/// 1280x1280 pinhole camera used by the evaluation harness (about 0.58 mm per pixel at the table from 0.65 m).
CameraIntrinsics default_intrinsics();

/// Looks straight down at the table centre from `height` meters; image +u is world +x.
RigidTransform top_down_camera(double height = 0.65);

/// Surfel splatting with a z-buffer: each sample is a small disc on its tangent
/// plane (radius `splat_factor` x sample spacing), back-facing discs are culled
/// and the nearest intersection per pixel sets depth and label.
RenderedObservation render_observation(const SceneDescription& scene, const CameraIntrinsics& intr,
                                       const RigidTransform& camera_pose, double splat_factor = 0.75);

std::array<std::uint8_t, 3> part_color(ObjectClass c, int part);

}  // namespace taskgrasp
