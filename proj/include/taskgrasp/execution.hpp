#pragma once

#include "taskgrasp/gripper.hpp"
#include "taskgrasp/scene.hpp"

#include <optional>
#include <string>

namespace taskgrasp {

enum class FailureReason { NoContact, NonAntipodal, WidthMismatch, Collision };

std::string_view to_string(FailureReason r);
std::optional<FailureReason> parse_failure_reason(std::string_view s);

struct ExecutionOutcome {
  bool success = false;
  std::optional<FailureReason> failure_reason;  // present iff !success
  int grasped_object = 0;                       // object id when contacts were made
  double contact_separation = 0.0;

  static ExecutionOutcome ok(int object_id, double separation) { return {true, std::nullopt, object_id, separation}; }
  static ExecutionOutcome fail(FailureReason r, int object_id = 0) { return {false, r, object_id, 0.0}; }
};

/// Success thresholds of the quasi-static executor.
struct ExecutorConfig {
  double contact_tolerance = 0.008;  // fingertip patch radius around the closing line
  double friction_cone_deg = 15.0;
  double width_tolerance = 0.010;
  double patch_depth = 0.003;  // depth of the contact patch behind the first touched sample
};

/// Grasp is given in the camera frame; `camera_pose` maps camera to world.
///
/// Success requires, for some object (lowest id first):
///  (a) each finger, closing along the closing axis through t, meets that
///      object's samples within contact_tolerance of the line;
///  (b) the mean patch normals are antipodal within the friction cone;
///  (c) |width - contact separation| <= width_tolerance;
/// and (d) no other object's samples fall inside the jaw or body boxes.
ExecutionOutcome simulate_grasp(const SceneDescription& scene, const GraspPose& grasp, const GripperSpec& gripper,
                                const RigidTransform& camera_pose = RigidTransform::Identity(),
                                const ExecutorConfig& config = {});

}  // namespace taskgrasp
