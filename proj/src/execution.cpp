#include "taskgrasp/execution.hpp"

#include "taskgrasp/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace taskgrasp {

void GripperSpec::validate() const {
  if (!(max_width > 0 && max_width < 0.3)) throw Error(ErrorCode::InvalidArgument, "max_width must lie in (0, 0.3)");
  if (!(finger_depth > 0 && finger_thickness > 0 && finger_width > 0 && clearance >= 0))
    throw Error(ErrorCode::InvalidArgument, "gripper dimensions must be positive");
  if (!(body_extent.minCoeff() > 0)) throw Error(ErrorCode::InvalidArgument, "body extent must be positive");
}

std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::NoContact: return "NoContact";
    case FailureReason::NonAntipodal: return "NonAntipodal";
    case FailureReason::WidthMismatch: return "WidthMismatch";
    case FailureReason::Collision: return "Collision";
  }
  return "Unknown";
}

std::optional<FailureReason> parse_failure_reason(std::string_view s) {
  for (auto r : {FailureReason::NoContact, FailureReason::NonAntipodal, FailureReason::WidthMismatch,
                 FailureReason::Collision})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

namespace {

struct Contacts {
  std::optional<FailureReason> failure;
  double separation = 0.0;
};

/// Clauses (a)-(c) against a single object, in gripper coordinates.
Contacts check_contacts(const SceneObject& obj, const RigidTransform& world_to_gripper, const Mat3& rot_wg,
                        double width, const ExecutorConfig& cfg) {
  const double reach = width / 2 + cfg.contact_tolerance;
  const double tol2 = cfg.contact_tolerance * cfg.contact_tolerance;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, Vec3>> tube;  // (closing coordinate, normal in gripper frame)
  for (const auto& s : obj.samples) {
    const Vec3 q = world_to_gripper * s.point;
    if (std::abs(q.y()) > reach) continue;
    if (q.x() * q.x() + q.z() * q.z() > tol2) continue;
    tube.emplace_back(q.y(), rot_wg * s.normal);
    if (q.y() <= 0) lo = std::min(lo, q.y());
    if (q.y() >= 0) hi = std::max(hi, q.y());
  }
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {FailureReason::NoContact, 0.0};

  Vec3 n_lo = Vec3::Zero(), n_hi = Vec3::Zero();
  for (const auto& [y, n] : tube) {
    if (y <= lo + cfg.patch_depth) n_lo += n;
    if (y >= hi - cfg.patch_depth) n_hi += n;
  }
  const double cos_cone = std::cos(cfg.friction_cone_deg * std::numbers::pi / 180.0);
  // Finger at -y pushes along +y, so the surface it touches must face -y.
  const bool antipodal = n_lo.norm() > 0 && n_hi.norm() > 0 && -n_lo.normalized().y() >= cos_cone &&
                         n_hi.normalized().y() >= cos_cone;
  const double separation = hi - lo;
  if (!antipodal) return {FailureReason::NonAntipodal, separation};
  if (std::abs(width - separation) > cfg.width_tolerance) return {FailureReason::WidthMismatch, separation};
  return {std::nullopt, separation};
}

bool inside(const Vec3& q, const Vec3& lo, const Vec3& hi) {
  return (q.array() >= lo.array()).all() && (q.array() <= hi.array()).all();
}

int severity(FailureReason r) {
  switch (r) {
    case FailureReason::NoContact: return 0;
    case FailureReason::NonAntipodal: return 1;
    case FailureReason::WidthMismatch: return 2;
    case FailureReason::Collision: return 3;
  }
  return 0;
}

}  // namespace

ExecutionOutcome simulate_grasp(const SceneDescription& scene, const GraspPose& grasp, const GripperSpec& gripper,
                                const RigidTransform& camera_pose, const ExecutorConfig& config) {
  RigidTransform gripper_to_camera = RigidTransform::Identity();
  gripper_to_camera.linear() = grasp.rotation;
  gripper_to_camera.translation() = grasp.translation;
  const RigidTransform world_to_gripper = (camera_pose * gripper_to_camera).inverse();
  const Mat3 rot_wg = world_to_gripper.linear();

  const SceneObject* grasped = nullptr;
  double separation = 0.0;
  std::optional<FailureReason> best_failure;
  int best_object = 0;
  for (const auto& obj : scene.objects) {
    const auto c = check_contacts(obj, world_to_gripper, rot_wg, grasp.width, config);
    if (!c.failure) {
      grasped = &obj;
      separation = c.separation;
      break;
    }
    if (!best_failure || severity(*c.failure) > severity(*best_failure)) {
      best_failure = c.failure;
      best_object = obj.id;
    }
  }
  if (!grasped) return ExecutionOutcome::fail(best_failure.value_or(FailureReason::NoContact), best_object);

  const double fd = gripper.finger_depth / 2;
  const double jaw_half = grasp.width / 2 + gripper.finger_thickness;
  const Vec3 jaw_lo(-fd, -jaw_half, -gripper.finger_width / 2), jaw_hi(fd, jaw_half, gripper.finger_width / 2);
  const Vec3 body_lo(-fd - gripper.body_extent.x(), -gripper.body_extent.y() / 2, -gripper.body_extent.z() / 2);
  const Vec3 body_hi(-fd, gripper.body_extent.y() / 2, gripper.body_extent.z() / 2);
  for (const auto& obj : scene.objects) {
    if (&obj == grasped) continue;
    for (const auto& s : obj.samples) {
      const Vec3 q = world_to_gripper * s.point;
      if (inside(q, jaw_lo, jaw_hi) || inside(q, body_lo, body_hi))
        return ExecutionOutcome::fail(FailureReason::Collision, grasped->id);
    }
  }
  return ExecutionOutcome::ok(grasped->id, separation);
}

}  // namespace taskgrasp
