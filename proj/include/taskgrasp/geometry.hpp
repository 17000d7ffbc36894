#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace taskgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using RigidTransform = Eigen::Isometry3d;

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;
  bool contains(double u, double v) const { return u >= 0 && v >= 0 && u < width && v < height; }
  bool operator==(const CameraIntrinsics&) const = default;
};

/// Pixel rectangle [u_min, u_max) x [v_min, v_max); u is the column, v the row.
struct BoundingBox {
  int u_min = 0;
  int v_min = 0;
  int u_max = 0;
  int v_max = 0;

  bool empty() const { return u_min >= u_max || v_min >= v_max; }
  bool contains(int u, int v) const { return u >= u_min && u < u_max && v >= v_min && v < v_max; }
  long long area() const { return empty() ? 0 : static_cast<long long>(u_max - u_min) * (v_max - v_min); }
  bool within(int width, int height) const {
    return 0 <= u_min && u_min <= u_max && u_max <= width && 0 <= v_min && v_min <= v_max && v_max <= height;
  }
  bool operator==(const BoundingBox&) const = default;
};

struct PointCloud {
  std::vector<Vec3> points;
  /// Empty, or one entry per point. Entries flagged invalid in normal_valid are zero.
  std::vector<Vec3> normals;
  std::vector<std::uint8_t> normal_valid;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
};

struct GraspPose {
  Mat3 rotation = Mat3::Identity();  // columns: approach, closing, binormal (gripper -> camera)
  Vec3 translation = Vec3::Zero();
  double width = 0.0;
  double score = 0.0;

  Vec3 approach_axis() const { return rotation.col(0); }
  Vec3 closing_axis() const { return rotation.col(1); }
};

enum class PoseViolation { NonOrthonormal, Reflection, WidthNonPositive, WidthExceeded, NegativeScore, NonFinite };

std::string to_string(PoseViolation v);

struct PoseValidity {
  std::vector<PoseViolation> violations;
  bool valid() const { return violations.empty(); }
  bool has(PoseViolation v) const;
};

constexpr double kRotationTolerance = 1e-6;

/// Back-projects pixel (u, v) at metric depth into the camera frame.
Vec3 deproject_pixel(double u, double v, double depth, const CameraIntrinsics& intr);

/// Pinhole projection; returns (u, v, depth).
Vec3 project_point(const Vec3& p, const CameraIntrinsics& intr);

Vec3 mask_centroid(const PointCloud& cloud);

PoseValidity validate_grasp_pose(const GraspPose& g, double max_width);

/// Right-handed rotation with the given approach and closing axes. The closing
/// axis is kept exactly; approach is re-orthogonalized against it.
std::optional<Mat3> assemble_rotation(const Vec3& approach, const Vec3& closing);

}  // namespace taskgrasp
