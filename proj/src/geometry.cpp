#include "taskgrasp/geometry.hpp"

#include "taskgrasp/error.hpp"

#include <cmath>

namespace taskgrasp {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDepth: return "InvalidDepth";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::SceneTooCrowded: return "SceneTooCrowded";
    case ErrorCode::InvalidInstruction: return "InvalidInstruction";
    case ErrorCode::MalformedReasoning: return "MalformedReasoning";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::NoRelevantObject: return "NoRelevantObject";
    case ErrorCode::ObjectNotFound: return "ObjectNotFound";
    case ErrorCode::PartNotFound: return "PartNotFound";
    case ErrorCode::NoFeasibleGrasp: return "NoFeasibleGrasp";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::EmptyAffordanceRegion: return "EmptyAffordanceRegion";
    case ErrorCode::TraceWriteError: return "TraceWriteError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
}

std::string to_string(PoseViolation v) {
  switch (v) {
    case PoseViolation::NonOrthonormal: return "NonOrthonormal";
    case PoseViolation::Reflection: return "Reflection";
    case PoseViolation::WidthNonPositive: return "WidthNonPositive";
    case PoseViolation::WidthExceeded: return "WidthExceeded";
    case PoseViolation::NegativeScore: return "NegativeScore";
    case PoseViolation::NonFinite: return "NonFinite";
  }
  return "Unknown";
}

bool PoseValidity::has(PoseViolation v) const {
  for (auto x : violations)
    if (x == v) return true;
  return false;
}

Vec3 deproject_pixel(double u, double v, double depth, const CameraIntrinsics& intr) {
  if (!(depth > 0) || !std::isfinite(depth)) throw Error(ErrorCode::InvalidDepth, "depth must be positive");
  if (!intr.contains(u, v)) throw Error(ErrorCode::OutOfBounds, "pixel outside the image");
  return {(u - intr.cx) * depth / intr.fx, (v - intr.cy) * depth / intr.fy, depth};
}

Vec3 project_point(const Vec3& p, const CameraIntrinsics& intr) {
  if (!(p.z() > 0)) throw Error(ErrorCode::InvalidDepth, "point behind the camera");
  return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy, p.z()};
}

Vec3 mask_centroid(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "centroid of an empty cloud");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.size());
}

PoseValidity validate_grasp_pose(const GraspPose& g, double max_width) {
  PoseValidity report;
  const bool finite = g.rotation.allFinite() && g.translation.allFinite() && std::isfinite(g.width) &&
                      std::isfinite(g.score);
  if (!finite) {
    report.violations.push_back(PoseViolation::NonFinite);
    return report;
  }
  const Mat3 gram = g.rotation.transpose() * g.rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > kRotationTolerance)
    report.violations.push_back(PoseViolation::NonOrthonormal);
  const double det = g.rotation.determinant();
  if (det < 0) {
    report.violations.push_back(PoseViolation::Reflection);
  } else if (std::abs(det - 1.0) > kRotationTolerance && !report.has(PoseViolation::NonOrthonormal)) {
    report.violations.push_back(PoseViolation::NonOrthonormal);
  }
  if (!(g.width > 0)) report.violations.push_back(PoseViolation::WidthNonPositive);
  if (g.width > max_width) report.violations.push_back(PoseViolation::WidthExceeded);
  if (g.score < 0) report.violations.push_back(PoseViolation::NegativeScore);
  return report;
}

std::optional<Mat3> assemble_rotation(const Vec3& approach, const Vec3& closing) {
  const double cn = closing.norm();
  if (!(cn > 1e-12)) return std::nullopt;
  const Vec3 y = closing / cn;
  Vec3 x = approach - approach.dot(y) * y;
  const double xn = x.norm();
  if (!(xn > 1e-9)) return std::nullopt;
  x /= xn;
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = x.cross(y);
  return r;
}

}  // namespace taskgrasp
