#include "taskgrasp/render.hpp"

#include "taskgrasp/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace taskgrasp {

CameraIntrinsics default_intrinsics() { return {1120.0, 1120.0, 640.0, 640.0, 1280, 1280}; }

RigidTransform top_down_camera(double height) {
  RigidTransform pose = RigidTransform::Identity();
  Mat3 r;
  r.col(0) = Vec3::UnitX();
  r.col(1) = -Vec3::UnitY();
  r.col(2) = -Vec3::UnitZ();
  pose.linear() = r;
  pose.translation() = Vec3(0, 0, height);
  return pose;
}

std::array<std::uint8_t, 3> part_color(ObjectClass c, int part) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 7> base{{{200, 60, 50},
                                                                    {150, 110, 60},
                                                                    {90, 90, 100},
                                                                    {220, 180, 40},
                                                                    {60, 140, 200},
                                                                    {60, 170, 90},
                                                                    {70, 70, 70}}};
  auto color = base[static_cast<std::size_t>(c)];
  for (auto& ch : color) ch = static_cast<std::uint8_t>(std::min(255, ch + 45 * part));
  return color;
}

RenderedObservation render_observation(const SceneDescription& scene, const CameraIntrinsics& intr,
                                       const RigidTransform& camera_pose, double splat_factor) {
  intr.validate();
  RenderedObservation obs;
  obs.intrinsics = intr;
  obs.camera_pose = camera_pose;
  obs.rgb = ColorImage(intr.width, intr.height);
  obs.depth = DepthImage(intr.width, intr.height);
  obs.labels = LabelMap(intr.width, intr.height);

  const RigidTransform world_to_cam = camera_pose.inverse();
  const Mat3 rot = world_to_cam.linear();
  const double radius = splat_factor * scene.sample_spacing;
  const double radius2 = radius * radius;
  const double f = std::max(intr.fx, intr.fy);
  std::vector<double> zbuf(static_cast<std::size_t>(intr.width) * intr.height,
                           std::numeric_limits<double>::infinity());

  for (const auto& obj : scene.objects) {
    for (const auto& s : obj.samples) {
      const Vec3 p = world_to_cam * s.point;
      const Vec3 n = rot * s.normal;
      if (p.z() <= 1e-6 || n.dot(p) >= 0.0) continue;
      const double uc = intr.fx * p.x() / p.z() + intr.cx;
      const double vc = intr.fy * p.y() / p.z() + intr.cy;
      const int reach = static_cast<int>(std::ceil(radius * f / p.z())) + 1;
      const int u0 = std::max(0, static_cast<int>(std::lround(uc)) - reach);
      const int u1 = std::min(intr.width - 1, static_cast<int>(std::lround(uc)) + reach);
      const int v0 = std::max(0, static_cast<int>(std::lround(vc)) - reach);
      const int v1 = std::min(intr.height - 1, static_cast<int>(std::lround(vc)) + reach);
      const double plane = n.dot(p);
      const auto color = part_color(obj.object_class, s.part);
      for (int v = v0; v <= v1; ++v)
        for (int u = u0; u <= u1; ++u) {
          const Vec3 ray((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
          const double denom = n.dot(ray);
          if (denom >= -1e-9) continue;
          const double z = plane / denom;
          if (z <= 0 || (z * ray - p).squaredNorm() > radius2) continue;
          const std::size_t idx = static_cast<std::size_t>(v) * intr.width + u;
          if (z >= zbuf[idx]) continue;
          zbuf[idx] = z;
          obs.depth.data[idx] = z;
          obs.labels.data[idx] = LabelMap::encode(obj.id, s.part);
          const double shade = 0.35 + 0.65 * std::max(0.0, -denom / ray.norm());
          auto* px = obs.rgb.at(u, v);
          for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(std::lround(color[c] * shade));
        }
    }
  }
  for (std::size_t i = 0; i < obs.depth.data.size(); ++i)
    if (!DepthImage::is_valid(obs.depth.data[i])) {
      obs.depth.data[i] = 0.0;
      obs.labels.data[i] = 0;
    }
  return obs;
}

}  // namespace taskgrasp
