#include "taskgrasp/scene.hpp"

#include "random.hpp"
#include "spatial_hash.hpp"
#include "taskgrasp/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numbers>

namespace taskgrasp {

using nlohmann::json;

const SceneObject* SceneDescription::find(int object_id) const {
  for (const auto& o : objects)
    if (o.id == object_id) return &o;
  return nullptr;
}

std::size_t SceneDescription::sample_count() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.samples.size();
  return n;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return detail::splitmix64(base ^ detail::splitmix64(index + 0x51ed2701ULL));
}

SceneDescription generate_scene(const std::vector<ObjectClass>& classes, std::uint64_t seed,
                                const SceneConfig& config) {
  if (classes.empty() || classes.size() > 10)
    throw Error(ErrorCode::InvalidArgument, "object count must be between 1 and 10");
  if (!(config.sample_spacing > 0 && config.sample_spacing <= 0.005))
    throw Error(ErrorCode::InvalidArgument, "sample spacing must lie in (0, 5 mm] to keep >= 4 samples/cm^2");

  std::mt19937_64 rng(seed);
  SceneDescription scene;
  scene.seed = seed;
  scene.sample_spacing = config.sample_spacing;

  // Clearance is enforced between footprints (samples projected onto the
  // table), which rules out stacking and interpenetration alike.
  const double clearance = config.min_clearance;
  const double clear2 = clearance * clearance;
  detail::SpatialHash occupied(std::max(clearance, 0.004));
  std::vector<Vec3> occupied_points;
  const double half = config.table_size / 2;

  for (std::size_t k = 0; k < classes.size(); ++k) {
    const ObjectClass c = classes[k];
    const double scale = detail::uniform(rng, config.min_scale, config.max_scale);
    const auto local = sample_object(c, RigidTransform::Identity(), scale, config.sample_spacing);
    Eigen::Vector2d center_local = Eigen::Vector2d::Zero();
    for (const auto& s : local) center_local += s.point.head<2>();
    center_local /= static_cast<double>(local.size());

    bool done = false;
    for (int attempt = 0; attempt < config.max_attempts && !done; ++attempt) {
      const double yaw = detail::uniform(rng, 0.0, 2 * std::numbers::pi);
      const Eigen::Vector2d center(detail::uniform(rng, -half, half), detail::uniform(rng, -half, half));
      const Eigen::Rotation2Dd rot2(yaw);
      const Eigen::Vector2d origin = center - rot2 * center_local;

      // Coarse-to-fine: every 16th sample first so most rejections are cheap.
      bool rejected = false;
      for (std::size_t stride : {std::size_t{16}, std::size_t{1}}) {
        for (std::size_t i = 0; i < local.size() && !rejected; i += stride) {
          const Eigen::Vector2d q = rot2 * local[i].point.head<2>() + origin;
          if (std::abs(q.x()) > half || std::abs(q.y()) > half) {
            rejected = true;
            break;
          }
          const Vec3 flat(q.x(), q.y(), 0.0);
          occupied.for_each_near(flat, clearance, [&](int idx) {
            if ((occupied_points[idx] - flat).squaredNorm() < clear2) rejected = true;
          });
        }
        if (rejected) break;
      }
      if (rejected) continue;

      RigidTransform pose = RigidTransform::Identity();
      pose.linear() = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
      pose.translation() = Vec3(origin.x(), origin.y(), 0.0);
      SceneObject obj;
      obj.id = static_cast<int>(k) + 1;
      obj.object_class = c;
      obj.pose = pose;
      obj.scale = scale;
      obj.samples = sample_object(c, pose, scale, config.sample_spacing);
      for (const auto& s : obj.samples) {
        const Vec3 flat(s.point.x(), s.point.y(), 0.0);
        occupied.insert(flat, static_cast<int>(occupied_points.size()));
        occupied_points.push_back(flat);
      }
      scene.objects.push_back(std::move(obj));
      done = true;
    }
    if (!done)
      throw Error(ErrorCode::SceneTooCrowded, "could not place object " + std::to_string(k + 1) + " (" +
                                                  std::string(to_string(c)) + ") after " +
                                                  std::to_string(config.max_attempts) + " attempts");
  }
  return scene;
}

double min_interobject_distance(const SceneDescription& scene) {
  double best = std::numeric_limits<double>::infinity();
  const double cell = kInterobjectReach;
  detail::SpatialHash hash(cell);
  std::vector<std::pair<int, const SurfaceSample*>> all;
  for (const auto& o : scene.objects)
    for (const auto& s : o.samples) {
      hash.insert(s.point, static_cast<int>(all.size()));
      all.emplace_back(o.id, &s);
    }
  for (const auto& [id, s] : all) {
    hash.for_each_near(s->point, cell, [&](int j) {
      if (all[j].first != id) best = std::min(best, (all[j].second->point - s->point).norm());
    });
  }
  return best;
}

std::string samples_digest(const SceneDescription& scene) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& o : scene.objects)
    for (const auto& s : o.samples) {
      h = detail::fnv1a(s.point.data(), sizeof(double) * 3, h);
      h = detail::fnv1a(s.normal.data(), sizeof(double) * 3, h);
      h = detail::fnv1a(&s.part, sizeof(int), h);
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json scene_to_json(const SceneDescription& scene) {
  json objects = json::array();
  for (const auto& o : scene.objects) {
    const Mat3 r = o.pose.linear();
    json rot = json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rot.push_back(r(i, j));
    const Vec3 t = o.pose.translation();
    json parts = json::array();
    for (const auto& p : class_parts(o.object_class)) parts.push_back({{"name", p.name}, {"affordances", p.affordances}});
    objects.push_back({{"id", o.id},
                       {"class", std::string(to_string(o.object_class))},
                       {"pose", {{"rotation", rot}, {"translation", {t.x(), t.y(), t.z()}}}},
                       {"scale", o.scale},
                       {"parts", parts},
                       {"sample_count", o.samples.size()}});
  }
  return {{"format", "taskgrasp.scene"},
          {"version", SceneDescription::kVersion},
          {"seed", scene.seed},
          {"sample_spacing", scene.sample_spacing},
          {"objects", objects},
          {"samples_digest", samples_digest(scene)}};
}

SceneDescription scene_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "taskgrasp.scene")
      throw Error(ErrorCode::ConfigError, "not a scene document");
    if (doc.at("version").get<int>() != SceneDescription::kVersion)
      throw Error(ErrorCode::ConfigError, "unsupported scene version");
    SceneDescription scene;
    scene.seed = doc.at("seed").get<std::uint64_t>();
    scene.sample_spacing = doc.at("sample_spacing").get<double>();
    for (const auto& o : doc.at("objects")) {
      SceneObject obj;
      obj.id = o.at("id").get<int>();
      const auto cls = parse_object_class(o.at("class").get<std::string>());
      if (!cls) throw Error(ErrorCode::ConfigError, "unknown object class " + o.at("class").dump());
      obj.object_class = *cls;
      const auto& rot = o.at("pose").at("rotation");
      const auto& tr = o.at("pose").at("translation");
      Mat3 r;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r(i, j) = rot.at(i * 3 + j).get<double>();
      obj.pose = RigidTransform::Identity();
      obj.pose.linear() = r;
      obj.pose.translation() = Vec3(tr.at(0).get<double>(), tr.at(1).get<double>(), tr.at(2).get<double>());
      obj.scale = o.at("scale").get<double>();
      obj.samples = sample_object(obj.object_class, obj.pose, obj.scale, scene.sample_spacing);
      scene.objects.push_back(std::move(obj));
    }
    if (doc.contains("samples_digest") && doc.at("samples_digest").get<std::string>() != samples_digest(scene))
      throw Error(ErrorCode::ConfigError, "scene samples do not match the recorded digest");
    return scene;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed scene document: ") + e.what());
  }
}

}  // namespace taskgrasp
