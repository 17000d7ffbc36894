#pragma once

#include "taskgrasp/geometry.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace taskgrasp {

enum class ObjectClass { Mug, Spoon, Hammer, Screwdriver, Bowl, Bottle, Pan };

inline constexpr std::array kAllClasses{ObjectClass::Mug,  ObjectClass::Spoon,  ObjectClass::Hammer,
                                        ObjectClass::Screwdriver, ObjectClass::Bowl, ObjectClass::Bottle,
                                        ObjectClass::Pan};

inline constexpr std::array<std::string_view, 7> kAffordanceVocabulary{"grasp", "contain", "pour", "scoop",
                                                                       "pound", "screw", "cut"};

std::string_view to_string(ObjectClass c);
std::optional<ObjectClass> parse_object_class(std::string_view name);

struct PartLabel {
  std::string name;
  std::vector<std::string> affordances;

  bool affords(std::string_view tag) const;
};

/// Functional parts of a class, in part-index order.
const std::vector<PartLabel>& class_parts(ObjectClass c);
std::optional<int> part_index(ObjectClass c, std::string_view part_name);

struct SurfaceSample {
  Vec3 point;   // world frame
  Vec3 normal;  // outward, unit length
  int part = 0;
};

struct SceneObject {
  int id = 0;  // 1-based; 0 is reserved for background in label maps
  ObjectClass object_class = ObjectClass::Mug;
  RigidTransform pose = RigidTransform::Identity();  // object -> world; z is up, table plane z = 0
  double scale = 1.0;
  std::vector<SurfaceSample> samples;
};

struct SceneDescription {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 0;
  double sample_spacing = 0.002;
  std::vector<SceneObject> objects;

  const SceneObject* find(int object_id) const;
  std::size_t sample_count() const;
};

struct SceneConfig {
  double table_size = 0.6;
  double min_clearance = 0.005;
  double sample_spacing = 0.002;
  double min_scale = 0.92;
  double max_scale = 1.08;
  int max_attempts = 1000;
};

/// Deterministic for a fixed (classes, seed, config).
SceneDescription generate_scene(const std::vector<ObjectClass>& classes, std::uint64_t seed,
                                const SceneConfig& config = {});

/// Re-creates the surface samples of a posed object from its class, pose and scale.
std::vector<SurfaceSample> sample_object(ObjectClass c, const RigidTransform& pose, double scale, double spacing);

/// Smallest distance between samples of two different objects. Exact below
/// kInterobjectReach; larger gaps report some value >= kInterobjectReach, possibly infinity.
inline constexpr double kInterobjectReach = 0.02;
double min_interobject_distance(const SceneDescription& scene);

// Analytic surface primitives, exposed for tests and hand-built scenes.
namespace primitives {
std::vector<SurfaceSample> sphere(const Vec3& center, double radius, double spacing, int part = 0);
std::vector<SurfaceSample> cylinder(const Vec3& base, const Vec3& axis, double radius, double length, double spacing,
                                    int part = 0, bool with_caps = true);
double cylinder_area(double radius, double length, bool with_caps);
}  // namespace primitives

/// Versioned JSON document. Samples are not stored; a digest of them is, and
/// they are regenerated on load.
nlohmann::json scene_to_json(const SceneDescription& scene);
SceneDescription scene_from_json(const nlohmann::json& doc);
std::string samples_digest(const SceneDescription& scene);

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace taskgrasp
