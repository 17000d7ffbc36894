#include "support.hpp"

#include "taskgrasp/error.hpp"

#include <doctest.h>

using namespace taskgrasp;

namespace {

SceneObject object_from(int id, ObjectClass cls, std::vector<SurfaceSample> samples) {
  SceneObject o;
  o.id = id;
  o.object_class = cls;
  o.samples = std::move(samples);
  return o;
}

// Horizontal bar of radius 15 mm along world x, centred at (0.05, 0, 0.05).
SceneObject handle_bar(int id) {
  return object_from(id, ObjectClass::Hammer,
                     primitives::cylinder(Vec3(0, 0, 0.05), Vec3::UnitX(), 0.015, 0.1, 0.002, 0, true));
}

GraspPose across_bar(const Vec3& t) {
  GraspPose g;
  g.rotation = *assemble_rotation(-Vec3::UnitZ(), Vec3::UnitY());
  g.translation = t;
  g.width = 0.03;
  g.score = 1.0;
  return g;
}

// All-pairs minimum distance between samples of different objects, pruned
// only by axis-aligned boxes.
double brute_min_distance(const SceneDescription& s, double cutoff) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<Vec3, Vec3>> boxes;
  for (const auto& o : s.objects) {
    Vec3 lo = o.samples[0].point, hi = lo;
    for (const auto& p : o.samples) lo = lo.cwiseMin(p.point), hi = hi.cwiseMax(p.point);
    boxes.emplace_back(lo, hi);
  }
  for (std::size_t a = 0; a < s.objects.size(); ++a)
    for (std::size_t b = a + 1; b < s.objects.size(); ++b) {
      const Vec3 gap = (boxes[a].first - boxes[b].second).cwiseMax(boxes[b].first - boxes[a].second).cwiseMax(0.0);
      if (gap.norm() > cutoff) continue;
      for (const auto& p : s.objects[a].samples)
        for (const auto& q : s.objects[b].samples) best = std::min(best, (p.point - q.point).norm());
    }
  return best;
}

}  // namespace

TEST_SUITE("scene") {
  TEST_CASE("a mug has a body and a grasp-tagged handle") {
    const auto scene = generate_scene({ObjectClass::Mug}, 1);
    REQUIRE(scene.objects.size() == 1);
    const auto& parts = class_parts(ObjectClass::Mug);
    std::vector<std::string> names;
    for (const auto& p : parts) names.push_back(p.name);
    CHECK(names == std::vector<std::string>{"body", "handle"});
    CHECK(parts[*part_index(ObjectClass::Mug, "handle")].affords("grasp"));
    std::set<int> seen;
    for (const auto& s : scene.objects[0].samples) seen.insert(s.part);
    CHECK(seen == std::set<int>{0, 1});
  }

  TEST_CASE("every class has a grasp-tagged part and uses the fixed affordance vocabulary") {
    for (auto c : kAllClasses) {
      bool grasp = false;
      for (const auto& p : class_parts(c)) {
        grasp = grasp || p.affords("grasp");
        for (const auto& a : p.affordances)
          CHECK(std::find(kAffordanceVocabulary.begin(), kAffordanceVocabulary.end(), a) != kAffordanceVocabulary.end());
      }
      CHECK_MESSAGE(grasp, to_string(c));
      CHECK(parse_object_class(to_string(c)) == c);
    }
    CHECK_FALSE(parse_object_class("unicorn"));
  }

  TEST_CASE("generation is deterministic") {
    const std::vector<ObjectClass> spec{ObjectClass::Spoon, ObjectClass::Hammer, ObjectClass::Bowl};
    const auto a = generate_scene(spec, 42);
    const auto b = generate_scene(spec, 42);
    CHECK(scene_to_json(a).dump() == scene_to_json(b).dump());
    CHECK(samples_digest(a) == samples_digest(b));
    CHECK(scene_to_json(generate_scene(spec, 43)).dump() != scene_to_json(a).dump());
  }

  TEST_CASE("ten mugs are either well separated or too crowded") {
    const std::vector<ObjectClass> spec(10, ObjectClass::Mug);
    try {
      const auto scene = generate_scene(spec, 3);
      CHECK(brute_min_distance(scene, 0.005) >= 0.005);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SceneTooCrowded);
    }
  }

  TEST_CASE("clutter scenes keep 5 mm clearance and stay on the table") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto scene = harness_scene(ObjectClass::Spoon, Scenario::Clutter, seed);
      CHECK(brute_min_distance(scene, 0.005) >= 0.005);
      const double exact = brute_min_distance(scene, 1.0);
      if (exact < kInterobjectReach) CHECK(min_interobject_distance(scene) == exact);
      else CHECK(min_interobject_distance(scene) >= kInterobjectReach);
      for (const auto& o : scene.objects)
        for (const auto& s : o.samples) {
          CHECK(std::abs(s.point.x()) <= 0.3);
          CHECK(std::abs(s.point.y()) <= 0.3);
          CHECK(s.point.z() >= -1e-9);
        }
    }
  }

  TEST_CASE("scene documents round-trip") {
    const auto scene = generate_scene({ObjectClass::Pan, ObjectClass::Bottle}, 9);
    const auto back = scene_from_json(scene_to_json(scene));
    CHECK(samples_digest(back) == samples_digest(scene));
    CHECK(scene_to_json(back).dump() == scene_to_json(scene).dump());
    auto doc = scene_to_json(scene);
    doc["version"] = 99;
    CHECK_THROWS_AS(scene_from_json(doc), Error);
  }

  TEST_CASE("primitive samples carry outward unit normals") {
    const auto s = primitives::sphere(Vec3(0.1, 0.2, 0.3), 0.05, 0.004);
    for (const auto& p : s) {
      CHECK(p.normal.norm() == doctest::Approx(1.0));
      CHECK((p.point - Vec3(0.1, 0.2, 0.3)).normalized().dot(p.normal) == doctest::Approx(1.0));
    }
  }
}

TEST_SUITE("render") {
  TEST_CASE("an empty scene renders nothing") {
    const auto r = render_observation(SceneDescription{}, {50, 50, 32, 32, 64, 64}, RigidTransform::Identity());
    CHECK(std::all_of(r.depth.data.begin(), r.depth.data.end(), [](double d) { return d == 0.0; }));
    CHECK(std::all_of(r.labels.data.begin(), r.labels.data.end(), [](auto l) { return l == 0; }));
  }

  TEST_CASE("a unit sphere at z = 2 shows depth 1 at the centre pixel") {
    SceneDescription scene;
    scene.sample_spacing = 0.02;
    scene.objects.push_back(object_from(1, ObjectClass::Bowl, primitives::sphere(Vec3(0, 0, 2), 1.0, 0.02)));
    const auto r = render_observation(scene, {50, 50, 32, 32, 64, 64}, RigidTransform::Identity());
    CHECK(r.depth.at(32, 32) == doctest::Approx(1.0).epsilon(0.02));
    CHECK(std::abs(r.depth.at(32, 32) - 1.0) <= scene.sample_spacing);
  }

  TEST_CASE("the nearer of two spheres wins the z-buffer") {
    SceneDescription scene;
    scene.sample_spacing = 0.01;
    scene.objects.push_back(object_from(1, ObjectClass::Bowl, primitives::sphere(Vec3(0, 0, 3), 0.3, 0.01)));
    scene.objects.push_back(object_from(2, ObjectClass::Mug, primitives::sphere(Vec3(0, 0, 2), 0.3, 0.01)));
    const auto r = render_observation(scene, {50, 50, 32, 32, 64, 64}, RigidTransform::Identity());
    CHECK(LabelMap::object_of(r.labels.at(32, 32)) == 2);
  }

  TEST_CASE("labelled pixels have depth and deproject onto their part") {
    const auto scene = generate_scene({ObjectClass::Mug, ObjectClass::Spoon}, 4);
    const CameraIntrinsics in{280, 280, 160, 160, 320, 320};
    const auto cam = top_down_camera();
    const auto r = render_observation(scene, in, cam);
    int checked = 0;
    for (int v = 0; v < in.height; ++v)
      for (int u = 0; u < in.width; ++u) {
        const auto l = r.labels.at(u, v);
        if (!l) continue;
        REQUIRE(DepthImage::is_valid(r.depth.at(u, v)));
        if ((u + v) % 3) continue;
        const Vec3 w = cam * deproject_pixel(u, v, r.depth.at(u, v), in);
        const auto* o = scene.find(LabelMap::object_of(l));
        REQUIRE(o);
        double best = 1e9;
        for (const auto& s : o->samples)
          if (s.part == LabelMap::part_of(l)) best = std::min(best, (s.point - w).norm());
        CHECK(best <= 2 * scene.sample_spacing);
        ++checked;
      }
    CHECK(checked > 100);
  }

  TEST_CASE("rendering is deterministic") {
    const auto scene = generate_scene({ObjectClass::Pan, ObjectClass::Hammer}, 8);
    const CameraIntrinsics in{280, 280, 160, 160, 320, 320};
    const auto a = render_observation(scene, in, top_down_camera());
    const auto b = render_observation(scene, in, top_down_camera());
    CHECK(a.rgb == b.rgb);
    CHECK(a.depth == b.depth);
    CHECK(a.labels == b.labels);
  }
}

TEST_SUITE("execution") {
  const GripperSpec gripper;

  TEST_CASE("a perpendicular grasp across a 30 mm bar succeeds") {
    SceneDescription scene;
    scene.objects.push_back(handle_bar(1));
    const auto out = simulate_grasp(scene, across_bar(Vec3(0.05, 0, 0.05)), gripper);
    CHECK(out.success);
    CHECK_FALSE(out.failure_reason);
    CHECK(out.grasped_object == 1);
    CHECK(out.contact_separation == doctest::Approx(0.03).epsilon(0.1));
  }

  TEST_CASE("a grasp in free space makes no contact") {
    SceneDescription scene;
    scene.objects.push_back(handle_bar(1));
    const auto out = simulate_grasp(scene, across_bar(Vec3(0.05, 0, 0.17)), gripper);
    CHECK_FALSE(out.success);
    CHECK(out.failure_reason == FailureReason::NoContact);
  }

  TEST_CASE("a grasp along the bar axis is not antipodal or too wide") {
    SceneDescription scene;
    scene.objects.push_back(handle_bar(1));
    GraspPose g = across_bar(Vec3(0.05, 0, 0.05));
    g.rotation = *assemble_rotation(-Vec3::UnitZ(), Vec3(1, 1, 0).normalized());
    CHECK_FALSE(simulate_grasp(scene, g, gripper).success);
    GraspPose wide = across_bar(Vec3(0.05, 0, 0.05));
    wide.width = 0.08;
    const auto out = simulate_grasp(scene, wide, gripper);
    CHECK(out.failure_reason == FailureReason::WidthMismatch);
  }

  TEST_CASE("another object inside the gripper volume is a collision") {
    SceneDescription scene;
    scene.objects.push_back(handle_bar(1));
    scene.objects.push_back(object_from(2, ObjectClass::Bowl, primitives::sphere(Vec3(0.05, 0, 0.10), 0.01, 0.002)));
    const auto out = simulate_grasp(scene, across_bar(Vec3(0.05, 0, 0.05)), gripper);
    CHECK_FALSE(out.success);
    CHECK(out.failure_reason == FailureReason::Collision);
  }

  TEST_CASE("the camera pose maps camera-frame grasps into the world") {
    SceneDescription scene;
    scene.objects.push_back(handle_bar(1));
    const RigidTransform cam = top_down_camera();
    const GraspPose world = across_bar(Vec3(0.05, 0, 0.05));
    GraspPose in_cam = world;
    in_cam.rotation = cam.linear().transpose() * world.rotation;
    in_cam.translation = cam.inverse() * world.translation;
    CHECK(simulate_grasp(scene, in_cam, gripper, cam).success);
  }

  TEST_CASE("removing clutter never turns a success into a failure") {
    int successes = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const auto scene = harness_scene(ObjectClass::Mug, Scenario::Clutter, seed);
      const auto obs = testing::synthetic_observation(scene);
      const auto trace = run_pipeline("I am thirsty", obs, testing::offline_config());
      if (!trace.selection) continue;
      for (const auto& g : trace.selection->candidates.grasps) {
        const auto full = simulate_grasp(scene, g, gripper, obs.camera_pose);
        if (!full.success) continue;
        ++successes;
        for (std::size_t drop = 0; drop < scene.objects.size(); ++drop) {
          if (scene.objects[drop].id == full.grasped_object) continue;
          SceneDescription fewer = scene;
          fewer.objects.erase(fewer.objects.begin() + static_cast<std::ptrdiff_t>(drop));
          CHECK(simulate_grasp(fewer, g, gripper, obs.camera_pose).success);
        }
        SceneDescription alone = scene;
        std::erase_if(alone.objects, [&](const SceneObject& o) { return o.id != full.grasped_object; });
        CHECK(simulate_grasp(alone, g, gripper, obs.camera_pose).success);
      }
    }
    CHECK(successes > 0);
  }

}
