#include "support.hpp"

#include "taskgrasp/error.hpp"

#include <doctest.h>

using namespace taskgrasp;

namespace {

ColorImage noise_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ColorImage img(w, h);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(1 + rng() % 255);
  return img;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

SceneDescription one_object_scene(int id, ObjectClass c) {
  SceneDescription s;
  SceneObject o;
  o.id = id;
  o.object_class = c;
  s.objects.push_back(o);
  return s;
}

class CountingGrounding final : public GroundingBackend {
 public:
  std::vector<Detection> detect(const ColorImage&, const std::string&) override { return {}; }
  std::vector<PartSegment> segment(const ColorImage&, const BoundingBox&, const PartQuery&) override {
    ++segment_calls;
    return {};
  }
  std::string name() const override { return "counting"; }
  int segment_calls = 0;
};

class FixedSegments final : public GroundingBackend {
 public:
  std::vector<PartSegment> segments;
  std::vector<Detection> detect(const ColorImage&, const std::string&) override { return {}; }
  std::vector<PartSegment> segment(const ColorImage&, const BoundingBox&, const PartQuery&) override { return segments; }
  std::string name() const override { return "fixed"; }
};

}  // namespace

TEST_SUITE("grounding") {
  TEST_CASE("the oracle box is the tight bound of the object's pixels") {
    LabelMap labels(64, 64);
    for (int v = 30; v < 50; ++v)
      for (int u = 10; u < 20; ++u) labels.at(u, v) = LabelMap::encode(1, v < 40 ? 0 : 1);
    OracleGroundingBackend oracle(labels, one_object_scene(1, ObjectClass::Mug));
    const auto img = noise_image(64, 64, 1);
    CHECK(locate_object(img, "mug", oracle) == BoundingBox{10, 30, 20, 50});
    CHECK(code_of([&] { locate_object(img, "unicorn", oracle); }) == ErrorCode::ObjectNotFound);
    CHECK(code_of([&] { locate_object(img, "spoon", oracle); }) == ErrorCode::ObjectNotFound);
  }

  TEST_CASE("two instances: the larger one wins, then the lower id") {
    LabelMap labels(40, 40);
    SceneDescription scene = one_object_scene(1, ObjectClass::Mug);
    scene.objects.push_back(scene.objects[0]);
    scene.objects[1].id = 2;
    for (int v = 0; v < 5; ++v)
      for (int u = 0; u < 5; ++u) labels.at(u, v) = LabelMap::encode(1, 0);
    for (int v = 20; v < 30; ++v)
      for (int u = 20; u < 30; ++u) labels.at(u, v) = LabelMap::encode(2, 0);
    const auto img = noise_image(40, 40, 2);
    {
      OracleGroundingBackend oracle(labels, scene);
      CHECK(locate_object(img, "mug", oracle) == BoundingBox{20, 20, 30, 30});
    }
    for (int v = 0; v < 10; ++v)
      for (int u = 0; u < 10; ++u) labels.at(u, v) = LabelMap::encode(1, 0);
    OracleGroundingBackend oracle(labels, scene);
    CHECK(locate_object(img, "mug", oracle) == BoundingBox{0, 0, 10, 10});
  }

  TEST_CASE("mask_image keeps the box and zeroes everything else") {
    const auto img = noise_image(37, 23, 3);
    SUBCASE("full box is the identity") { CHECK(mask_image(img, {0, 0, 37, 23}) == img); }
    SUBCASE("empty box zeroes the image") {
      const auto out = mask_image(img, {5, 5, 5, 9});
      CHECK(std::all_of(out.data.begin(), out.data.end(), [](auto b) { return b == 0; }));
    }
    SUBCASE("every pixel and channel") {
      const BoundingBox box{4, 7, 19, 20};
      const auto out = mask_image(img, box);
      for (int v = 0; v < 23; ++v)
        for (int u = 0; u < 37; ++u)
          for (int ch = 0; ch < 3; ++ch)
            CHECK(out.at(u, v)[ch] == (box.contains(u, v) ? img.at(u, v)[ch] : 0));
      CHECK(mask_image(out, box) == out);
    }
    SUBCASE("boxes outside the image are rejected") {
      CHECK(code_of([&] { mask_image(img, {0, 0, 38, 5}); }) == ErrorCode::OutOfBounds);
      CHECK(code_of([&] { mask_image(img, {-1, 0, 5, 5}); }) == ErrorCode::OutOfBounds);
    }
  }

  TEST_CASE("the mug handle mask covers exactly the handle pixels") {
    const auto scene = generate_scene({ObjectClass::Mug}, 1);
    const auto obs = testing::synthetic_observation(scene);
    OracleGroundingBackend oracle(*obs.labels, scene);
    const auto out = ground(obs.rgb, "mug", "handle", "grasp", oracle);
    const int handle = *part_index(ObjectClass::Mug, "handle");
    std::size_t expected = 0;
    for (int v = 0; v < obs.labels->height; ++v)
      for (int u = 0; u < obs.labels->width; ++u) {
        const auto l = obs.labels->at(u, v);
        const bool is_handle = l && LabelMap::part_of(l) == handle;
        expected += is_handle;
        CHECK(out.mask.test(u, v) == is_handle);
        if (out.mask.test(u, v)) CHECK(out.box.contains(u, v));
      }
    CHECK(expected > 0);
    CHECK(out.mask.popcount() == expected);
  }

  TEST_CASE("an absent part is PartNotFound") {
    const auto scene = generate_scene({ObjectClass::Mug}, 1);
    const auto obs = testing::synthetic_observation(scene);
    OracleGroundingBackend oracle(*obs.labels, scene);
    CHECK(code_of([&] { ground(obs.rgb, "mug", "spout", "pour", oracle); }) == ErrorCode::PartNotFound);
  }

  TEST_CASE("segments are clipped to the box") {
    FixedSegments backend;
    PixelMask everywhere = full_mask(20, 20);
    backend.segments.push_back({everywhere, 0.9});
    const BoundingBox box{2, 3, 7, 5};
    const auto m = ground_affordance(noise_image(20, 20, 4), box, {"mug", "handle", "grasp"}, backend);
    CHECK(m.popcount() == static_cast<std::size_t>(box.area()));
    CHECK(m.bounds() == box);
  }

  TEST_CASE("the highest-confidence non-empty segment wins") {
    FixedSegments backend;
    PixelMask a(10, 10), b(10, 10), outside(10, 10);
    a.set(1, 1);
    b.set(2, 2);
    b.set(3, 3);
    outside.set(9, 9);
    backend.segments = {{a, 0.5}, {b, 0.7}, {outside, 0.99}};
    const auto m = ground_affordance(noise_image(10, 10, 5), {0, 0, 5, 5}, {"mug", "body", "grasp"}, backend);
    CHECK(m == b);
  }

  TEST_CASE("a missing object never reaches the segmenter") {
    CountingGrounding backend;
    CHECK(code_of([&] { ground(noise_image(16, 16, 6), "mug", "handle", "grasp", backend); }) ==
          ErrorCode::ObjectNotFound);
    CHECK(backend.segment_calls == 0);
  }

  TEST_CASE("in clutter the part mask stays on the target instance") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto scene = harness_scene(ObjectClass::Spoon, Scenario::Clutter, seed);
      const auto obs = testing::synthetic_observation(scene);
      OracleGroundingBackend oracle(*obs.labels, scene);
      const auto out = ground(obs.rgb, "spoon", "handle", "grasp", oracle);
      const int handle = *part_index(ObjectClass::Spoon, "handle");
      int owner = 0;
      for (int v = out.box.v_min; v < out.box.v_max; ++v)
        for (int u = out.box.u_min; u < out.box.u_max; ++u) {
          if (!out.mask.test(u, v)) continue;
          const auto l = obs.labels->at(u, v);
          CHECK(LabelMap::part_of(l) == handle);
          if (!owner) owner = LabelMap::object_of(l);
          CHECK(LabelMap::object_of(l) == owner);
        }
      REQUIRE(owner);
      CHECK(scene.find(owner)->object_class == ObjectClass::Spoon);
    }
  }

  TEST_CASE("distractors do not change the target mask when they do not occlude it") {
    const auto scene = harness_scene(ObjectClass::Hammer, Scenario::Clutter, 11);
    SceneDescription alone = scene;
    std::erase_if(alone.objects, [](const SceneObject& o) { return o.object_class != ObjectClass::Hammer; });
    REQUIRE(alone.objects.size() == 1);
    const auto a = testing::synthetic_observation(scene);
    const auto b = testing::synthetic_observation(alone);
    OracleGroundingBackend oa(*a.labels, scene), ob(*b.labels, alone);
    const auto ga = ground(a.rgb, "hammer", "handle", "grasp", oa);
    const auto gb = ground(b.rgb, "hammer", "handle", "grasp", ob);
    CHECK(ga.box == gb.box);
    CHECK(ga.mask == gb.mask);
  }

  TEST_CASE("run-length masks") {
    PixelMask m(2, 2);
    m.set(1, 0);
    const auto rle = encode_rle(m);
    CHECK(rle["size"] == nlohmann::json::array({2, 2}));
    CHECK(rle["counts"] == nlohmann::json::array({2, 1, 1}));
    CHECK(decode_rle(rle) == m);

    std::mt19937_64 rng(9);
    for (int i = 0; i < 20; ++i) {
      PixelMask r(1 + rng() % 30, 1 + rng() % 30);
      for (auto& b : r.bits) b = rng() % 2;
      CHECK(decode_rle(encode_rle(r)) == r);
    }
    CHECK(code_of([] { decode_rle({{"size", {2, 2}}, {"counts", {2, 3}}}); }) == ErrorCode::BackendUnavailable);
    CHECK(code_of([] { decode_rle({{"size", {2, 2}}, {"counts", {1}}}); }) == ErrorCode::BackendUnavailable);
  }

  TEST_CASE("rescale_box rounds outwards and clamps") {
    CHECK(rescale_box({10, 20, 30, 40}, 100, 100, 200, 50) == BoundingBox{20, 10, 60, 20});
    CHECK(rescale_box({1, 1, 2, 2}, 3, 3, 10, 10) == BoundingBox{3, 3, 7, 7});
    CHECK(rescale_box({0, 0, 224, 224}, 224, 224, 1280, 1280) == BoundingBox{0, 0, 1280, 1280});
    CHECK(part_query_text({"mug", "handle", "grasp"}) == "handle for grasp");
  }

  TEST_CASE("remote backend rescales boxes and masks") {
    testing::StubServer stub;
    std::string detect_query, segment_query;
    stub.server.Post("/v1/detect", [&](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      detect_query = body["query"];
      res.set_content(nlohmann::json{{"detections", {{{"box", {2, 2, 6, 6}}, {"confidence", 0.8}},
                                                     {{"box", {0, 0, 1, 1}}, {"confidence", 0.3}}}}}
                          .dump(),
                      "application/json");
    });
    stub.server.Post("/v1/segment", [&](const httplib::Request& req, httplib::Response& res) {
      segment_query = nlohmann::json::parse(req.body)["query"];
      PixelMask m(8, 8);
      for (int v = 3; v < 5; ++v)
        for (int u = 3; u < 5; ++u) m.set(u, v);
      res.set_content(nlohmann::json{{"masks", {{{"rle", encode_rle(m)}, {"confidence", 0.9}}}}}.dump(),
                      "application/json");
    });
    stub.start();
    RemoteGroundingBackend remote({stub.url(), std::chrono::milliseconds(5000), 8});
    const auto out = ground(noise_image(32, 32, 7), "mug", "handle", "grasp", remote);
    CHECK(detect_query == "mug");
    CHECK(segment_query == "handle for grasp");
    CHECK(out.box == BoundingBox{8, 8, 24, 24});
    CHECK(out.mask.bounds() == BoundingBox{12, 12, 20, 20});
    CHECK(out.mask.popcount() == 64);
  }
}
