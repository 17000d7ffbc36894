#include "support.hpp"

#include "taskgrasp/error.hpp"

#include <doctest.h>

#include <fstream>
#include <map>

using namespace taskgrasp;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

const Observation& spoon_clutter() {
  static const Observation obs = testing::synthetic_observation(harness_scene(ObjectClass::Spoon, Scenario::Clutter, 5));
  return obs;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config JSON round-trips and rejects unknown keys") {
    PipelineConfig cfg;
    cfg.seed = 77;
    cfg.epsilon = 2e-4;
    cfg.grasp.budget = 64;
    cfg.reasoning.backend = "remote";
    cfg.reasoning.base_url = "http://localhost:1234/v1";
    cfg.reasoning.model = "some-vlm";
    cfg.gripper.max_width = 0.1;
    const auto back = PipelineConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());

    auto doc = cfg.to_json();
    doc["grasp"]["bogus"] = 1;
    CHECK(code_of([&] { PipelineConfig::from_json(doc); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { PipelineConfig::from_json({{"nope", true}}); }) == ErrorCode::ConfigError);
    CHECK(PipelineConfig::from_json({{"seed", 3}}).grasp.budget == PipelineConfig{}.grasp.budget);
  }

  TEST_CASE("config validation") {
    PipelineConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.reasoning.backend = "oracle";
    CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
    cfg = {};
    cfg.grasp.backend = "remote";
    CHECK(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigError);
  }

  TEST_CASE("config loads from a file") {
    testing::TempDir tmp("cfg");
    std::ofstream(tmp.path() / "c.json") << R"({"seed": 9, "grasp": {"budget": 32}, "trace_dir": ""})";
    const auto cfg = PipelineConfig::load(tmp.path() / "c.json");
    CHECK(cfg.seed == 9);
    CHECK(cfg.grasp.budget == 32);
    CHECK(cfg.trace_dir.empty());
    CHECK_THROWS_AS(PipelineConfig::load(tmp.path() / "missing.json"), Error);
  }

  TEST_CASE("environment overrides") {
    std::map<std::string, std::string> env{{"TASKGRASP_REASONING_BACKEND", "remote"},
                                           {"TASKGRASP_REASONING_URL", "http://h/v1"},
                                           {"TASKGRASP_REASONING_MODEL", "m"},
                                           {"TASKGRASP_GRASP_URL", "http://g"},
                                           {"TASKGRASP_TRACE_DIR", "/tmp/x"},
                                           {"TASKGRASP_SEED", "12"}};
    const EnvLookup lookup = [&](const char* k) -> const char* {
      auto it = env.find(k);
      return it == env.end() ? nullptr : it->second.c_str();
    };
    PipelineConfig cfg;
    apply_env_overrides(cfg, lookup);
    CHECK(cfg.reasoning.backend == "remote");
    CHECK(cfg.reasoning.base_url == "http://h/v1");
    CHECK(cfg.reasoning.model == "m");
    CHECK(cfg.grasp.base_url == "http://g");
    CHECK(cfg.grasp.backend == "sampler");
    CHECK(cfg.trace_dir == "/tmp/x");
    CHECK(cfg.seed == 12);
    env["TASKGRASP_SEED"] = "twelve";
    CHECK(code_of([&] { apply_env_overrides(cfg, lookup); }) == ErrorCode::ConfigError);
  }

  TEST_CASE("a cluttered spoon run grasps the spoon handle") {
    const auto& obs = spoon_clutter();
    std::vector<std::string> events;
    RunOptions opts;
    opts.on_event = [&](const StageEvent& e) { events.push_back(e.stage + ":" + e.status); };
    const auto trace = run_pipeline("I want to scoop something", obs, testing::offline_config(), opts);
    REQUIRE(trace.ok());
    CHECK(trace.reasoning->object == "spoon");
    CHECK(trace.reasoning->part == "handle");
    REQUIRE(trace.outcome);
    CHECK(trace.outcome->success);
    CHECK(obs.scene->find(trace.outcome->grasped_object)->object_class == ObjectClass::Spoon);
    const Vec3 world = obs.camera_pose * trace.selection->report.winner.translation;
    CHECK(testing::distance_to_part(*obs.scene, ObjectClass::Spoon, *part_index(ObjectClass::Spoon, "handle"), world) <=
          0.01);

    const auto doc = trace.to_json();
    CHECK(doc["format"] == "taskgrasp.trace");
    CHECK(doc["version"] == 1);
    CHECK(doc["status"] == "succeeded");
    CHECK(doc["failed_stage"].is_null());
    CHECK(doc["parent_run_id"].is_null());
    std::vector<std::string> names;
    for (const auto& s : doc["stages"]) names.push_back(s["name"]);
    CHECK(names == std::vector<std::string>{"reasoning", "grounding", "selection", "execution"});
    CHECK(doc["stages"][2]["output"]["candidate_count"].get<std::size_t>() == trace.selection->candidates.size());
    CHECK(events.front() == "reasoning:started");
    CHECK(events.back() == "run:finished");
  }

  TEST_CASE("an unrelated instruction fails in reasoning and skips the rest") {
    const auto& obs = spoon_clutter();
    const auto trace = run_pipeline("fly me to the moon", obs, testing::offline_config());
    CHECK_FALSE(trace.ok());
    REQUIRE(trace.failed_stage());
    CHECK(trace.failed_stage()->name == "reasoning");
    CHECK(trace.failed_stage()->error_code == "NoRelevantObject");
    for (const char* s : {"grounding", "selection", "execution"}) CHECK(trace.stage(s)->status == StageStatus::Skipped);
    const auto doc = trace.to_json();
    CHECK(doc["status"] == "failed");
    CHECK(doc["stages"][0]["error"]["code"] == "NoRelevantObject");
  }

  TEST_CASE("an empty instruction is recorded as InvalidInstruction") {
    const auto trace = run_pipeline("   ", spoon_clutter(), testing::offline_config());
    CHECK(trace.failed_stage()->error_code == "InvalidInstruction");
  }

  TEST_CASE("identical inputs give identical traces") {
    const auto& obs = spoon_clutter();
    auto cfg = testing::offline_config();
    cfg.seed = 31;
    const auto a = run_pipeline("I want to scoop something", obs, cfg).to_json();
    const auto b = run_pipeline("I want to scoop something", obs, cfg).to_json();
    CHECK(strip_volatile(a).dump() == strip_volatile(b).dump());
    CHECK(a["run_id"] != b["run_id"]);
  }

  TEST_CASE("runs are published atomically with their artifacts") {
    testing::TempDir tmp("trace");
    auto cfg = testing::offline_config();
    cfg.trace_dir = tmp.path().string();
    RunOptions opts;
    opts.run_id = "run-test-1";
    const auto trace = run_pipeline("I want to scoop something", spoon_clutter(), cfg, opts);
    const fs::path dir = tmp.path() / "run-test-1";
    for (const char* f : {"trace.json", "mask.png", "cloud.json", "grasps.json", "rgb.png", "depth.png",
                          "intrinsics.txt", "camera_pose.json", "labels.png", "scene.json"})
      CHECK_MESSAGE(fs::exists(dir / f), f);
    const auto doc = load_trace(dir);
    CHECK(doc == nlohmann::json::parse(trace.to_json().dump()));
    CHECK(read_mask_png(dir / "mask.png") == trace.grounding->mask);
    for (const auto& e : fs::directory_iterator(tmp.path())) CHECK(e.path().filename().string().rfind(".tmp-", 0) != 0);
    CHECK(code_of([&] { run_pipeline("I want to scoop something", spoon_clutter(), cfg, opts); }) ==
          ErrorCode::TraceWriteError);
  }

  TEST_CASE("an unwritable trace directory is TraceWriteError") {
    testing::TempDir tmp("blocked");
    std::ofstream(tmp.path() / "file") << "x";
    auto cfg = testing::offline_config();
    cfg.trace_dir = (tmp.path() / "file").string();
    CHECK(code_of([&] { run_pipeline("I want to scoop something", spoon_clutter(), cfg); }) ==
          ErrorCode::TraceWriteError);
  }

  TEST_CASE("mismatched observation shapes are rejected") {
    Observation obs = spoon_clutter();
    obs.depth = DepthImage(10, 10);
    CHECK(code_of([&] { run_pipeline("I am thirsty", obs, testing::offline_config()); }) == ErrorCode::ShapeMismatch);
  }

  TEST_CASE("observations without a scene skip execution") {
    const auto& synthetic = spoon_clutter();
    Observation obs = synthetic;
    obs.scene.reset();
    obs.labels.reset();
    obs.visible_hint = {"spoon"};
    auto cfg = testing::offline_config();
    const auto no_labels = run_pipeline("I want to scoop something", obs, cfg);
    REQUIRE(no_labels.failed_stage());
    CHECK(no_labels.failed_stage()->name == "grounding");
    CHECK(no_labels.failed_stage()->error_code == "ConfigError");

    OracleGroundingBackend oracle(*synthetic.labels, *synthetic.scene);
    RunOptions opts;
    opts.grounding = &oracle;
    const auto trace = run_pipeline("I want to scoop something", obs, cfg, opts);
    CHECK(trace.ok());
    CHECK(trace.stage("execution")->status == StageStatus::Skipped);
    CHECK(trace.stage("execution")->output["reason"] == "no synthetic scene");
    CHECK_FALSE(trace.outcome);
  }

  TEST_CASE("overriding the part re-runs grounding and selection only") {
    const auto scene = generate_scene({ObjectClass::Mug}, 1);
    const auto obs = testing::synthetic_observation(scene);
    const auto parent = run_pipeline("I am thirsty", obs, testing::offline_config());
    REQUIRE(parent.ok());
    const auto parent_doc = parent.to_json();
    const auto snapshot = parent_doc.dump();

    const auto child = rerun_with_part(parent_doc, obs, "body", testing::offline_config());
    CHECK(parent_doc.dump() == snapshot);
    CHECK(child.parent_run_id == parent.run_id);
    CHECK(child.reasoning->part == "body");
    CHECK(child.reasoning->object == "mug");
    CHECK(child.reasoning->rationale == parent.reasoning->rationale);
    CHECK_FALSE(child.grounding->mask == parent.grounding->mask);
    // A body grasp straddles the wall, so check its contacts rather than its centre.
    const auto& sel = *child.selection;
    const auto [ci, cj] = sel.candidates.contacts[static_cast<std::size_t>(sel.report.winner_index)];
    const int body = *part_index(ObjectClass::Mug, "body");
    for (int c : {ci, cj})
      CHECK(testing::distance_to_part(scene, ObjectClass::Mug, body, obs.camera_pose * sel.affordance_cloud.points[c]) <=
            0.005);

    const auto same = rerun_with_part(parent_doc, obs, "handle", testing::offline_config());
    CHECK(same.grounding->mask == parent.grounding->mask);
    CHECK(same.selection->report.winner.translation == parent.selection->report.winner.translation);

    const auto missing = rerun_with_part(parent_doc, obs, "spout", testing::offline_config());
    CHECK(missing.failed_stage()->error_code == "PartNotFound");

    const auto failed = run_pipeline("fly me to the moon", obs, testing::offline_config()).to_json();
    CHECK(code_of([&] { rerun_with_part(failed, obs, "body", testing::offline_config()); }) ==
          ErrorCode::InvalidArgument);
  }

  TEST_CASE("observation files round-trip") {
    testing::TempDir tmp("obs");
    const auto& obs = spoon_clutter();
    save_observation_files(tmp.path(), obs);
    const auto back = load_observation_files(tmp.path());
    CHECK(back.rgb == obs.rgb);
    CHECK(back.depth == obs.depth);
    CHECK(back.intrinsics == obs.intrinsics);
    CHECK(back.camera_pose.matrix().isApprox(obs.camera_pose.matrix(), 1e-12));
    CHECK(back.labels == obs.labels);
    REQUIRE(back.scene);
    CHECK(samples_digest(*back.scene) == samples_digest(*obs.scene));
    CHECK(back.visible_objects() == obs.visible_objects());
  }

  TEST_CASE("harness scenes") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto classes = scene_classes(ObjectClass::Pan, Scenario::Clutter, seed);
      CHECK(classes.front() == ObjectClass::Pan);
      CHECK(classes.size() >= 4);
      CHECK(classes.size() <= 6);
      std::set<ObjectClass> distinct(classes.begin(), classes.end());
      CHECK(distinct.size() == classes.size());
      CHECK(classes == scene_classes(ObjectClass::Pan, Scenario::Clutter, seed));
    }
    CHECK(scene_classes(ObjectClass::Pan, Scenario::Single, 3) == std::vector<ObjectClass>{ObjectClass::Pan});
    CHECK(run_seed(1, 2, 3) == derive_seed(derive_seed(1, 2), 3));
    CHECK(run_seed(1, 2, 3) != run_seed(1, 2, 4));
  }

  TEST_CASE("GSR arithmetic and the results table") {
    GsrReport r;
    r.scenario = Scenario::Clutter;
    r.rows = {{"mug", 9, 10}, {"spoon", 3, 4}, {"pan", 0, 6}};
    CHECK(r.average() == doctest::Approx(12.0 / 20.0));
    const auto table = r.to_table();
    std::istringstream in(table);
    std::string l1, l2, l3;
    std::getline(in, l1);
    std::getline(in, l2);
    std::getline(in, l3);
    CHECK(l1 == "| Methods | mug | spoon | pan | Average GSR |");
    CHECK(l2.find("---") != std::string::npos);
    CHECK(l3 == "| ours (synthetic clutter) | 0.90 | 0.75 | 0.00 | 0.60 |");
  }

  TEST_CASE("a judge that accepts everything gives a GSR of one") {
    EvalOptions opts;
    int judged = 0;
    opts.judge = [&](const RunTrace&, const SceneDescription&) { return ++judged > 0; };
    const auto r = evaluate_gsr({ObjectClass::Mug, ObjectClass::Bowl}, Scenario::Single, 2, testing::offline_config(), 4,
                                opts);
    CHECK(judged == 4);
    CHECK(r.average() == 1.0);
    REQUIRE(r.runs.size() == 4);
    CHECK(r.runs[1].seed == run_seed(4, 0, 1));

    const auto real = evaluate_gsr({ObjectClass::Mug, ObjectClass::Bowl}, Scenario::Single, 2, testing::offline_config(), 4);
    int s = 0;
    for (const auto& run : real.runs) {
      s += run.success;
      CHECK(run.success == run.failure.empty());
    }
    CHECK(real.average() == doctest::Approx(s / 4.0));
    CHECK(real.to_json()["average_gsr"] == real.average());
  }
}
