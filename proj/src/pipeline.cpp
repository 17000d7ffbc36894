#include "taskgrasp/pipeline.hpp"

#include "random.hpp"
#include "taskgrasp/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <set>

namespace taskgrasp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string digest_bytes(const void* data, std::size_t n) { return hex64(detail::fnv1a(data, n)); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms));
  return buf;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json box_json(const BoundingBox& b) { return json::array({b.u_min, b.v_min, b.u_max, b.v_max}); }

// Rejects keys the reader does not know so that typos in config files surface.
void check_keys(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::ConfigError, where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw Error(ErrorCode::ConfigError, "unknown config key " + where + "." + k);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::IoError, path.string() + " is not valid JSON");
  return doc;
}

json error_json(const StageRecord& s) { return {{"code", s.error_code}, {"message", s.error_message}}; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  if (reasoning.backend != "mock" && reasoning.backend != "remote")
    throw Error(ErrorCode::ConfigError, "reasoning backend must be mock or remote, not '" + reasoning.backend + "'");
  if (grounding.backend != "oracle" && grounding.backend != "remote")
    throw Error(ErrorCode::ConfigError, "grounding backend must be oracle or remote, not '" + grounding.backend + "'");
  if (grasp.backend != "sampler" && grasp.backend != "remote")
    throw Error(ErrorCode::ConfigError, "grasp backend must be sampler or remote, not '" + grasp.backend + "'");
  if (reasoning.backend == "remote" && (reasoning.base_url.empty() || reasoning.model.empty()))
    throw Error(ErrorCode::ConfigError, "remote reasoning needs base_url and model");
  if (grounding.backend == "remote" && grounding.base_url.empty())
    throw Error(ErrorCode::ConfigError, "remote grounding needs base_url");
  if (grasp.backend == "remote" && grasp.base_url.empty())
    throw Error(ErrorCode::ConfigError, "remote grasp backend needs base_url");
  if (reasoning.max_attempts < 1) throw Error(ErrorCode::ConfigError, "reasoning.max_attempts must be >= 1");
  if (reasoning.timeout_ms < 1 || grounding.timeout_ms < 1 || grasp.timeout_ms < 1)
    throw Error(ErrorCode::ConfigError, "timeouts must be positive");
  if (grasp.budget < 1 || grasp.trials_per_candidate < 1) throw Error(ErrorCode::ConfigError, "grasp budget must be >= 1");
  if (grasp.normal_neighbors < 3) throw Error(ErrorCode::ConfigError, "grasp.normal_neighbors must be >= 3");
  if (!(epsilon > 0)) throw Error(ErrorCode::ConfigError, "epsilon must be positive");
  if (!reasoning.rules_path.empty() && !fs::exists(reasoning.rules_path))
    throw Error(ErrorCode::ConfigError, "rule table not found: " + reasoning.rules_path);
  try {
    gripper.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.detail());
  }
}

json PipelineConfig::to_json() const {
  return {{"reasoning",
           {{"backend", reasoning.backend},
            {"rules_path", reasoning.rules_path},
            {"base_url", reasoning.base_url},
            {"model", reasoning.model},
            {"temperature", reasoning.temperature},
            {"api_key_env", reasoning.api_key_env},
            {"timeout_ms", reasoning.timeout_ms},
            {"max_attempts", reasoning.max_attempts},
            {"cache", reasoning.cache}}},
          {"grounding",
           {{"backend", grounding.backend},
            {"base_url", grounding.base_url},
            {"timeout_ms", grounding.timeout_ms},
            {"input_size", grounding.input_size}}},
          {"grasp",
           {{"backend", grasp.backend},
            {"base_url", grasp.base_url},
            {"timeout_ms", grasp.timeout_ms},
            {"budget", grasp.budget},
            {"friction_cone_deg", grasp.friction_cone_deg},
            {"trials_per_candidate", grasp.trials_per_candidate},
            {"normal_neighbors", grasp.normal_neighbors}}},
          {"seed", seed},
          {"epsilon", epsilon},
          {"gripper",
           {{"max_width", gripper.max_width},
            {"finger_depth", gripper.finger_depth},
            {"finger_thickness", gripper.finger_thickness},
            {"finger_width", gripper.finger_width},
            {"body_extent", vec_json(gripper.body_extent)},
            {"clearance", gripper.clearance}}},
          {"executor",
           {{"contact_tolerance", executor.contact_tolerance},
            {"friction_cone_deg", executor.friction_cone_deg},
            {"width_tolerance", executor.width_tolerance},
            {"patch_depth", executor.patch_depth}}},
          {"simulate", simulate},
          {"trace_dir", trace_dir}};
}

PipelineConfig PipelineConfig::from_json(const json& doc) {
  PipelineConfig c;
  try {
    check_keys(doc, {"reasoning", "grounding", "grasp", "seed", "epsilon", "gripper", "executor", "simulate", "trace_dir"},
               "config");
    if (doc.contains("reasoning")) {
      const auto& r = doc.at("reasoning");
      check_keys(r, {"backend", "rules_path", "base_url", "model", "temperature", "api_key_env", "timeout_ms",
                     "max_attempts", "cache"},
                 "reasoning");
      read(r, "backend", c.reasoning.backend);
      read(r, "rules_path", c.reasoning.rules_path);
      read(r, "base_url", c.reasoning.base_url);
      read(r, "model", c.reasoning.model);
      read(r, "temperature", c.reasoning.temperature);
      read(r, "api_key_env", c.reasoning.api_key_env);
      read(r, "timeout_ms", c.reasoning.timeout_ms);
      read(r, "max_attempts", c.reasoning.max_attempts);
      read(r, "cache", c.reasoning.cache);
    }
    if (doc.contains("grounding")) {
      const auto& g = doc.at("grounding");
      check_keys(g, {"backend", "base_url", "timeout_ms", "input_size"}, "grounding");
      read(g, "backend", c.grounding.backend);
      read(g, "base_url", c.grounding.base_url);
      read(g, "timeout_ms", c.grounding.timeout_ms);
      read(g, "input_size", c.grounding.input_size);
    }
    if (doc.contains("grasp")) {
      const auto& g = doc.at("grasp");
      check_keys(g, {"backend", "base_url", "timeout_ms", "budget", "friction_cone_deg", "trials_per_candidate",
                     "normal_neighbors"},
                 "grasp");
      read(g, "backend", c.grasp.backend);
      read(g, "base_url", c.grasp.base_url);
      read(g, "timeout_ms", c.grasp.timeout_ms);
      read(g, "budget", c.grasp.budget);
      read(g, "friction_cone_deg", c.grasp.friction_cone_deg);
      read(g, "trials_per_candidate", c.grasp.trials_per_candidate);
      read(g, "normal_neighbors", c.grasp.normal_neighbors);
    }
    read(doc, "seed", c.seed);
    read(doc, "epsilon", c.epsilon);
    if (doc.contains("gripper")) {
      const auto& g = doc.at("gripper");
      check_keys(g, {"max_width", "finger_depth", "finger_thickness", "finger_width", "body_extent", "clearance"},
                 "gripper");
      read(g, "max_width", c.gripper.max_width);
      read(g, "finger_depth", c.gripper.finger_depth);
      read(g, "finger_thickness", c.gripper.finger_thickness);
      read(g, "finger_width", c.gripper.finger_width);
      read(g, "clearance", c.gripper.clearance);
      if (g.contains("body_extent")) {
        const auto& b = g.at("body_extent");
        c.gripper.body_extent = Vec3(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
      }
    }
    if (doc.contains("executor")) {
      const auto& e = doc.at("executor");
      check_keys(e, {"contact_tolerance", "friction_cone_deg", "width_tolerance", "patch_depth"}, "executor");
      read(e, "contact_tolerance", c.executor.contact_tolerance);
      read(e, "friction_cone_deg", c.executor.friction_cone_deg);
      read(e, "width_tolerance", c.executor.width_tolerance);
      read(e, "patch_depth", c.executor.patch_depth);
    }
    read(doc, "simulate", c.simulate);
    read(doc, "trace_dir", c.trace_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::ConfigError, "config is not valid JSON: " + path.string());
  return from_json(doc);
}

void apply_env_overrides(PipelineConfig& cfg, const EnvLookup& lookup) {
  const EnvLookup get = lookup ? lookup : EnvLookup([](const char* k) { return std::getenv(k); });
  auto str = [&](const char* key, std::string& field) {
    if (const char* v = get(key); v && *v) field = v;
  };
  str("TASKGRASP_REASONING_BACKEND", cfg.reasoning.backend);
  str("TASKGRASP_REASONING_URL", cfg.reasoning.base_url);
  str("TASKGRASP_REASONING_MODEL", cfg.reasoning.model);
  str("TASKGRASP_GROUNDING_BACKEND", cfg.grounding.backend);
  str("TASKGRASP_GROUNDING_URL", cfg.grounding.base_url);
  str("TASKGRASP_GRASP_BACKEND", cfg.grasp.backend);
  str("TASKGRASP_GRASP_URL", cfg.grasp.base_url);
  str("TASKGRASP_TRACE_DIR", cfg.trace_dir);
  if (const char* v = get("TASKGRASP_SEED"); v && *v) {
    char* end = nullptr;
    const unsigned long long s = std::strtoull(v, &end, 10);
    if (!end || *end) throw Error(ErrorCode::ConfigError, std::string("TASKGRASP_SEED is not an integer: ") + v);
    cfg.seed = s;
  }
}

// ---------------------------------------------------------------------------
// Observation

Observation Observation::from_render(const RenderedObservation& r, const SceneDescription& scene) {
  Observation o;
  o.rgb = r.rgb;
  o.depth = r.depth;
  o.intrinsics = r.intrinsics;
  o.camera_pose = r.camera_pose;
  o.scene = scene;
  o.labels = r.labels;
  return o;
}

void Observation::validate() const {
  intrinsics.validate();
  auto check = [&](int w, int h, const char* what) {
    if (w != intrinsics.width || h != intrinsics.height)
      throw Error(ErrorCode::ShapeMismatch, std::string(what) + " is " + std::to_string(w) + "x" + std::to_string(h) +
                                                 " but the intrinsics say " + std::to_string(intrinsics.width) + "x" +
                                                 std::to_string(intrinsics.height));
  };
  check(rgb.width, rgb.height, "rgb");
  check(depth.width, depth.height, "depth");
  if (labels) check(labels->width, labels->height, "label map");
}

std::vector<std::string> Observation::visible_objects() const {
  if (!scene || !labels) return visible_hint;
  std::set<int> ids;
  for (auto l : labels->data)
    if (l) ids.insert(LabelMap::object_of(l));
  std::vector<std::string> names;
  for (int id : ids)
    if (const auto* o = scene->find(id)) {
      std::string n(to_string(o->object_class));
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  return names;
}

json pose_to_json(const RigidTransform& pose) {
  json rot = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot.push_back(pose.linear()(i, j));
  return {{"rotation", rot}, {"translation", vec_json(pose.translation())}};
}

RigidTransform pose_from_json(const json& doc) {
  try {
    RigidTransform p = RigidTransform::Identity();
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = doc.at("rotation").at(i * 3 + j).get<double>();
    p.linear() = r;
    const auto& t = doc.at("translation");
    p.translation() = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed pose: ") + e.what());
  }
}

void save_observation_files(const fs::path& dir, const Observation& obs) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
  write_color_png(dir / "rgb.png", obs.rgb);
  write_depth_png(dir / "depth.png", obs.depth);
  write_intrinsics(dir / "intrinsics.txt", obs.intrinsics);
  write_text(dir / "camera_pose.json", pose_to_json(obs.camera_pose).dump(2) + "\n");
  if (obs.labels) write_label_png(dir / "labels.png", *obs.labels);
  if (obs.scene) write_text(dir / "scene.json", scene_to_json(*obs.scene).dump(2) + "\n");
  if (!obs.visible_hint.empty()) write_text(dir / "visible.json", json(obs.visible_hint).dump() + "\n");
}

Observation load_observation_files(const fs::path& dir) {
  Observation o;
  o.intrinsics = read_intrinsics(dir / "intrinsics.txt");
  if (fs::exists(dir / "camera_pose.json")) o.camera_pose = pose_from_json(read_json(dir / "camera_pose.json"));
  if (fs::exists(dir / "visible.json")) o.visible_hint = read_json(dir / "visible.json").get<std::vector<std::string>>();
  if (fs::exists(dir / "scene.json")) {
    // Synthetic: re-render so depth is exact rather than millimetre-quantised.
    const SceneDescription scene = scene_from_json(read_json(dir / "scene.json"));
    const auto r = render_observation(scene, o.intrinsics, o.camera_pose);
    auto hint = std::move(o.visible_hint);
    o = Observation::from_render(r, scene);
    o.visible_hint = std::move(hint);
    return o;
  }
  o.rgb = read_color_png(dir / "rgb.png");
  o.depth = read_depth_png(dir / "depth.png");
  if (fs::exists(dir / "labels.png")) o.labels = read_label_png(dir / "labels.png");
  return o;
}

// ---------------------------------------------------------------------------
// Trace

std::string_view to_string(StageStatus s) {
  switch (s) {
    case StageStatus::Ok: return "ok";
    case StageStatus::Error: return "error";
    case StageStatus::Skipped: return "skipped";
  }
  return "unknown";
}

bool RunTrace::ok() const { return failed_stage() == nullptr; }

const StageRecord* RunTrace::failed_stage() const {
  for (const auto& s : stages)
    if (s.status == StageStatus::Error) return &s;
  return nullptr;
}

const StageRecord* RunTrace::stage(std::string_view name) const {
  for (const auto& s : stages)
    if (s.name == name) return &s;
  return nullptr;
}

json RunTrace::to_json() const {
  json st = json::array();
  for (const auto& s : stages) {
    json rec{{"name", s.name}, {"status", std::string(to_string(s.status))}, {"output", s.output}};
    if (s.status == StageStatus::Error) rec["error"] = error_json(s);
    st.push_back(std::move(rec));
  }
  const auto* failed = failed_stage();
  json artifacts = json::object();
  if (grounding) artifacts["mask"] = "mask.png";
  if (selection) {
    artifacts["cloud"] = "cloud.json";
    artifacts["grasps"] = "grasps.json";
  }
  return {{"format", "taskgrasp.trace"},
          {"version", 1},
          {"run_id", run_id},
          {"parent_run_id", parent_run_id.empty() ? json(nullptr) : json(parent_run_id)},
          {"started_at", started_at},
          {"finished_at", finished_at},
          {"instruction", instruction},
          {"seed", seed},
          {"observation", observation},
          {"config", config},
          {"stages", st},
          {"status", failed ? "failed" : "succeeded"},
          {"failed_stage", failed ? json(failed->name) : json(nullptr)},
          {"artifacts", artifacts}};
}

json strip_volatile(const json& trace) {
  json t = trace;
  for (const char* k : {"run_id", "parent_run_id", "started_at", "finished_at"}) t.erase(k);
  return t;
}

std::string new_run_id() {
  static std::atomic<std::uint64_t> counter{0};
  static const std::uint64_t salt = [] {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }();
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "%04d%02d%02dT%02d%02d%02d", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec);
  const std::uint64_t tag = detail::splitmix64(salt + counter.fetch_add(1));
  return std::string("run-") + stamp + "-" + hex64(tag).substr(0, 8);
}

namespace {

json observation_json(const Observation& obs) {
  const auto& in = obs.intrinsics;
  json o{{"width", in.width},
         {"height", in.height},
         {"intrinsics", {{"fx", in.fx}, {"fy", in.fy}, {"cx", in.cx}, {"cy", in.cy}}},
         {"camera_pose", pose_to_json(obs.camera_pose)},
         {"rgb_digest", digest_bytes(obs.rgb.data.data(), obs.rgb.data.size())},
         {"depth_digest", digest_bytes(obs.depth.data.data(), obs.depth.data.size() * sizeof(double))},
         {"source", obs.scene ? "synthetic" : "upload"}};
  if (obs.scene) o["scene"] = scene_to_json(*obs.scene);
  if (!obs.visible_hint.empty()) o["visible_hint"] = obs.visible_hint;
  return o;
}

json reasoning_json(const ReasoningResult& r, const std::string& backend, bool reused) {
  return {{"task", r.task},
          {"object", r.object},
          {"part", r.part},
          {"affordance", r.affordance},
          {"rationale", r.rationale},
          {"raw_response", r.raw_response},
          {"backend", backend},
          {"reused", reused}};
}

json cloud_json(const PointCloud& cloud) {
  json pts = json::array();
  for (const auto& p : cloud.points) pts.push_back(vec_json(p));
  return {{"frame", "camera"}, {"points", pts}};
}

json grasps_json(const ConstrainedSelection& sel) {
  json cands = json::array();
  for (std::size_t i = 0; i < sel.candidates.grasps.size(); ++i) {
    json g = grasp_to_json(sel.candidates.grasps[i]);
    if (i < sel.candidates.contacts.size())
      g["contacts"] = {sel.candidates.contacts[i].first, sel.candidates.contacts[i].second};
    cands.push_back(std::move(g));
  }
  json ranking = json::array();
  for (const auto& r : sel.report.ranking) ranking.push_back({{"index", r.index}, {"objective", r.objective}});
  return {{"frame", "camera"},
          {"source_cloud_id", sel.candidates.source_cloud_id},
          {"centroid", vec_json(sel.report.centroid)},
          {"winner_index", sel.report.winner_index},
          {"epsilon", sel.report.epsilon_used},
          {"candidates", cands},
          {"ranking", ranking}};
}

std::string mask_digest(const PixelMask& m) { return digest_bytes(m.bits.data(), m.bits.size()); }

}  // namespace

std::unique_ptr<ReasoningBackend> make_reasoning_backend(const PipelineConfig& cfg) {
  std::unique_ptr<ReasoningBackend> inner;
  if (cfg.reasoning.backend == "mock") {
    inner = std::make_unique<MockReasoningBackend>(cfg.reasoning.rules_path.empty()
                                                       ? MockRuleTable::defaults()
                                                       : MockRuleTable::load(cfg.reasoning.rules_path));
  } else {
    RemoteReasoningConfig rc{cfg.reasoning.base_url, cfg.reasoning.model, cfg.reasoning.temperature,
                             cfg.reasoning.api_key_env, std::chrono::milliseconds(cfg.reasoning.timeout_ms)};
    inner = std::make_unique<RemoteReasoningBackend>(rc);
  }
  if (!cfg.reasoning.cache) return inner;
  return std::make_unique<CachingReasoningBackend>(std::shared_ptr<ReasoningBackend>(std::move(inner)));
}

std::unique_ptr<GroundingBackend> make_grounding_backend(const PipelineConfig& cfg, const Observation& obs) {
  if (cfg.grounding.backend == "oracle") {
    if (!obs.labels || !obs.scene)
      throw Error(ErrorCode::ConfigError, "oracle grounding needs a synthetic observation with a label map");
    return std::make_unique<OracleGroundingBackend>(*obs.labels, *obs.scene);
  }
  return std::make_unique<RemoteGroundingBackend>(RemoteGroundingConfig{
      cfg.grounding.base_url, std::chrono::milliseconds(cfg.grounding.timeout_ms), cfg.grounding.input_size});
}

std::unique_ptr<GraspBackend> make_grasp_backend(const PipelineConfig& cfg) {
  if (cfg.grasp.backend == "sampler") {
    SamplerConfig sc;
    sc.budget = cfg.grasp.budget;
    sc.seed = cfg.seed;
    sc.friction_cone_deg = cfg.grasp.friction_cone_deg;
    sc.trials_per_candidate = cfg.grasp.trials_per_candidate;
    return std::make_unique<SamplerGraspBackend>(sc, cfg.grasp.normal_neighbors);
  }
  return std::make_unique<RemoteGraspBackend>(cfg.grasp.base_url, std::chrono::milliseconds(cfg.grasp.timeout_ms));
}

RunTrace run_pipeline(std::string_view instruction, const Observation& obs, const PipelineConfig& cfg,
                      const RunOptions& options) {
  cfg.validate();
  obs.validate();

  RunTrace trace;
  trace.run_id = options.run_id.empty() ? new_run_id() : options.run_id;
  trace.parent_run_id = options.parent_run_id;
  trace.started_at = utc_now();
  trace.instruction = std::string(instruction);
  trace.seed = cfg.seed;
  trace.observation = observation_json(obs);
  trace.config = cfg.to_json();

  auto emit = [&](const std::string& stage, const std::string& status, const std::string& message = {}) {
    if (options.on_event) options.on_event({trace.run_id, stage, status, message});
  };
  // Runs one stage; an Error becomes the stage's error record and stops the run.
  bool alive = true;
  auto stage = [&](const char* name, auto&& body) {
    StageRecord rec;
    rec.name = name;
    if (!alive) {
      trace.stages.push_back(std::move(rec));
      emit(name, "skipped");
      return;
    }
    emit(name, "started");
    try {
      rec.output = body();
      rec.status = StageStatus::Ok;
    } catch (const Error& e) {
      rec.status = StageStatus::Error;
      rec.error_code = std::string(to_string(e.code()));
      rec.error_message = e.detail();
    } catch (const std::exception& e) {
      rec.status = StageStatus::Error;
      rec.error_code = "InternalError";
      rec.error_message = e.what();
    }
    alive = rec.status == StageStatus::Ok;
    emit(name, std::string(to_string(rec.status)), rec.error_message);
    trace.stages.push_back(std::move(rec));
  };

  stage("reasoning", [&]() -> json {
    if (options.reuse_reasoning) {
      trace.reasoning = *options.reuse_reasoning;
      return reasoning_json(*trace.reasoning, "reused", true);
    }
    std::unique_ptr<ReasoningBackend> owned;
    ReasoningBackend* backend = options.reasoning;
    if (!backend) {
      owned = make_reasoning_backend(cfg);
      backend = owned.get();
    }
    ReasoningContext ctx{obs.visible_objects()};
    trace.reasoning = infer_affordance(instruction, obs.rgb, *backend, ctx, cfg.reasoning.max_attempts);
    return reasoning_json(*trace.reasoning, backend->name(), false);
  });

  stage("grounding", [&]() -> json {
    std::unique_ptr<GroundingBackend> owned;
    GroundingBackend* backend = options.grounding;
    if (!backend) {
      owned = make_grounding_backend(cfg, obs);
      backend = owned.get();
    }
    const auto& r = *trace.reasoning;
    trace.grounding = ground(obs.rgb, r.object, r.part, r.affordance, *backend);
    const auto& m = trace.grounding->mask;
    return {{"backend", backend->name()},
            {"box", box_json(trace.grounding->box)},
            {"mask",
             {{"file", "mask.png"},
              {"width", m.width},
              {"height", m.height},
              {"popcount", m.popcount()},
              {"digest", mask_digest(m)}}}};
  });

  stage("selection", [&]() -> json {
    std::unique_ptr<GraspBackend> owned;
    GraspBackend* backend = options.grasp;
    if (!backend) {
      owned = make_grasp_backend(cfg);
      backend = owned.get();
    }
    trace.selection = constrain_and_select(obs.depth, obs.intrinsics, trace.grounding->mask, *backend, cfg.gripper,
                                           cfg.epsilon);
    const auto& sel = *trace.selection;
    json head = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(10, sel.report.ranking.size()); ++i)
      head.push_back({{"index", sel.report.ranking[i].index}, {"objective", sel.report.ranking[i].objective}});
    return {{"backend", backend->name()},
            {"cloud", {{"file", "cloud.json"}, {"points", sel.affordance_cloud.size()},
                       {"digest", cloud_digest(sel.affordance_cloud)}}},
            {"centroid", vec_json(sel.report.centroid)},
            {"candidate_count", sel.candidates.size()},
            {"candidates_file", "grasps.json"},
            {"winner_index", sel.report.winner_index},
            {"winner", grasp_to_json(sel.report.winner)},
            {"winner_objective", sel.report.ranking.front().objective},
            {"epsilon", sel.report.epsilon_used},
            {"ranking_head", head}};
  });

  if (obs.scene && cfg.simulate) {
    stage("execution", [&]() -> json {
      trace.outcome = simulate_grasp(*obs.scene, trace.selection->report.winner, cfg.gripper, obs.camera_pose,
                                     cfg.executor);
      const auto& o = *trace.outcome;
      return {{"success", o.success},
              {"failure_reason", o.failure_reason ? json(std::string(to_string(*o.failure_reason))) : json(nullptr)},
              {"grasped_object", o.grasped_object},
              {"contact_separation", o.contact_separation}};
    });
  } else {
    StageRecord rec;
    rec.name = "execution";
    rec.output = {{"reason", obs.scene ? "simulation disabled" : "no synthetic scene"}};
    trace.stages.push_back(std::move(rec));
  }

  trace.finished_at = utc_now();
  if (!cfg.trace_dir.empty()) persist_trace(trace, obs, cfg.trace_dir, options.save_observation);
  emit("run", "finished", trace.ok() ? "succeeded" : "failed");
  return trace;
}

fs::path persist_trace(const RunTrace& trace, const Observation& obs, const fs::path& trace_dir, bool save_observation) {
  const fs::path final_dir = trace_dir / trace.run_id;
  const fs::path tmp = trace_dir / (".tmp-" + trace.run_id);
  try {
    fs::create_directories(trace_dir);
    if (fs::exists(final_dir)) throw Error(ErrorCode::TraceWriteError, "run directory already exists: " + final_dir.string());
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    if (save_observation) save_observation_files(tmp, obs);
    if (trace.grounding) write_mask_png(tmp / "mask.png", trace.grounding->mask);
    if (trace.selection) {
      write_text(tmp / "cloud.json", cloud_json(trace.selection->affordance_cloud).dump() + "\n");
      write_text(tmp / "grasps.json", grasps_json(*trace.selection).dump(2) + "\n");
    }
    write_text(tmp / "trace.json", trace.to_json().dump(2) + "\n");
    fs::rename(tmp, final_dir);
  } catch (const Error& e) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    if (e.code() == ErrorCode::TraceWriteError) throw;
    throw Error(ErrorCode::TraceWriteError, e.detail());
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw Error(ErrorCode::TraceWriteError, e.what());
  }
  return final_dir;
}

json load_trace(const fs::path& run_dir) { return read_json(run_dir / "trace.json"); }

std::optional<ReasoningResult> reasoning_from_trace(const json& trace) {
  try {
    for (const auto& s : trace.at("stages")) {
      if (s.at("name") != "reasoning") continue;
      if (s.at("status") != "ok") return std::nullopt;
      const auto& o = s.at("output");
      ReasoningResult r;
      r.task = o.at("task").get<std::string>();
      r.object = o.at("object").get<std::string>();
      r.part = o.at("part").get<std::string>();
      r.affordance = o.at("affordance").get<std::string>();
      r.rationale = o.at("rationale").get<std::vector<std::string>>();
      r.raw_response = o.value("raw_response", "");
      return r;
    }
  } catch (const json::exception&) {
  }
  return std::nullopt;
}

RunTrace rerun_with_part(const json& parent_trace, const Observation& obs, const std::string& part,
                         const PipelineConfig& cfg, RunOptions options) {
  auto r = reasoning_from_trace(parent_trace);
  if (!r) throw Error(ErrorCode::InvalidArgument, "the parent trace has no completed reasoning stage");
  if (part.empty()) throw Error(ErrorCode::InvalidArgument, "override part is empty");
  r->part = part;
  if (const auto cls = parse_object_class(r->object))
    if (const auto idx = part_index(*cls, part)) {
      const auto& tags = class_parts(*cls)[static_cast<std::size_t>(*idx)].affordances;
      if (!tags.empty()) r->affordance = tags.front();
    }
  options.reuse_reasoning = r;
  options.parent_run_id = parent_trace.value("run_id", "");
  return run_pipeline(parent_trace.value("instruction", ""), obs, cfg, options);
}

// ---------------------------------------------------------------------------
// Evaluation

std::string_view to_string(Scenario s) { return s == Scenario::Single ? "single" : "clutter"; }

std::optional<Scenario> parse_scenario(std::string_view s) {
  if (s == "single") return Scenario::Single;
  if (s == "clutter") return Scenario::Clutter;
  return std::nullopt;
}

double GsrReport::average() const {
  long long s = 0, a = 0;
  for (const auto& r : rows) s += r.successes, a += r.attempts;
  return a ? static_cast<double>(s) / static_cast<double>(a) : 0.0;
}

json GsrReport::to_json() const {
  json rws = json::array();
  for (const auto& r : rows)
    rws.push_back({{"class", r.object_class}, {"successes", r.successes}, {"attempts", r.attempts}, {"gsr", r.gsr()}});
  json rns = json::array();
  for (const auto& r : runs)
    rns.push_back({{"class", r.object_class}, {"index", r.index}, {"seed", r.seed}, {"success", r.success},
                   {"failure", r.failure.empty() ? json(nullptr) : json(r.failure)}});
  return {{"scenario", std::string(to_string(scenario))},
          {"base_seed", base_seed},
          {"runs_per_class", runs_per_class},
          {"classes", rws},
          {"average_gsr", average()},
          {"runs", rns},
          {"seconds", seconds}};
}

std::string GsrReport::to_table() const {
  auto fmt = [](double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string header = "| Methods |", rule = "|---|", row = "| ours (synthetic " + std::string(to_string(scenario)) + ") |";
  for (const auto& r : rows) {
    header += " " + r.object_class + " |";
    rule += "---|";
    row += " " + fmt(r.gsr()) + " |";
  }
  header += " Average GSR |";
  rule += "---|";
  row += " " + fmt(average()) + " |";
  return header + "\n" + rule + "\n" + row + "\n";
}

std::vector<ObjectClass> scene_classes(ObjectClass target, Scenario scenario, std::uint64_t seed) {
  std::vector<ObjectClass> classes{target};
  if (scenario == Scenario::Single) return classes;
  std::mt19937_64 rng(seed);
  std::vector<ObjectClass> others;
  for (auto c : kAllClasses)
    if (c != target) others.push_back(c);
  const std::size_t n = 3 + detail::uniform_index(rng, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + detail::uniform_index(rng, others.size() - i);
    std::swap(others[i], others[j]);
    classes.push_back(others[i]);
  }
  return classes;
}

SceneDescription harness_scene(ObjectClass target, Scenario scenario, std::uint64_t seed) {
  const auto classes = scene_classes(target, scenario, seed);
  constexpr int kAttempts = 10;
  for (int attempt = 0;; ++attempt) {
    try {
      return generate_scene(classes, attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SceneTooCrowded || attempt + 1 >= kAttempts) throw;
    }
  }
}

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t class_index, int run_index) {
  return derive_seed(derive_seed(base_seed, class_index), static_cast<std::uint64_t>(run_index));
}

GsrReport evaluate_gsr(const std::vector<ObjectClass>& classes, Scenario scenario, int runs_per_class,
                       const PipelineConfig& cfg, std::uint64_t base_seed, const EvalOptions& options) {
  if (runs_per_class < 1) throw Error(ErrorCode::InvalidArgument, "runs_per_class must be at least 1");
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const MockRuleTable rules =
      cfg.reasoning.rules_path.empty() ? MockRuleTable::defaults() : MockRuleTable::load(cfg.reasoning.rules_path);
  auto reasoner = make_reasoning_backend(cfg);

  GsrReport report;
  report.scenario = scenario;
  report.base_seed = base_seed;
  report.runs_per_class = runs_per_class;
  for (const auto target : classes) {
    GsrRow row;
    row.object_class = std::string(to_string(target));
    const std::string& instruction = rules.canonical_instruction(row.object_class);
    for (int i = 0; i < runs_per_class; ++i) {
      GsrRun run;
      run.object_class = row.object_class;
      run.index = i;
      run.seed = run_seed(base_seed, static_cast<std::size_t>(target), i);
      ++row.attempts;
      try {
        const SceneDescription scene = harness_scene(target, scenario, run.seed);
        const auto rendered = render_observation(scene, options.intrinsics, options.camera_pose);
        const Observation obs = Observation::from_render(rendered, scene);
        PipelineConfig run_cfg = cfg;
        run_cfg.seed = run.seed;
        RunOptions ro;
        ro.reasoning = reasoner.get();
        const RunTrace trace = run_pipeline(instruction, obs, run_cfg, ro);
        if (options.judge) {
          run.success = options.judge(trace, scene);
        } else {
          run.success = trace.outcome && trace.outcome->success;
        }
        if (!run.success) {
          if (const auto* f = trace.failed_stage()) run.failure = f->error_code;
          else if (trace.outcome && trace.outcome->failure_reason)
            run.failure = std::string(to_string(*trace.outcome->failure_reason));
          else run.failure = "NotSimulated";
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::TraceWriteError || e.code() == ErrorCode::ConfigError) throw;
        run.failure = std::string(to_string(e.code()));
      }
      if (run.success) ++row.successes;
      if (options.on_run) options.on_run(run);
      report.runs.push_back(std::move(run));
    }
    report.rows.push_back(row);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace taskgrasp
