#pragma once

#include "taskgrasp/execution.hpp"
#include "taskgrasp/grounding.hpp"
#include "taskgrasp/reasoning.hpp"
#include "taskgrasp/render.hpp"
#include "taskgrasp/selection.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace taskgrasp {

struct PipelineConfig {
  struct Reasoning {
    std::string backend = "mock";  // mock | remote
    std::string rules_path;        // empty: built-in rule table
    std::string base_url;
    std::string model;
    double temperature = 0.0;
    std::string api_key_env = "TASKGRASP_VLM_API_KEY";
    int timeout_ms = 30000;
    int max_attempts = 3;
    bool cache = true;
  } reasoning;
  struct Grounding {
    std::string backend = "oracle";  // oracle | remote
    std::string base_url;
    int timeout_ms = 30000;
    int input_size = 224;
  } grounding;
  struct Grasp {
    std::string backend = "sampler";  // sampler | remote
    std::string base_url;
    int timeout_ms = 30000;
    int budget = 256;
    double friction_cone_deg = 15.0;
    int trials_per_candidate = 64;
    int normal_neighbors = 8;
  } grasp;
  std::uint64_t seed = 0;
  double epsilon = 1e-4;
  GripperSpec gripper;
  ExecutorConfig executor;
  bool simulate = true;  // score the winner when the observation carries a scene
  std::string trace_dir = "runs";  // empty: traces are not persisted

  /// Throws ConfigError for unknown backends or missing endpoints.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static PipelineConfig from_json(const nlohmann::json& doc);
  static PipelineConfig load(const std::filesystem::path& path);
};

using EnvLookup = std::function<const char*(const char*)>;

/// TASKGRASP_{REASONING,GROUNDING,GRASP}_{BACKEND,URL}, TASKGRASP_REASONING_MODEL,
/// TASKGRASP_TRACE_DIR and TASKGRASP_SEED override the matching fields.
void apply_env_overrides(PipelineConfig& cfg, const EnvLookup& lookup = {});

struct Observation {
  ColorImage rgb;
  DepthImage depth;
  CameraIntrinsics intrinsics;
  RigidTransform camera_pose = RigidTransform::Identity();  // camera -> world
  /// Synthetic ground truth, present for generated scenes.
  std::optional<SceneDescription> scene;
  std::optional<LabelMap> labels;
  /// Object names the mock reasoner may treat as visible for real images.
  std::vector<std::string> visible_hint;

  static Observation from_render(const RenderedObservation& r, const SceneDescription& scene);
  /// Throws ShapeMismatch when images and intrinsics disagree.
  void validate() const;
  /// Classes with at least one labelled pixel, else the hint.
  std::vector<std::string> visible_objects() const;
};

/// Writes rgb.png, depth.png, intrinsics.txt, camera_pose.json and, for
/// synthetic observations, labels.png and scene.json.
void save_observation_files(const std::filesystem::path& dir, const Observation& obs);
Observation load_observation_files(const std::filesystem::path& dir);

nlohmann::json pose_to_json(const RigidTransform& pose);
RigidTransform pose_from_json(const nlohmann::json& doc);

enum class StageStatus { Ok, Error, Skipped };
std::string_view to_string(StageStatus s);

struct StageRecord {
  std::string name;
  StageStatus status = StageStatus::Skipped;
  nlohmann::json output = nlohmann::json::object();
  std::string error_code;  // set when status is Error
  std::string error_message;
};

inline constexpr const char* kStageNames[] = {"reasoning", "grounding", "selection", "execution"};

struct RunTrace {
  std::string run_id;
  std::string parent_run_id;
  std::string started_at;
  std::string finished_at;
  std::string instruction;
  std::uint64_t seed = 0;
  nlohmann::json observation;
  nlohmann::json config;
  std::vector<StageRecord> stages;  // pipeline order

  std::optional<ReasoningResult> reasoning;
  std::optional<GroundingOutput> grounding;
  std::optional<ConstrainedSelection> selection;
  std::optional<ExecutionOutcome> outcome;

  /// True when no stage recorded an error.
  bool ok() const;
  const StageRecord* failed_stage() const;
  const StageRecord* stage(std::string_view name) const;
  nlohmann::json to_json() const;
};

/// The document with run_id, parent_run_id and timestamps removed, for comparisons.
nlohmann::json strip_volatile(const nlohmann::json& trace);

struct StageEvent {
  std::string run_id;
  std::string stage;
  std::string status;  // started | ok | error | skipped | finished
  std::string message;
};

struct RunOptions {
  /// Borrowed backends; the pipeline builds its own from the config when null.
  ReasoningBackend* reasoning = nullptr;
  GroundingBackend* grounding = nullptr;
  GraspBackend* grasp = nullptr;
  /// Skip the reasoning call and start from this result (part overrides).
  std::optional<ReasoningResult> reuse_reasoning;
  std::string parent_run_id;
  std::string run_id;  // generated when empty
  std::function<void(const StageEvent&)> on_event;
  bool save_observation = true;  // include observation files in the run directory
};

std::string new_run_id();

/// Backends named by the config. Reasoning is wrapped in a response cache
/// when reasoning.cache is set; oracle grounding needs a synthetic observation.
std::unique_ptr<ReasoningBackend> make_reasoning_backend(const PipelineConfig& cfg);
std::unique_ptr<GroundingBackend> make_grounding_backend(const PipelineConfig& cfg, const Observation& obs);
std::unique_ptr<GraspBackend> make_grasp_backend(const PipelineConfig& cfg);

/// Runs reasoning -> grounding -> constrained selection (-> simulated
/// execution for synthetic scenes). Stage failures are recorded in the trace;
/// only trace persistence problems (TraceWriteError) and configuration errors
/// escape.
RunTrace run_pipeline(std::string_view instruction, const Observation& obs, const PipelineConfig& cfg,
                      const RunOptions& options = {});

/// Publishes the run directory <trace_dir>/<run_id> atomically (write to a
/// hidden sibling, then rename). Throws TraceWriteError.
std::filesystem::path persist_trace(const RunTrace& trace, const Observation& obs, const std::filesystem::path& trace_dir,
                                    bool save_observation = true);

nlohmann::json load_trace(const std::filesystem::path& run_dir);

/// Reasoning result recorded in a trace document; nullopt when that stage failed.
std::optional<ReasoningResult> reasoning_from_trace(const nlohmann::json& trace);

/// Re-runs grounding and selection with `part` in place of the reasoned part.
RunTrace rerun_with_part(const nlohmann::json& parent_trace, const Observation& obs, const std::string& part,
                         const PipelineConfig& cfg, RunOptions options = {});

// ---------------------------------------------------------------------------
// Evaluation harness

enum class Scenario { Single, Clutter };
std::string_view to_string(Scenario s);
std::optional<Scenario> parse_scenario(std::string_view s);

struct GsrRun {
  std::string object_class;
  int index = 0;
  std::uint64_t seed = 0;
  bool success = false;
  std::string failure;  // error code or execution failure reason
};

struct GsrRow {
  std::string object_class;
  int successes = 0;
  int attempts = 0;
  double gsr() const { return attempts ? static_cast<double>(successes) / attempts : 0.0; }
};

struct GsrReport {
  Scenario scenario = Scenario::Clutter;
  std::uint64_t base_seed = 0;
  int runs_per_class = 0;
  std::vector<GsrRow> rows;
  std::vector<GsrRun> runs;
  double seconds = 0.0;

  /// Attempt-weighted over all classes.
  double average() const;
  nlohmann::json to_json() const;
  /// One header row of class names plus "Average GSR", one value row.
  std::string to_table() const;
};

struct EvalOptions {
  /// Replaces the success decision; receives the finished trace and the scene.
  std::function<bool(const RunTrace&, const SceneDescription&)> judge;
  std::function<void(const GsrRun&)> on_run;
  CameraIntrinsics intrinsics = default_intrinsics();
  RigidTransform camera_pose = top_down_camera();
};

/// Target class plus 3-5 distinct distractor classes for clutter, target alone for single.
std::vector<ObjectClass> scene_classes(ObjectClass target, Scenario scenario, std::uint64_t seed);

/// Scene for one harness run; retries placement with derived seeds.
SceneDescription harness_scene(ObjectClass target, Scenario scenario, std::uint64_t seed);

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t class_index, int run_index);

GsrReport evaluate_gsr(const std::vector<ObjectClass>& classes, Scenario scenario, int runs_per_class,
                       const PipelineConfig& cfg, std::uint64_t base_seed, const EvalOptions& options = {});

}  // namespace taskgrasp
