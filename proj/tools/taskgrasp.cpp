// taskgrasp: command-line front end (gen-scene, render, run, eval, serve).

#include "taskgrasp/error.hpp"
#include "taskgrasp/pipeline.hpp"
#include "taskgrasp/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

using namespace taskgrasp;
using nlohmann::json;

namespace {

std::vector<ObjectClass> parse_classes(const std::vector<std::string>& names) {
  std::vector<ObjectClass> out;
  for (const auto& n : names) {
    if (n == "all") {
      out.insert(out.end(), kAllClasses.begin(), kAllClasses.end());
      continue;
    }
    const auto c = parse_object_class(n);
    if (!c) throw Error(ErrorCode::InvalidArgument, "unknown object class '" + n + "'");
    out.push_back(*c);
  }
  return out;
}

void write_json(const std::string& path, const json& doc) {
  if (path.empty() || path == "-") {
    std::cout << doc.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::IoError, path + " is not valid JSON");
  return doc;
}

// Flags that mirror PipelineConfig. Applied after the config file and the environment.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> reasoning, reasoning_url, model, rules, grounding, grounding_url, grasp, grasp_url,
      trace_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::optional<int> budget, attempts;
  bool no_simulate = false;

  void add(CLI::App& app, bool with_trace_dir = true) {
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--reasoning", reasoning, "reasoning backend: mock | remote");
    app.add_option("--reasoning-url", reasoning_url, "chat-completion base URL");
    app.add_option("--model", model, "remote reasoning model name");
    app.add_option("--rules", rules, "mock rule table (JSON)");
    app.add_option("--grounding", grounding, "grounding backend: oracle | remote");
    app.add_option("--grounding-url", grounding_url, "part segmentation service URL");
    app.add_option("--grasp", grasp, "grasp source: sampler | remote");
    app.add_option("--grasp-url", grasp_url, "grasp service URL");
    app.add_option("--seed", seed, "sampler seed");
    app.add_option("--epsilon", epsilon, "distance floor of the selection objective (m)");
    app.add_option("--budget", budget, "antipodal sampler candidate budget");
    app.add_option("--attempts", attempts, "reasoning attempts including repairs");
    if (with_trace_dir) app.add_option("--trace-dir", trace_dir, "run trace directory (empty string disables)");
    app.add_flag("--no-simulate", no_simulate, "skip the simulated grasp execution");
  }

  PipelineConfig build() const {
    PipelineConfig c = config_path.empty() ? PipelineConfig{} : PipelineConfig::load(config_path);
    apply_env_overrides(c);
    if (reasoning) c.reasoning.backend = *reasoning;
    if (reasoning_url) c.reasoning.base_url = *reasoning_url;
    if (model) c.reasoning.model = *model;
    if (rules) c.reasoning.rules_path = *rules;
    if (grounding) c.grounding.backend = *grounding;
    if (grounding_url) c.grounding.base_url = *grounding_url;
    if (grasp) c.grasp.backend = *grasp;
    if (grasp_url) c.grasp.base_url = *grasp_url;
    if (seed) c.seed = *seed;
    if (epsilon) c.epsilon = *epsilon;
    if (budget) c.grasp.budget = *budget;
    if (attempts) c.reasoning.max_attempts = *attempts;
    if (trace_dir) c.trace_dir = *trace_dir;
    if (no_simulate) c.simulate = false;
    c.validate();
    return c;
  }
};

json run_summary(const RunTrace& t) {
  json s{{"run_id", t.run_id}, {"status", t.ok() ? "succeeded" : "failed"}, {"instruction", t.instruction}};
  if (const auto* f = t.failed_stage())
    s["error"] = {{"stage", f->name}, {"code", f->error_code}, {"message", f->error_message}};
  if (t.reasoning)
    s["reasoning"] = {{"task", t.reasoning->task}, {"object", t.reasoning->object}, {"part", t.reasoning->part}};
  if (t.selection) {
    s["candidates"] = t.selection->candidates.size();
    s["winner"] = t.stage("selection")->output.at("winner");
  }
  if (t.outcome) s["execution"] = t.stage("execution")->output;
  return s;
}

PipelineService* g_service = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-oriented grasping pipeline"};
  app.require_subcommand(1);

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic tabletop scene");
  std::vector<std::string> gen_classes;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "-";
  gen->add_option("--classes", gen_classes, "object classes (comma separated)")->required()->delimiter(',');
  gen->add_option("--seed", gen_seed, "placement seed");
  gen->add_option("-o,--out", gen_out, "output scene file ('-' for stdout)");

  // render
  auto* ren = app.add_subcommand("render", "render a scene into an RGB-D observation directory");
  std::string ren_scene, ren_out;
  double ren_height = 0.65;
  ren->add_option("--scene", ren_scene, "scene file")->required()->check(CLI::ExistingFile);
  ren->add_option("-o,--out", ren_out, "output directory")->required();
  ren->add_option("--camera-height", ren_height, "camera height above the table (m)");

  // run
  auto* run = app.add_subcommand("run", "run the pipeline once");
  std::string run_instr, run_obs, run_scene;
  std::vector<std::string> run_classes;
  std::uint64_t run_scene_seed = 0;
  std::string run_json;
  ConfigFlags run_flags;
  run->add_option("-i,--instruction", run_instr, "natural-language instruction")->required();
  auto* obs_opt = run->add_option("--obs", run_obs, "observation directory")->check(CLI::ExistingDirectory);
  auto* scene_opt = run->add_option("--scene", run_scene, "scene file")->check(CLI::ExistingFile);
  auto* classes_opt = run->add_option("--classes", run_classes, "generate a scene with these classes")->delimiter(',');
  run->add_option("--scene-seed", run_scene_seed, "placement seed for --classes");
  run->add_option("--trace-json", run_json, "write the full trace document here ('-' for stdout)");
  obs_opt->excludes(scene_opt)->excludes(classes_opt);
  scene_opt->excludes(classes_opt);
  run_flags.add(*run);

  // eval
  auto* ev = app.add_subcommand("eval", "grasp success rate over synthetic scenes");
  std::vector<std::string> ev_classes{"all"};
  std::string ev_scenario = "clutter", ev_json;
  int ev_runs = 50;
  std::uint64_t ev_seed = 0;
  bool ev_quiet = false;
  ConfigFlags ev_flags;
  ev->add_option("--classes", ev_classes, "target classes or 'all'")->delimiter(',');
  ev->add_option("--scenario", ev_scenario, "single | clutter")->check(CLI::IsMember({"single", "clutter"}));
  ev->add_option("--runs", ev_runs, "runs per class")->check(CLI::PositiveNumber);
  ev->add_option("--base-seed", ev_seed, "harness seed");
  ev->add_option("--json", ev_json, "write the report JSON here");
  ev->add_flag("-q,--quiet", ev_quiet, "no per-run progress");
  ev_flags.add(*ev);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP API under /v1/");
  ServiceOptions srv_opts;
  ConfigFlags srv_flags;
  srv->add_option("--host", srv_opts.host, "bind address");
  srv->add_option("--port", srv_opts.port, "port (0 picks one)");
  srv->add_option("--workers", srv_opts.workers, "concurrent runs")->check(CLI::PositiveNumber);
  srv_flags.add(*srv);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto scene = generate_scene(parse_classes(gen_classes), gen_seed);
      write_json(gen_out, scene_to_json(scene));
      return 0;
    }

    if (*ren) {
      const auto scene = scene_from_json(read_json_file(ren_scene));
      const auto r = render_observation(scene, default_intrinsics(), top_down_camera(ren_height));
      save_observation_files(ren_out, Observation::from_render(r, scene));
      std::cerr << "wrote " << ren_out << "\n";
      return 0;
    }

    if (*run) {
      const PipelineConfig cfg = run_flags.build();
      Observation obs;
      if (!run_obs.empty()) {
        obs = load_observation_files(run_obs);
      } else {
        SceneDescription scene;
        if (!run_scene.empty()) scene = scene_from_json(read_json_file(run_scene));
        else if (!run_classes.empty()) scene = generate_scene(parse_classes(run_classes), run_scene_seed);
        else throw Error(ErrorCode::InvalidArgument, "give one of --obs, --scene or --classes");
        obs = Observation::from_render(render_observation(scene, default_intrinsics(), top_down_camera()), scene);
      }
      const RunTrace trace = run_pipeline(run_instr, obs, cfg);
      if (!run_json.empty()) write_json(run_json, trace.to_json());
      if (run_json != "-") std::cout << run_summary(trace).dump(2) << "\n";
      return trace.ok() ? 0 : 2;
    }

    if (*ev) {
      PipelineConfig cfg = ev_flags.build();
      if (!ev_flags.trace_dir) cfg.trace_dir.clear();
      EvalOptions eo;
      if (!ev_quiet)
        eo.on_run = [](const GsrRun& r) {
          std::cerr << r.object_class << " #" << r.index << (r.success ? " ok" : " fail " + r.failure) << "\n";
        };
      const auto report = evaluate_gsr(parse_classes(ev_classes), *parse_scenario(ev_scenario), ev_runs, cfg, ev_seed, eo);
      std::cout << report.to_table();
      std::cout << "runs: " << report.runs.size() << ", seconds: " << report.seconds << "\n";
      if (!ev_json.empty()) write_json(ev_json, report.to_json());
      return 0;
    }

    if (*srv) {
      PipelineService service(srv_flags.build(), srv_opts);
      g_service = &service;
      std::signal(SIGINT, [](int) { g_service->stop(); });
      std::signal(SIGTERM, [](int) { g_service->stop(); });
      const int port = service.bind();
      std::cerr << "listening on http://" << srv_opts.host << ":" << port << "/v1/\n";
      service.listen();
      g_service = nullptr;
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
