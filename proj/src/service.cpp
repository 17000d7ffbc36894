#include "taskgrasp/service.hpp"

#include "taskgrasp/error.hpp"

#include <httplib.h>

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace taskgrasp {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Request errors that are not library Errors.
struct HttpError {
  int status;
  std::string code;
  std::string message;
};

json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

bool valid_run_id(const std::string& id) {
  static const std::regex re("[A-Za-z0-9][A-Za-z0-9._-]{0,127}");
  return std::regex_match(id, re);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool flag(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return false;
  const auto v = req.get_param_value(name);
  return v.empty() || v == "1" || v == "true";
}

std::string sse(const std::string& event, const json& data) {
  return "event: " + event + "\ndata: " + data.dump() + "\n\n";
}

json event_json(const StageEvent& e) {
  return {{"run_id", e.run_id}, {"stage", e.stage}, {"status", e.status}, {"message", e.message}};
}

std::uint64_t parse_seed(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    char* end = nullptr;
    const unsigned long long n = std::strtoull(s.c_str(), &end, 10);
    if (!s.empty() && end && !*end) return n;
  }
  throw Error(ErrorCode::InvalidArgument, "seed must be a non-negative integer");
}

}  // namespace

Observation observation_from_request(const json& body) {
  if (!body.is_object() || !body.contains("scene") || !body.at("scene").is_object())
    throw Error(ErrorCode::InvalidArgument, "request needs a \"scene\" object");
  const json& spec = body.at("scene");
  SceneDescription scene;
  if (spec.contains("objects")) {
    scene = scene_from_json(spec);
  } else {
    if (!spec.contains("classes") || !spec.at("classes").is_array() || spec.at("classes").empty())
      throw Error(ErrorCode::InvalidArgument, "scene.classes must be a non-empty list of object classes");
    std::vector<ObjectClass> classes;
    for (const auto& c : spec.at("classes")) {
      const auto cls = c.is_string() ? parse_object_class(c.get<std::string>()) : std::nullopt;
      if (!cls) throw Error(ErrorCode::InvalidArgument, "unknown object class " + c.dump());
      classes.push_back(*cls);
    }
    const std::uint64_t seed = spec.contains("seed") ? parse_seed(spec.at("seed")) : 0;
    scene = generate_scene(classes, seed);
  }
  const auto rendered = render_observation(scene, default_intrinsics(), top_down_camera());
  return Observation::from_render(rendered, scene);
}

namespace {

Observation observation_from_upload(const httplib::Request& req) {
  auto field = [&](const char* name) -> const httplib::MultipartFormData* {
    return req.has_file(name) ? &req.files.find(name)->second : nullptr;
  };
  for (const char* required : {"rgb", "depth", "intrinsics"})
    if (!field(required)) throw Error(ErrorCode::InvalidArgument, std::string("upload is missing \"") + required + "\"");
  Observation obs;
  obs.rgb = decode_color_png(field("rgb")->content);
  obs.depth = decode_depth_png(field("depth")->content);
  obs.intrinsics = parse_intrinsics(field("intrinsics")->content);
  if (const auto* pose = field("camera_pose")) {
    json doc = json::parse(pose->content, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::InvalidArgument, "camera_pose is not valid JSON");
    obs.camera_pose = pose_from_json(doc);
  }
  if (const auto* visible = field("visible")) {
    json doc = json::parse(visible->content, nullptr, false);
    if (doc.is_array()) {
      for (const auto& v : doc)
        if (v.is_string()) obs.visible_hint.push_back(v.get<std::string>());
    } else {
      std::stringstream ss(visible->content);
      for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(" \t\r\n"));
        item.erase(item.find_last_not_of(" \t\r\n") + 1);
        if (!item.empty()) obs.visible_hint.push_back(item);
      }
    }
  }
  return obs;
}

}  // namespace

struct PipelineService::Impl {
  struct RunState {
    std::string run_id;
    std::string parent_run_id;
    std::string instruction;
    std::string status = "queued";  // queued | running | succeeded | failed | error | cancelled
    std::vector<json> events;
    json error;  // set when the run could not be published
    bool finished = false;
  };
  using Job = std::function<RunTrace(const RunOptions&)>;

  PipelineConfig cfg;
  ServiceOptions options;
  fs::path root;
  std::unique_ptr<ReasoningBackend> reasoning;
  httplib::Server server;
  int bound_port = -1;
  std::thread listener;

  std::mutex mutex;
  std::condition_variable changed;
  std::map<std::string, std::shared_ptr<RunState>> runs;
  std::deque<std::pair<std::shared_ptr<RunState>, Job>> queue;
  std::vector<std::thread> workers;
  bool stopping = false;

  Impl(PipelineConfig c, ServiceOptions o) : cfg(std::move(c)), options(std::move(o)) {
    if (cfg.trace_dir.empty()) throw Error(ErrorCode::ConfigError, "the service needs a trace directory");
    cfg.validate();
    if (options.workers < 1) throw Error(ErrorCode::ConfigError, "the service needs at least one worker");
    root = cfg.trace_dir;
    fs::create_directories(root);
    reasoning = make_reasoning_backend(cfg);
    routes();
    for (int i = 0; i < options.workers; ++i) workers.emplace_back([this] { work(); });
  }

  ~Impl() {
    server.stop();
    if (listener.joinable()) listener.join();
    {
      std::lock_guard lock(mutex);
      stopping = true;
      for (auto& [state, job] : queue) {
        state->status = "cancelled";
        state->finished = true;
      }
      queue.clear();
    }
    changed.notify_all();
    for (auto& w : workers) w.join();
  }

  void work() {
    for (;;) {
      std::shared_ptr<RunState> state;
      Job job;
      {
        std::unique_lock lock(mutex);
        changed.wait(lock, [&] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        std::tie(state, job) = std::move(queue.front());
        queue.pop_front();
        state->status = "running";
      }
      changed.notify_all();
      RunOptions ro;
      ro.run_id = state->run_id;
      ro.parent_run_id = state->parent_run_id;
      ro.reasoning = reasoning.get();
      ro.on_event = [this, state](const StageEvent& e) {
        {
          std::lock_guard lock(mutex);
          state->events.push_back(event_json(e));
        }
        changed.notify_all();
      };
      std::string status;
      json error;
      try {
        status = job(ro).ok() ? "succeeded" : "failed";
      } catch (const Error& e) {
        status = "error";
        error = {{"code", std::string(to_string(e.code()))}, {"message", e.detail()}};
      } catch (const std::exception& e) {
        status = "error";
        error = {{"code", "InternalError"}, {"message", e.what()}};
      }
      {
        std::lock_guard lock(mutex);
        state->status = status;
        state->error = error;
        state->finished = true;
      }
      changed.notify_all();
    }
  }

  std::shared_ptr<RunState> submit(std::string instruction, std::string parent, Job job) {
    auto state = std::make_shared<RunState>();
    state->run_id = new_run_id();
    state->parent_run_id = std::move(parent);
    state->instruction = std::move(instruction);
    {
      std::lock_guard lock(mutex);
      if (stopping) throw HttpError{503, "Unavailable", "the service is shutting down"};
      runs[state->run_id] = state;
      queue.emplace_back(state, std::move(job));
    }
    changed.notify_all();
    return state;
  }

  void wait_for(const std::shared_ptr<RunState>& state) {
    std::unique_lock lock(mutex);
    changed.wait(lock, [&] { return state->finished; });
  }

  std::shared_ptr<RunState> find(const std::string& id) {
    std::lock_guard lock(mutex);
    auto it = runs.find(id);
    return it == runs.end() ? nullptr : it->second;
  }

  fs::path run_dir(const std::string& id) const { return root / id; }

  bool published(const std::string& id) const { return fs::exists(run_dir(id) / "trace.json"); }

  // Answer for a submission: the trace when waited on, else the queue ticket.
  void answer(httplib::Response& res, const std::shared_ptr<RunState>& state, bool wait) {
    if (!wait) {
      json body{{"run_id", state->run_id}, {"status", "queued"}};
      if (!state->parent_run_id.empty()) body["parent_run_id"] = state->parent_run_id;
      reply(res, 200, body);
      return;
    }
    wait_for(state);
    if (!published(state->run_id)) {
      reply(res, 500, {{"error", state->error}, {"run_id", state->run_id}});
      return;
    }
    reply(res, 200, load_trace(run_dir(state->run_id)));
  }

  std::string require_id(const httplib::Request& req) {
    const std::string id = req.path_params.at("id");
    if (!valid_run_id(id)) throw HttpError{400, "InvalidArgument", "malformed run id"};
    return id;
  }

  void require_published(const std::string& id) {
    if (!published(id)) throw HttpError{404, "NotFound", "no run " + id};
  }

  template <class F>
  httplib::Server::Handler guarded(F body) {
    return [body](const httplib::Request& req, httplib::Response& res) {
      try {
        body(req, res);
      } catch (const HttpError& e) {
        reply(res, e.status, error_body(e.code, e.message));
      } catch (const Error& e) {
        reply(res, e.code() == ErrorCode::TraceWriteError || e.code() == ErrorCode::IoError ? 500 : 400,
              error_body(std::string(to_string(e.code())), e.detail()));
      } catch (const json::exception& e) {
        reply(res, 400, error_body("InvalidArgument", e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("InternalError", e.what()));
      }
    };
  }

  json summary(const std::string& id) {
    if (published(id)) {
      const json t = load_trace(run_dir(id));
      return {{"run_id", id},
              {"status", t.value("status", "unknown")},
              {"instruction", t.value("instruction", "")},
              {"parent_run_id", t.value("parent_run_id", json(nullptr))},
              {"started_at", t.value("started_at", "")},
              {"failed_stage", t.value("failed_stage", json(nullptr))}};
    }
    auto state = find(id);
    std::lock_guard lock(mutex);
    return {{"run_id", id},
            {"status", state->status},
            {"instruction", state->instruction},
            {"parent_run_id", state->parent_run_id.empty() ? json(nullptr) : json(state->parent_run_id)},
            {"started_at", ""},
            {"failed_stage", nullptr}};
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty())
        reply(res, res.status, error_body(res.status == 404 ? "NotFound" : "HttpError", "no such route"));
    });

    server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}, {"api", "v1"}});
    });

    server.Post("/v1/runs", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string instruction;
      std::optional<std::uint64_t> seed;
      Observation obs;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("instruction")) throw HttpError{400, "InvalidArgument", "upload is missing \"instruction\""};
        instruction = req.get_file_value("instruction").content;
        if (req.has_file("seed")) seed = parse_seed(json(req.get_file_value("seed").content));
        obs = observation_from_upload(req);
      } else {
        const json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object())
          throw HttpError{400, "InvalidArgument", "body must be a JSON object"};
        if (!body.contains("instruction") || !body.at("instruction").is_string())
          throw HttpError{400, "InvalidArgument", "\"instruction\" must be a string"};
        instruction = body.at("instruction").get<std::string>();
        if (body.contains("seed")) seed = parse_seed(body.at("seed"));
        obs = observation_from_request(body);
      }
      obs.validate();
      PipelineConfig run_cfg = cfg;
      if (seed) run_cfg.seed = *seed;
      auto shared_obs = std::make_shared<Observation>(std::move(obs));
      auto state = submit(instruction, "", [=](const RunOptions& ro) {
        return run_pipeline(instruction, *shared_obs, run_cfg, ro);
      });
      answer(res, state, flag(req, "wait"));
    }));

    server.Get("/v1/runs", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::set<std::string> ids;
      for (const auto& entry : fs::directory_iterator(root)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name[0] != '.' && fs::exists(entry.path() / "trace.json")) ids.insert(name);
      }
      {
        std::lock_guard lock(mutex);
        for (const auto& [id, state] : runs) ids.insert(id);
      }
      json list = json::array();
      for (const auto& id : ids) list.push_back(summary(id));
      reply(res, 200, {{"runs", list}});
    }));

    server.Get("/v1/runs/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = require_id(req);
      if (published(id)) {
        reply(res, 200, load_trace(run_dir(id)));
        return;
      }
      auto state = find(id);
      if (!state) throw HttpError{404, "NotFound", "no run " + id};
      std::lock_guard lock(mutex);
      if (state->finished && !state->error.is_null()) {
        reply(res, 500, {{"error", state->error}, {"run_id", id}});
        return;
      }
      reply(res, 200, {{"run_id", id}, {"status", state->status}, {"events", state->events}});
    }));

    const std::vector<std::tuple<std::string, std::string, std::string>> artifacts{
        {"mask", "mask.png", "image/png"},
        {"cloud", "cloud.json", "application/json"},
        {"grasps", "grasps.json", "application/json"},
        {"rgb", "rgb.png", "image/png"},
        {"depth", "depth.png", "image/png"}};
    for (const auto& [route, file, type] : artifacts) {
      server.Get("/v1/runs/:id/" + route,
                 guarded([this, route = route, file = file, type = type](const httplib::Request& req,
                                                                          httplib::Response& res) {
                   const std::string id = require_id(req);
                   require_published(id);
                   const fs::path path = run_dir(id) / file;
                   if (!fs::exists(path)) throw HttpError{404, "NotFound", "run " + id + " has no " + route};
                   res.set_content(read_file(path), type);
                 }));
    }

    server.Post("/v1/runs/:id/override", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = require_id(req);
      require_published(id);
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("part") || !body.at("part").is_string())
        throw HttpError{400, "InvalidArgument", "body must be {\"part\": <name>}"};
      const std::string part = body.at("part").get<std::string>();
      const json parent = load_trace(run_dir(id));
      const auto reasoned = reasoning_from_trace(parent);
      if (!reasoned) throw HttpError{409, "ReasoningUnavailable", "run " + id + " has no completed reasoning stage"};
      PipelineConfig run_cfg = PipelineConfig::from_json(parent.at("config"));
      run_cfg.trace_dir = cfg.trace_dir;
      if (run_cfg.grounding.backend == "oracle") {
        if (const auto cls = parse_object_class(reasoned->object); cls && !part_index(*cls, part)) {
          std::string names;
          for (const auto& p : class_parts(*cls)) names += (names.empty() ? "" : ", ") + p.name;
          throw HttpError{400, "PartNotFound", "a " + reasoned->object + " has no part '" + part + "' (parts: " + names + ")"};
        }
      }
      auto obs = std::make_shared<Observation>(load_observation_files(run_dir(id)));
      auto state = submit(parent.value("instruction", ""), id, [=](const RunOptions& ro) {
        return rerun_with_part(parent, *obs, part, run_cfg, ro);
      });
      answer(res, state, flag(req, "wait"));
    }));

    server.Get("/v1/runs/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = require_id(req);
      auto state = find(id);
      if (!state) {
        require_published(id);
        // A run from an earlier session: replay its stages.
        const json trace = load_trace(run_dir(id));
        std::string body;
        for (const auto& s : trace.at("stages"))
          body += sse("stage", {{"run_id", id},
                                {"stage", s.at("name")},
                                {"status", s.at("status")},
                                {"message", s.contains("error") ? s.at("error").at("message") : json("")}});
        body += sse("end", {{"run_id", id}, {"status", trace.value("status", "unknown")}});
        res.set_content(body, "text/event-stream");
        return;
      }
      res.set_header("Cache-Control", "no-cache");
      auto sent = std::make_shared<std::size_t>(0);
      res.set_chunked_content_provider("text/event-stream", [this, state, sent](std::size_t, httplib::DataSink& sink) {
        std::string chunk;
        bool done = false;
        {
          std::unique_lock lock(mutex);
          changed.wait_for(lock, std::chrono::seconds(15),
                           [&] { return stopping || state->finished || state->events.size() > *sent; });
          for (; *sent < state->events.size(); ++*sent) chunk += sse("stage", state->events[*sent]);
          if (state->finished || stopping) {
            chunk += sse("end", {{"run_id", state->run_id}, {"status", state->status}});
            done = true;
          }
        }
        if (chunk.empty()) chunk = ": keepalive\n\n";
        if (!sink.write(chunk.data(), chunk.size())) return false;
        if (done) sink.done();
        return true;
      });
    }));
  }
};

PipelineService::PipelineService(PipelineConfig cfg, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(options))) {}

PipelineService::~PipelineService() = default;

int PipelineService::bind() {
  auto& s = *impl_;
  if (s.bound_port >= 0) return s.bound_port;
  s.bound_port = s.options.port == 0 ? s.server.bind_to_any_port(s.options.host)
                                     : (s.server.bind_to_port(s.options.host, s.options.port) ? s.options.port : -1);
  if (s.bound_port < 0)
    throw Error(ErrorCode::IoError, "cannot bind " + s.options.host + ":" + std::to_string(s.options.port));
  return s.bound_port;
}

void PipelineService::listen() {
  bind();
  impl_->server.listen_after_bind();
}

int PipelineService::start() {
  const int p = bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return p;
}

void PipelineService::stop() {
  impl_->server.stop();
  if (impl_->listener.joinable()) impl_->listener.join();
}

int PipelineService::port() const { return impl_->bound_port; }

}  // namespace taskgrasp
