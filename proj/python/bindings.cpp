#include "taskgrasp/error.hpp"
#include "taskgrasp/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

namespace py = pybind11;
using namespace taskgrasp;
using nlohmann::json;

namespace {

py::object to_py(const json& doc) { return py::module_::import("json").attr("loads")(doc.dump()); }

json from_py(const py::handle& obj) {
  const std::string text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  return json::parse(text);
}

using u8_array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using f64_array = py::array_t<double, py::array::c_style | py::array::forcecast>;

CameraIntrinsics intrinsics_from(const py::dict& d) {
  CameraIntrinsics in;
  in.fx = d["fx"].cast<double>();
  in.fy = d["fy"].cast<double>();
  in.cx = d["cx"].cast<double>();
  in.cy = d["cy"].cast<double>();
  in.width = d["width"].cast<int>();
  in.height = d["height"].cast<int>();
  in.validate();
  return in;
}

py::dict intrinsics_to(const CameraIntrinsics& in) {
  py::dict d;
  d["fx"] = in.fx;
  d["fy"] = in.fy;
  d["cx"] = in.cx;
  d["cy"] = in.cy;
  d["width"] = in.width;
  d["height"] = in.height;
  return d;
}

ColorImage color_from(const u8_array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorCode::ShapeMismatch, "rgb must be an HxWx3 uint8 array");
  ColorImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(img.data.data(), a.data(), img.data.size());
  return img;
}

py::array color_to(const ColorImage& img) {
  py::array_t<std::uint8_t> a({img.height, img.width, 3});
  std::memcpy(a.mutable_data(), img.data.data(), img.data.size());
  return a;
}

DepthImage depth_from(const f64_array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "depth must be an HxW array");
  DepthImage d(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(d.data.data(), a.data(), d.data.size() * sizeof(double));
  return d;
}

py::array depth_to(const DepthImage& d) {
  py::array_t<double> a({d.height, d.width});
  std::memcpy(a.mutable_data(), d.data.data(), d.data.size() * sizeof(double));
  return a;
}

PixelMask mask_from(const u8_array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "mask must be an HxW array");
  PixelMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  const auto* src = a.data();
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = src[i] ? 1 : 0;
  return m;
}

py::array points_to(const std::vector<Vec3>& pts) {
  py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  auto* dst = a.mutable_data();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) dst[i * 3 + k] = pts[i][k];
  return a;
}

Vec3 vec_from(const py::handle& h) {
  const auto v = h.cast<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::InvalidArgument, "expected three coordinates");
  return {v[0], v[1], v[2]};
}

BoundingBox box_from(const py::handle& h) {
  const auto v = h.cast<std::vector<int>>();
  if (v.size() != 4) throw Error(ErrorCode::InvalidArgument, "box is [u_min, v_min, u_max, v_max]");
  return {v[0], v[1], v[2], v[3]};
}

// Without an explicit config nothing is written to disk.
PipelineConfig config_from(const py::object& cfg) {
  PipelineConfig c;
  if (cfg.is_none()) c.trace_dir.clear();
  else c = PipelineConfig::from_json(from_py(cfg));
  c.validate();
  return c;
}

SceneDescription scene_from(const py::object& scene) { return scene_from_json(from_py(scene)); }

std::vector<ObjectClass> classes_from(const std::vector<std::string>& names) {
  std::vector<ObjectClass> out;
  for (const auto& n : names) {
    const auto c = parse_object_class(n);
    if (!c) throw Error(ErrorCode::InvalidArgument, "unknown object class '" + n + "'");
    out.push_back(*c);
  }
  return out;
}

py::dict observation_to(const Observation& o) {
  py::dict d;
  d["rgb"] = color_to(o.rgb);
  d["depth"] = depth_to(o.depth);
  if (o.labels) {
    py::array_t<std::uint16_t> l({o.labels->height, o.labels->width});
    std::memcpy(l.mutable_data(), o.labels->data.data(), o.labels->data.size() * sizeof(std::uint16_t));
    d["labels"] = l;
  }
  d["intrinsics"] = intrinsics_to(o.intrinsics);
  d["camera_pose"] = to_py(pose_to_json(o.camera_pose));
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Task-oriented grasping pipeline";

  // Subclass of RuntimeError carrying .code (the error name) and .detail.
  static py::handle error_type =
      PyErr_NewException("taskgrasp._core.TaskgraspError", PyExc_RuntimeError, nullptr);
  m.attr("TaskgraspError") = error_type;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(py::str(e.what()));
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("detail") = e.detail();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("object_classes", [] {
    std::vector<std::string> out;
    for (auto c : kAllClasses) out.emplace_back(to_string(c));
    return out;
  });
  m.def("class_parts", [](const std::string& name) {
    const auto c = classes_from({name}).front();
    py::list parts;
    for (const auto& p : class_parts(c)) {
      py::dict d;
      d["name"] = p.name;
      d["affordances"] = p.affordances;
      parts.append(d);
    }
    return parts;
  });

  m.def("default_config", [] { return to_py(PipelineConfig{}.to_json()); });
  m.def("default_intrinsics", [] { return intrinsics_to(default_intrinsics()); });

  m.def(
      "generate_scene",
      [](const std::vector<std::string>& classes, std::uint64_t seed) {
        return to_py(scene_to_json(generate_scene(classes_from(classes), seed)));
      },
      py::arg("classes"), py::arg("seed") = 0);

  m.def(
      "render",
      [](const py::object& scene, double camera_height) {
        const auto s = scene_from(scene);
        return observation_to(
            Observation::from_render(render_observation(s, default_intrinsics(), top_down_camera(camera_height)), s));
      },
      py::arg("scene"), py::arg("camera_height") = 0.65);

  m.def(
      "load_observation",
      [](const std::string& dir) { return observation_to(load_observation_files(dir)); }, py::arg("dir"));

  m.def(
      "deproject_pixel",
      [](double u, double v, double depth, const py::dict& intr) {
        const Vec3 p = deproject_pixel(u, v, depth, intrinsics_from(intr));
        return std::vector<double>{p.x(), p.y(), p.z()};
      },
      py::arg("u"), py::arg("v"), py::arg("depth"), py::arg("intrinsics"));

  m.def(
      "project_point",
      [](const py::object& p, const py::dict& intr) {
        const Vec3 r = project_point(vec_from(p), intrinsics_from(intr));
        return std::vector<double>{r.x(), r.y(), r.z()};
      },
      py::arg("point"), py::arg("intrinsics"));

  m.def(
      "depth_to_cloud",
      [](const f64_array& depth, const py::dict& intr, const py::object& mask) {
        const DepthImage d = depth_from(depth);
        const PixelMask mk = mask.is_none() ? full_mask(d.width, d.height) : mask_from(mask.cast<u8_array>());
        return points_to(depth_to_cloud(d, intrinsics_from(intr), mk).points);
      },
      py::arg("depth"), py::arg("intrinsics"), py::arg("mask") = py::none());

  m.def(
      "mask_image",
      [](const u8_array& rgb, const py::object& box) { return color_to(mask_image(color_from(rgb), box_from(box))); },
      py::arg("rgb"), py::arg("box"));

  m.def(
      "select_grasp",
      [](const py::list& grasps, const py::object& centroid, double epsilon) {
        CandidateSet set;
        for (const auto& g : grasps) set.grasps.push_back(grasp_from_json(from_py(g)));
        const auto r = select_grasp(set, vec_from(centroid), epsilon);
        py::list ranking;
        for (const auto& x : r.ranking) ranking.append(py::make_tuple(x.index, x.objective));
        py::dict d;
        d["winner_index"] = r.winner_index;
        d["winner"] = to_py(grasp_to_json(r.winner));
        d["ranking"] = ranking;
        return d;
      },
      py::arg("grasps"), py::arg("centroid"), py::arg("epsilon") = 1e-4);

  m.def(
      "validate_grasp_pose",
      [](const py::object& grasp, double max_width) {
        std::vector<std::string> out;
        for (auto v : validate_grasp_pose(grasp_from_json(from_py(grasp)), max_width).violations)
          out.push_back(to_string(v));
        return out;
      },
      py::arg("grasp"), py::arg("max_width"));

  m.def(
      "parse_reasoning_response",
      [](const std::string& text) -> py::object {
        const auto outcome = parse_reasoning_response(text);
        if (const auto* f = std::get_if<ParseFailure>(&outcome))
          throw Error(ErrorCode::MalformedReasoning, f->field + ": " + f->message);
        const auto& r = std::get<ReasoningResult>(outcome);
        py::dict d;
        d["task"] = r.task;
        d["object"] = r.object;
        d["part"] = r.part;
        d["affordance"] = r.affordance;
        d["rationale"] = r.rationale;
        return d;
      },
      py::arg("text"));

  m.def(
      "format_reasoning_response",
      [](const py::dict& d) {
        ReasoningResult r;
        r.task = d["task"].cast<std::string>();
        r.object = d["object"].cast<std::string>();
        r.part = d["part"].cast<std::string>();
        r.affordance = d["affordance"].cast<std::string>();
        r.rationale = d["rationale"].cast<std::vector<std::string>>();
        return format_reasoning_response(r);
      },
      py::arg("result"));

  m.def(
      "run_pipeline",
      [](const std::string& instruction, const py::object& scene, const py::object& obs_dir, const py::object& config) {
        const PipelineConfig cfg = config_from(config);
        Observation obs;
        if (!obs_dir.is_none()) {
          obs = load_observation_files(obs_dir.cast<std::string>());
        } else if (!scene.is_none()) {
          const auto s = scene_from(scene);
          obs = Observation::from_render(render_observation(s, default_intrinsics(), top_down_camera()), s);
        } else {
          throw Error(ErrorCode::InvalidArgument, "give a scene or an observation directory");
        }
        RunTrace t;
        {
          py::gil_scoped_release release;
          t = run_pipeline(instruction, obs, cfg);
        }
        return to_py(t.to_json());
      },
      py::arg("instruction"), py::arg("scene") = py::none(), py::arg("obs_dir") = py::none(),
      py::arg("config") = py::none());

  m.def(
      "evaluate_gsr",
      [](const std::vector<std::string>& classes, const std::string& scenario, int runs_per_class,
         std::uint64_t base_seed, const py::object& config) {
        const PipelineConfig cfg = config_from(config);
        const auto sc = parse_scenario(scenario);
        if (!sc) throw Error(ErrorCode::InvalidArgument, "scenario is single or clutter");
        GsrReport report;
        {
          py::gil_scoped_release release;
          report = evaluate_gsr(classes_from(classes), *sc, runs_per_class, cfg, base_seed);
        }
        py::dict d = to_py(report.to_json());
        d["table"] = report.to_table();
        return d;
      },
      py::arg("classes"), py::arg("scenario") = "clutter", py::arg("runs_per_class") = 1, py::arg("base_seed") = 0,
      py::arg("config") = py::none());
}
