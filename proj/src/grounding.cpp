#include "taskgrasp/grounding.hpp"

#include "http_client.hpp"
#include "taskgrasp/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace taskgrasp {

using nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool better(const Detection& a, const Detection& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.area != b.area) return a.area > b.area;
  return a.object_id < b.object_id;
}

double clamp_confidence(double c) { return std::isfinite(c) ? std::clamp(c, 0.0, 1.0) : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Oracle

OracleGroundingBackend::OracleGroundingBackend(LabelMap labels, const SceneDescription& scene)
    : labels_(std::move(labels)) {
  for (const auto& o : scene.objects) objects_.push_back({o.id, o.object_class});
}

std::vector<Detection> OracleGroundingBackend::detect(const ColorImage&, const std::string& label) {
  const auto cls = parse_object_class(label);
  if (!cls) return {};
  std::map<int, Detection> found;
  for (const auto& e : objects_)
    if (e.object_class == *cls) found[e.id] = Detection{{labels_.width, labels_.height, 0, 0}, 1.0, 0, e.id};
  if (found.empty()) return {};
  for (int v = 0; v < labels_.height; ++v)
    for (int u = 0; u < labels_.width; ++u) {
      const auto l = labels_.at(u, v);
      if (!l) continue;
      auto it = found.find(LabelMap::object_of(l));
      if (it == found.end()) continue;
      auto& d = it->second;
      d.box.u_min = std::min(d.box.u_min, u);
      d.box.v_min = std::min(d.box.v_min, v);
      d.box.u_max = std::max(d.box.u_max, u + 1);
      d.box.v_max = std::max(d.box.v_max, v + 1);
      ++d.area;
    }
  std::vector<Detection> out;
  for (auto& [id, d] : found)
    if (d.area > 0) out.push_back(d);
  return out;
}

std::vector<PartSegment> OracleGroundingBackend::segment(const ColorImage&, const BoundingBox& box,
                                                         const PartQuery& query) {
  const auto cls = parse_object_class(query.object);
  if (!cls) return {};
  const auto part = part_index(*cls, lower(query.part));
  if (!part) return {};
  // The instance is the object of that class with the most pixels in the box.
  std::map<int, long long> support;
  for (const auto& e : objects_)
    if (e.object_class == *cls) support[e.id] = 0;
  for (int v = box.v_min; v < box.v_max; ++v)
    for (int u = box.u_min; u < box.u_max; ++u) {
      auto it = support.find(LabelMap::object_of(labels_.at(u, v)));
      if (it != support.end() && labels_.at(u, v)) ++it->second;
    }
  int instance = 0;
  long long best = 0;
  for (const auto& [id, n] : support)
    if (n > best) best = n, instance = id;
  if (!instance) return {};
  const std::uint16_t want = LabelMap::encode(instance, *part);
  PartSegment seg{PixelMask(labels_.width, labels_.height), 1.0};
  bool any = false;
  for (int v = box.v_min; v < box.v_max; ++v)
    for (int u = box.u_min; u < box.u_max; ++u)
      if (labels_.at(u, v) == want) seg.mask.set(u, v), any = true;
  if (!any) return {};
  return {std::move(seg)};
}

// ---------------------------------------------------------------------------
// Remote

json encode_rle(const PixelMask& mask) {
  json counts = json::array();
  std::uint8_t current = 0;
  long long run = 0;
  for (int u = 0; u < mask.width; ++u)
    for (int v = 0; v < mask.height; ++v) {
      const std::uint8_t bit = mask.test(u, v) ? 1 : 0;
      if (bit != current) {
        counts.push_back(run);
        run = 0;
        current = bit;
      }
      ++run;
    }
  counts.push_back(run);
  return {{"size", {mask.height, mask.width}}, {"counts", counts}};
}

PixelMask decode_rle(const json& rle) {
  try {
    const int h = rle.at("size").at(0).get<int>();
    const int w = rle.at("size").at(1).get<int>();
    if (h < 0 || w < 0) throw Error(ErrorCode::BackendUnavailable, "negative mask size");
    PixelMask mask(w, h);
    const long long total = static_cast<long long>(w) * h;
    long long pos = 0;
    bool on = false;
    for (const auto& c : rle.at("counts")) {
      const long long n = c.get<long long>();
      if (n < 0 || pos + n > total) throw Error(ErrorCode::BackendUnavailable, "run lengths exceed the mask size");
      if (on)
        for (long long i = pos; i < pos + n; ++i) mask.set(static_cast<int>(i / h), static_cast<int>(i % h));
      pos += n;
      on = !on;
    }
    if (pos != total) throw Error(ErrorCode::BackendUnavailable, "run lengths do not cover the mask");
    return mask;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed run-length mask: ") + e.what());
  }
}

BoundingBox rescale_box(const BoundingBox& box, int from_w, int from_h, int to_w, int to_h) {
  const double sx = static_cast<double>(to_w) / from_w;
  const double sy = static_cast<double>(to_h) / from_h;
  BoundingBox b;
  b.u_min = std::clamp(static_cast<int>(std::floor(box.u_min * sx)), 0, to_w);
  b.v_min = std::clamp(static_cast<int>(std::floor(box.v_min * sy)), 0, to_h);
  b.u_max = std::clamp(static_cast<int>(std::ceil(box.u_max * sx)), b.u_min, to_w);
  b.v_max = std::clamp(static_cast<int>(std::ceil(box.v_max * sy)), b.v_min, to_h);
  return b;
}

std::string part_query_text(const PartQuery& q) { return q.part + " for " + q.affordance; }

RemoteGroundingBackend::RemoteGroundingBackend(RemoteGroundingConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw Error(ErrorCode::ConfigError, "remote grounding needs a base_url");
  if (config_.input_size < 1) throw Error(ErrorCode::ConfigError, "grounding input size must be positive");
  detail::split_url(config_.base_url);
}

std::vector<Detection> RemoteGroundingBackend::detect(const ColorImage& image, const std::string& label) {
  const int n = config_.input_size;
  const ColorImage small = resize_color(image, n, n);
  const json request{{"version", 1}, {"image", detail::base64_encode(encode_color_png(small))}, {"query", label}};
  const json reply = detail::post_json(config_.base_url, "/v1/detect", request, config_.timeout, {});
  std::vector<Detection> out;
  try {
    for (const auto& d : reply.at("detections")) {
      const auto& b = d.at("box");
      BoundingBox box{static_cast<int>(std::floor(b.at(0).get<double>())),
                      static_cast<int>(std::floor(b.at(1).get<double>())),
                      static_cast<int>(std::ceil(b.at(2).get<double>())),
                      static_cast<int>(std::ceil(b.at(3).get<double>()))};
      box.u_min = std::clamp(box.u_min, 0, n);
      box.v_min = std::clamp(box.v_min, 0, n);
      box.u_max = std::clamp(box.u_max, box.u_min, n);
      box.v_max = std::clamp(box.v_max, box.v_min, n);
      Detection det;
      det.box = rescale_box(box, n, n, image.width, image.height);
      det.confidence = clamp_confidence(d.value("confidence", 0.0));
      det.area = det.box.area();
      if (!det.box.empty()) out.push_back(det);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed detection reply: ") + e.what());
  }
  return out;
}

std::vector<PartSegment> RemoteGroundingBackend::segment(const ColorImage& masked_image, const BoundingBox&,
                                                         const PartQuery& query) {
  const int n = config_.input_size;
  const ColorImage small = resize_color(masked_image, n, n);
  const json request{{"version", 1},
                     {"image", detail::base64_encode(encode_color_png(small))},
                     {"query", part_query_text(query)}};
  const json reply = detail::post_json(config_.base_url, "/v1/segment", request, config_.timeout, {});
  std::vector<PartSegment> out;
  try {
    for (const auto& m : reply.at("masks")) {
      PixelMask mask = decode_rle(m.at("rle"));
      if (mask.width != n || mask.height != n)
        throw Error(ErrorCode::BackendUnavailable, "segment mask size differs from the request size");
      out.push_back({resize_mask_nearest(mask, masked_image.width, masked_image.height),
                     clamp_confidence(m.value("confidence", 0.0))});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed segment reply: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------

BoundingBox locate_object(const ColorImage& image, const std::string& object_label, GroundingBackend& backend) {
  if (image.empty()) throw Error(ErrorCode::InvalidArgument, "grounding image is empty");
  auto found = backend.detect(image, object_label);
  std::erase_if(found, [&](const Detection& d) { return d.box.empty() || !d.box.within(image.width, image.height); });
  if (found.empty()) throw Error(ErrorCode::ObjectNotFound, "no '" + object_label + "' in the image");
  return std::min_element(found.begin(), found.end(), better)->box;
}

ColorImage mask_image(const ColorImage& image, const BoundingBox& box) {
  if (!box.within(image.width, image.height))
    throw Error(ErrorCode::OutOfBounds, "box exceeds the image bounds");
  ColorImage out(image.width, image.height);
  if (box.empty()) return out;
  const std::size_t row_bytes = static_cast<std::size_t>(box.u_max - box.u_min) * 3;
  for (int v = box.v_min; v < box.v_max; ++v) std::copy_n(image.at(box.u_min, v), row_bytes, out.at(box.u_min, v));
  return out;
}

PixelMask ground_affordance(const ColorImage& masked_image, const BoundingBox& box, const PartQuery& query,
                            GroundingBackend& backend) {
  if (!box.within(masked_image.width, masked_image.height))
    throw Error(ErrorCode::OutOfBounds, "box exceeds the image bounds");
  auto segments = backend.segment(masked_image, box, query);
  const PartSegment* best = nullptr;
  std::size_t best_area = 0;
  PixelMask clipped_best;
  for (const auto& s : segments) {
    if (s.mask.width != masked_image.width || s.mask.height != masked_image.height) continue;
    PixelMask clipped(masked_image.width, masked_image.height);
    for (int v = box.v_min; v < box.v_max; ++v)
      for (int u = box.u_min; u < box.u_max; ++u)
        if (s.mask.test(u, v)) clipped.set(u, v);
    const std::size_t area = clipped.popcount();
    if (area == 0) continue;
    if (!best || s.confidence > best->confidence || (s.confidence == best->confidence && area > best_area)) {
      best = &s;
      best_area = area;
      clipped_best = std::move(clipped);
    }
  }
  if (!best)
    throw Error(ErrorCode::PartNotFound, "no '" + query.part + "' of the " + query.object + " inside the box");
  return clipped_best;
}

GroundingOutput ground(const ColorImage& image, const std::string& object, const std::string& part,
                       const std::string& affordance, GroundingBackend& backend) {
  GroundingOutput out;
  out.box = locate_object(image, object, backend);
  const ColorImage masked = mask_image(image, out.box);
  out.mask = ground_affordance(masked, out.box, {object, part, affordance}, backend);
  return out;
}

}  // namespace taskgrasp
