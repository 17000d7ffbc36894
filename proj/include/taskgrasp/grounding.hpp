#pragma once

#include "taskgrasp/image.hpp"
#include "taskgrasp/scene.hpp"

#include <json.hpp>

#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace taskgrasp {

struct Detection {
  BoundingBox box;
  double confidence = 0.0;
  long long area = 0;  // pixel support used for tie-breaks (box area when unknown)
  int object_id = 0;   // 0 when the backend has no instance ids
};

struct PartQuery {
  std::string object;  // located object label, lets instance-aware backends stay on it
  std::string part;
  std::string affordance;
};

struct PartSegment {
  PixelMask mask;
  double confidence = 0.0;
};

class GroundingBackend {
 public:
  virtual ~GroundingBackend() = default;
  /// Every detection of `label`; empty when there is none.
  virtual std::vector<Detection> detect(const ColorImage& image, const std::string& label) = 0;
  /// Part masks on the masked image; the caller clips them to `box`.
  virtual std::vector<PartSegment> segment(const ColorImage& masked_image, const BoundingBox& box,
                                           const PartQuery& query) = 0;
  virtual std::string name() const = 0;
};

/// Ground truth from a rendered synthetic scene. Runs at native resolution
/// and ignores the image content.
class OracleGroundingBackend final : public GroundingBackend {
 public:
  OracleGroundingBackend(LabelMap labels, const SceneDescription& scene);
  std::vector<Detection> detect(const ColorImage& image, const std::string& label) override;
  std::vector<PartSegment> segment(const ColorImage& masked_image, const BoundingBox& box,
                                   const PartQuery& query) override;
  std::string name() const override { return "oracle"; }

 private:
  struct Entry {
    int id;
    ObjectClass object_class;
  };
  LabelMap labels_;
  std::vector<Entry> objects_;
};

struct RemoteGroundingConfig {
  std::string base_url;
  std::chrono::milliseconds timeout{30000};
  int input_size = 224;
};

/// Client for an open-vocabulary part segmenter.
///
///   POST {base_url}/v1/detect  {"version": 1, "image": <base64 PNG>, "query": "mug"}
///   -> {"detections": [{"box": [u_min, v_min, u_max, v_max], "confidence": c}, ...]}
///   POST {base_url}/v1/segment {"version": 1, "image": <base64 PNG>, "query": "handle for grasp"}
///   -> {"masks": [{"rle": {"size": [h, w], "counts": [...]}, "confidence": c}, ...]}
///
/// Images are sent at input_size x input_size; boxes and masks come back in
/// that frame and are rescaled (masks nearest-neighbour).
class RemoteGroundingBackend final : public GroundingBackend {
 public:
  explicit RemoteGroundingBackend(RemoteGroundingConfig config);
  std::vector<Detection> detect(const ColorImage& image, const std::string& label) override;
  std::vector<PartSegment> segment(const ColorImage& masked_image, const BoundingBox& box,
                                   const PartQuery& query) override;
  std::string name() const override { return "remote"; }

 private:
  RemoteGroundingConfig config_;
};

/// Uncompressed COCO-style run lengths: column-major, alternating runs starting with zeros.
nlohmann::json encode_rle(const PixelMask& mask);
PixelMask decode_rle(const nlohmann::json& rle);

/// Scales a box from a (from_w, from_h) frame to (to_w, to_h), rounding outwards and clamping.
BoundingBox rescale_box(const BoundingBox& box, int from_w, int from_h, int to_w, int to_h);

/// Remote part query text.
std::string part_query_text(const PartQuery& q);

/// Best detection: highest confidence, then larger area, then lower object id.
/// Throws ObjectNotFound when the backend finds nothing.
BoundingBox locate_object(const ColorImage& image, const std::string& object_label, GroundingBackend& backend);

/// Copies pixels inside the box, zeroes every channel outside it.
ColorImage mask_image(const ColorImage& image, const BoundingBox& box);

/// Part mask clipped to the box. Throws PartNotFound when nothing remains.
PixelMask ground_affordance(const ColorImage& masked_image, const BoundingBox& box, const PartQuery& query,
                            GroundingBackend& backend);

struct GroundingOutput {
  BoundingBox box;
  PixelMask mask;
};

/// locate_object -> mask_image -> ground_affordance.
GroundingOutput ground(const ColorImage& image, const std::string& object, const std::string& part,
                       const std::string& affordance, GroundingBackend& backend);

}  // namespace taskgrasp
