#pragma once

#include "taskgrasp/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace taskgrasp {

/// 8-bit RGB, row-major, interleaved.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t* at(int u, int v) { return data.data() + (static_cast<std::size_t>(v) * width + u) * 3; }
  const std::uint8_t* at(int u, int v) const { return data.data() + (static_cast<std::size_t>(v) * width + u) * 3; }
  bool operator==(const ColorImage&) const = default;
};

/// Metric depth; 0 means no return.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  static constexpr double kMaxDepth = 20.0;

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  double at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  static bool is_valid(double d) { return d > 0.0 && d <= kMaxDepth; }
  bool operator==(const DepthImage&) const = default;
};

struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  PixelMask() = default;
  PixelMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool test(int u, int v) const { return bits[static_cast<std::size_t>(v) * width + u] != 0; }
  void set(int u, int v, bool on = true) { bits[static_cast<std::size_t>(v) * width + u] = on ? 1 : 0; }
  std::size_t popcount() const;
  /// Tight bounds of the set bits; empty box when nothing is set.
  BoundingBox bounds() const;
  bool operator==(const PixelMask&) const = default;
};

/// Per-pixel (object_id << 8 | part_index); 0 is background.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> data;

  LabelMap() = default;
  LabelMap(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

  std::uint16_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  std::uint16_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  static std::uint16_t encode(int object_id, int part_index) {
    return static_cast<std::uint16_t>(object_id * 256 + part_index);
  }
  static int object_of(std::uint16_t label) { return label >> 8; }
  static int part_of(std::uint16_t label) { return label & 0xff; }
  bool operator==(const LabelMap&) const = default;
};

/// One point per pixel whose mask bit is set and whose depth is valid, row-major.
PointCloud depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& intr, const PixelMask& mask);

PixelMask full_mask(int width, int height);

// File formats: RGB is an 8-bit 3-channel PNG, depth a 16-bit PNG in millimeters,
// labels a 16-bit PNG, masks an 8-bit PNG (0 / 255).
void write_color_png(const std::filesystem::path& path, const ColorImage& img);
ColorImage read_color_png(const std::filesystem::path& path);
void write_depth_png(const std::filesystem::path& path, const DepthImage& depth);
DepthImage read_depth_png(const std::filesystem::path& path);
void write_label_png(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_label_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const PixelMask& mask);
PixelMask read_mask_png(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_color_png(const ColorImage& img);
std::vector<std::uint8_t> encode_mask_png(const PixelMask& mask);
ColorImage decode_color_png(const std::string& bytes);
DepthImage decode_depth_png(const std::string& bytes);

ColorImage resize_color(const ColorImage& img, int width, int height);
PixelMask resize_mask_nearest(const PixelMask& mask, int width, int height);

/// Key-value text: one "key = value" per line, '#' starts a comment.
std::string format_intrinsics(const CameraIntrinsics& intr);
CameraIntrinsics parse_intrinsics(const std::string& text);
void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

}  // namespace taskgrasp
