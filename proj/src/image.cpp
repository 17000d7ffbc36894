#include "taskgrasp/image.hpp"

#include "taskgrasp/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace taskgrasp {

std::size_t PixelMask::popcount() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

BoundingBox PixelMask::bounds() const {
  BoundingBox box{width, height, 0, 0};
  bool any = false;
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u)
      if (test(u, v)) {
        any = true;
        box.u_min = std::min(box.u_min, u);
        box.v_min = std::min(box.v_min, v);
        box.u_max = std::max(box.u_max, u + 1);
        box.v_max = std::max(box.v_max, v + 1);
      }
  return any ? box : BoundingBox{};
}

PixelMask full_mask(int width, int height) {
  PixelMask m(width, height);
  std::fill(m.bits.begin(), m.bits.end(), 1);
  return m;
}

PointCloud depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& intr, const PixelMask& mask) {
  if (mask.width != depth.width || mask.height != depth.height)
    throw Error(ErrorCode::ShapeMismatch, "mask and depth dimensions differ");
  if (intr.width != depth.width || intr.height != depth.height)
    throw Error(ErrorCode::ShapeMismatch, "intrinsics and depth dimensions differ");
  PointCloud cloud;
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      if (mask.test(u, v) && DepthImage::is_valid(d)) cloud.points.push_back(deproject_pixel(u, v, d, intr));
    }
  return cloud;
}

namespace {

void write_mat(const std::filesystem::path& path, const cv::Mat& mat) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

cv::Mat read_mat(const std::filesystem::path& path, int flags) {
  cv::Mat mat = cv::imread(path.string(), flags);
  if (mat.empty()) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return mat;
}

cv::Mat to_bgr(const ColorImage& img) {
  cv::Mat mat(img.height, img.width, CV_8UC3);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const auto* px = img.at(u, v);
      mat.at<cv::Vec3b>(v, u) = cv::Vec3b(px[2], px[1], px[0]);
    }
  return mat;
}

ColorImage from_bgr(const cv::Mat& mat) {
  if (mat.type() != CV_8UC3) throw Error(ErrorCode::IoError, "expected an 8-bit 3-channel image");
  ColorImage img(mat.cols, mat.rows);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u) {
      const auto& px = mat.at<cv::Vec3b>(v, u);
      auto* out = img.at(u, v);
      out[0] = px[2];
      out[1] = px[1];
      out[2] = px[0];
    }
  return img;
}

cv::Mat depth_to_mm(const DepthImage& depth) {
  cv::Mat mat(depth.height, depth.width, CV_16UC1);
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const double d = depth.at(u, v);
      const double mm = DepthImage::is_valid(d) ? std::round(d * 1000.0) : 0.0;
      mat.at<std::uint16_t>(v, u) = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
    }
  return mat;
}

DepthImage depth_from_mm(const cv::Mat& mat) {
  if (mat.type() != CV_16UC1) throw Error(ErrorCode::IoError, "expected a 16-bit single-channel depth image");
  DepthImage depth(mat.cols, mat.rows);
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) depth.at(u, v) = mat.at<std::uint16_t>(v, u) / 1000.0;
  return depth;
}

cv::Mat mask_to_mat(const PixelMask& mask) {
  cv::Mat mat(mask.height, mask.width, CV_8UC1);
  for (int v = 0; v < mask.height; ++v)
    for (int u = 0; u < mask.width; ++u) mat.at<std::uint8_t>(v, u) = mask.test(u, v) ? 255 : 0;
  return mat;
}

std::vector<std::uint8_t> encode(const cv::Mat& mat) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", mat, out)) throw Error(ErrorCode::IoError, "png encoding failed");
  return out;
}

cv::Mat decode(const std::string& bytes, int flags) {
  const std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat mat;
  try {
    mat = cv::imdecode(buf, flags);
  } catch (const cv::Exception&) {
  }
  if (mat.empty()) throw Error(ErrorCode::IoError, "cannot decode png payload");
  return mat;
}

}  // namespace

void write_color_png(const std::filesystem::path& path, const ColorImage& img) { write_mat(path, to_bgr(img)); }

ColorImage read_color_png(const std::filesystem::path& path) { return from_bgr(read_mat(path, cv::IMREAD_COLOR)); }

void write_depth_png(const std::filesystem::path& path, const DepthImage& depth) {
  write_mat(path, depth_to_mm(depth));
}

DepthImage read_depth_png(const std::filesystem::path& path) {
  return depth_from_mm(read_mat(path, cv::IMREAD_UNCHANGED));
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  cv::Mat mat(labels.height, labels.width, CV_16UC1);
  for (int v = 0; v < labels.height; ++v)
    for (int u = 0; u < labels.width; ++u) mat.at<std::uint16_t>(v, u) = labels.at(u, v);
  write_mat(path, mat);
}

LabelMap read_label_png(const std::filesystem::path& path) {
  const cv::Mat mat = read_mat(path, cv::IMREAD_UNCHANGED);
  if (mat.type() != CV_16UC1) throw Error(ErrorCode::IoError, "expected a 16-bit label image");
  LabelMap labels(mat.cols, mat.rows);
  for (int v = 0; v < labels.height; ++v)
    for (int u = 0; u < labels.width; ++u) labels.at(u, v) = mat.at<std::uint16_t>(v, u);
  return labels;
}

void write_mask_png(const std::filesystem::path& path, const PixelMask& mask) { write_mat(path, mask_to_mat(mask)); }

PixelMask read_mask_png(const std::filesystem::path& path) {
  const cv::Mat mat = read_mat(path, cv::IMREAD_GRAYSCALE);
  PixelMask mask(mat.cols, mat.rows);
  for (int v = 0; v < mask.height; ++v)
    for (int u = 0; u < mask.width; ++u) mask.set(u, v, mat.at<std::uint8_t>(v, u) >= 128);
  return mask;
}

std::vector<std::uint8_t> encode_color_png(const ColorImage& img) { return encode(to_bgr(img)); }
std::vector<std::uint8_t> encode_mask_png(const PixelMask& mask) { return encode(mask_to_mat(mask)); }
ColorImage decode_color_png(const std::string& bytes) { return from_bgr(decode(bytes, cv::IMREAD_COLOR)); }
DepthImage decode_depth_png(const std::string& bytes) { return depth_from_mm(decode(bytes, cv::IMREAD_UNCHANGED)); }

ColorImage resize_color(const ColorImage& img, int width, int height) {
  cv::Mat out;
  cv::resize(to_bgr(img), out, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  return from_bgr(out);
}

PixelMask resize_mask_nearest(const PixelMask& mask, int width, int height) {
  PixelMask out(width, height);
  for (int v = 0; v < height; ++v) {
    const int sv = std::min(mask.height - 1, static_cast<int>((v + 0.5) * mask.height / height));
    for (int u = 0; u < width; ++u) {
      const int su = std::min(mask.width - 1, static_cast<int>((u + 0.5) * mask.width / width));
      out.set(u, v, mask.test(su, sv));
    }
  }
  return out;
}

std::string format_intrinsics(const CameraIntrinsics& intr) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "fx = " << intr.fx << "\nfy = " << intr.fy << "\ncx = " << intr.cx << "\ncy = " << intr.cy
     << "\nwidth = " << intr.width << "\nheight = " << intr.height << "\n";
  return os.str();
}

CameraIntrinsics parse_intrinsics(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto sep = line.find_first_of("=:");
    if (sep == std::string::npos) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw Error(ErrorCode::ConfigError, "intrinsics line without separator: " + line);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, sep))] = trim(line.substr(sep + 1));
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::ConfigError, std::string("intrinsics missing field ") + key);
    return it->second;
  };
  CameraIntrinsics intr;
  try {
    intr.fx = std::stod(get("fx"));
    intr.fy = std::stod(get("fy"));
    intr.cx = std::stod(get("cx"));
    intr.cy = std::stod(get("cy"));
    intr.width = std::stoi(get("width"));
    intr.height = std::stoi(get("height"));
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad intrinsics value: ") + e.what());
  }
  intr.validate();
  return intr;
}

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& intr) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << format_intrinsics(intr);
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_intrinsics(ss.str());
}

}  // namespace taskgrasp
