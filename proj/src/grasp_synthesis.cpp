#include "taskgrasp/grasp_synthesis.hpp"

#include "http_client.hpp"
#include "random.hpp"
#include "spatial_hash.hpp"
#include "taskgrasp/error.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

namespace taskgrasp {

using nlohmann::json;

PointCloud estimate_normals(const PointCloud& cloud, int k) {
  if (k < 3) throw Error(ErrorCode::InvalidArgument, "normal estimation needs k >= 3");
  PointCloud out;
  out.points = cloud.points;
  const std::size_t n = cloud.size();
  out.normals.assign(n, Vec3::Zero());
  out.normal_valid.assign(n, 0);
  if (n < 3) return out;

  // Cell size from the typical nearest-neighbour spacing of a fixed subsample.
  const std::size_t stride = std::max<std::size_t>(1, n / 64);
  std::vector<double> nn;
  for (std::size_t i = 0; i < n; i += stride) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) best = std::min(best, (cloud.points[j] - cloud.points[i]).squaredNorm());
    nn.push_back(std::sqrt(best));
  }
  std::nth_element(nn.begin(), nn.begin() + nn.size() / 2, nn.end());
  const double spacing = nn[nn.size() / 2];
  const double cell = std::max(1e-6, spacing * std::sqrt(static_cast<double>(k + 1)) * 0.6);
  detail::SpatialHash hash(cell);
  for (std::size_t i = 0; i < n; ++i) hash.insert(cloud.points[i], static_cast<int>(i));

  // Neighbourhood = the point itself plus up to k others.
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k) + 1, n);
  std::vector<std::pair<double, int>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.points[i];
    bool found = false;
    for (int reach = 1; reach <= 3 && !found; ++reach) {
      cand.clear();
      hash.for_each_near(p, reach * cell, [&](int j) { cand.emplace_back((cloud.points[j] - p).squaredNorm(), j); });
      if (cand.size() >= want) {
        std::nth_element(cand.begin(), cand.begin() + (want - 1), cand.end());
        const double radius = reach * cell;
        found = cand[want - 1].first <= radius * radius;
      }
    }
    if (!found) {
      // Isolated point: exact search over the whole cloud.
      cand.clear();
      for (std::size_t j = 0; j < n; ++j) cand.emplace_back((cloud.points[j] - p).squaredNorm(), static_cast<int>(j));
    }
    std::partial_sort(cand.begin(), cand.begin() + std::min(want, cand.size()), cand.end());
    const std::size_t m = std::min(want, cand.size());
    Vec3 mean = Vec3::Zero();
    for (std::size_t q = 0; q < m; ++q) mean += cloud.points[cand[q].second];
    mean /= static_cast<double>(m);
    Mat3 cov = Mat3::Zero();
    for (std::size_t q = 0; q < m; ++q) {
      const Vec3 d = cloud.points[cand[q].second] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const auto& ev = eig.eigenvalues();
    if (m < 3 || !(ev(2) > 0) || ev(1) <= 1e-10 * ev(2)) continue;
    Vec3 normal = eig.eigenvectors().col(0).normalized();
    if (normal.dot(-p) < 0) normal = -normal;
    out.normals[i] = normal;
    out.normal_valid[i] = 1;
  }
  return out;
}

void sort_candidates(CandidateSet& set) {
  std::vector<std::size_t> order(set.grasps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ga = set.grasps[a];
    const auto& gb = set.grasps[b];
    if (ga.score != gb.score) return ga.score > gb.score;
    return std::lexicographical_compare(ga.translation.data(), ga.translation.data() + 3, gb.translation.data(),
                                        gb.translation.data() + 3);
  });
  CandidateSet sorted;
  sorted.source_cloud_id = set.source_cloud_id;
  for (auto i : order) {
    sorted.grasps.push_back(set.grasps[i]);
    if (!set.contacts.empty()) sorted.contacts.push_back(set.contacts[i]);
  }
  set = std::move(sorted);
}

std::string cloud_digest(const PointCloud& cloud) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : cloud.points) h = detail::fnv1a(p.data(), sizeof(double) * 3, h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CandidateSet sample_grasps(const PointCloud& cloud, const GripperSpec& gripper, const SamplerConfig& config) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "grasp sampling on an empty cloud");
  if (!cloud.has_normals() || cloud.normals.size() != cloud.size())
    throw Error(ErrorCode::InvalidArgument, "grasp sampling needs per-point normals");
  if (config.budget < 1) throw Error(ErrorCode::InvalidArgument, "budget must be at least 1");
  gripper.validate();

  std::vector<int> usable;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.normal_valid.empty() || cloud.normal_valid[i]) usable.push_back(static_cast<int>(i));
  CandidateSet set;
  set.source_cloud_id = cloud_digest(cloud);
  if (usable.empty()) throw Error(ErrorCode::NoFeasibleGrasp, "no point has a valid normal");

  // Opening width = separation + clearance must stay within the stroke.
  const double max_sep = gripper.max_width - gripper.clearance;
  const double min_sep = 1e-3;
  const double cos_cone = std::cos(config.friction_cone_deg * std::numbers::pi / 180.0);
  // Coarse cells let the partner search skip whole cells outside i's cone.
  const double cell = std::max(max_sep / 8, 1e-3);
  detail::SpatialHash hash(cell);
  for (int i : usable) hash.insert(cloud.points[i], i);
  const double cell_half_diag = cell * std::sqrt(3.0) / 2;
  const double cone = config.friction_cone_deg * std::numbers::pi / 180.0;

  std::mt19937_64 rng(config.seed);
  const long long trials = static_cast<long long>(config.budget) * config.trials_per_candidate;
  std::vector<int> partners;
  for (long long t = 0; t < trials && static_cast<int>(set.grasps.size()) < config.budget; ++t) {
    const int i = usable[detail::uniform_index(rng, usable.size())];
    const Vec3& pi = cloud.points[i];
    const Vec3& ni = cloud.normals[i];
    // Draw the partner among points that lie inside i's friction cone.
    partners.clear();
    hash.for_each_cell([&](const Vec3& center, const std::vector<int>& members) {
      const Vec3 dc = center - pi;
      const double dist_c = dc.norm();
      if (dist_c > max_sep + cell_half_diag) return;
      if (dist_c > cell_half_diag) {
        const double angle = std::acos(std::clamp(-ni.dot(dc) / dist_c, -1.0, 1.0));
        if (angle - std::asin(cell_half_diag / dist_c) > cone) return;
      }
      for (int j : members) {
        const Vec3 d = cloud.points[j] - pi;
        const double dist = d.norm();
        if (j == i || dist < min_sep || dist > max_sep) continue;
        if (-ni.dot(d) / dist >= cos_cone) partners.push_back(j);
      }
    });
    if (partners.empty()) continue;
    std::sort(partners.begin(), partners.end());
    const int j = partners[detail::uniform_index(rng, partners.size())];
    const Vec3& pj = cloud.points[j];
    const Vec3& nj = cloud.normals[j];
    const double dist = (pj - pi).norm();
    const Vec3 axis = (pj - pi) / dist;
    const double cos_i = -ni.dot(axis);
    const double cos_j = nj.dot(axis);
    if (cos_i < cos_cone || cos_j < cos_cone) continue;

    const Vec3 mid = 0.5 * (pi + pj);
    Vec3 approach = -(ni + nj);
    auto rotation = assemble_rotation(approach, axis);
    if (!rotation) rotation = assemble_rotation(mid, axis);
    if (!rotation) continue;

    GraspPose g;
    g.rotation = *rotation;
    g.translation = mid;
    g.width = dist + gripper.clearance;
    g.score = std::clamp(0.5 * (cos_i + cos_j), 0.0, 1.0);
    if (!validate_grasp_pose(g, gripper.max_width).valid()) continue;
    set.grasps.push_back(g);
    set.contacts.emplace_back(i, j);
  }
  if (set.empty()) throw Error(ErrorCode::NoFeasibleGrasp, "no antipodal pair within the gripper stroke");
  sort_candidates(set);
  return set;
}

CandidateSet SamplerGraspBackend::generate(const PointCloud& cloud, const GripperSpec& gripper) {
  const PointCloud with_normals = cloud.has_normals() ? cloud : estimate_normals(cloud, k_);
  return sample_grasps(with_normals, gripper, config_);
}

json grasp_to_json(const GraspPose& g) {
  json rot = json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot.push_back(g.rotation(i, j));
  return {{"rotation", rot},
          {"translation", {g.translation.x(), g.translation.y(), g.translation.z()}},
          {"width", g.width},
          {"score", g.score}};
}

GraspPose grasp_from_json(const json& j) {
  GraspPose g;
  const auto& rot = j.at("rotation");
  if (rot.size() != 9) throw Error(ErrorCode::InvalidArgument, "rotation must have 9 entries");
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) g.rotation(a, b) = rot.at(a * 3 + b).get<double>();
  const auto& t = j.at("translation");
  if (t.size() != 3) throw Error(ErrorCode::InvalidArgument, "translation must have 3 entries");
  g.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  g.width = j.at("width").get<double>();
  g.score = j.at("score").get<double>();
  return g;
}

RemoteGraspBackend::RemoteGraspBackend(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

CandidateSet RemoteGraspBackend::generate(const PointCloud& cloud, const GripperSpec& gripper) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "grasp request for an empty cloud");
  json points = json::array();
  for (const auto& p : cloud.points) points.push_back({p.x(), p.y(), p.z()});
  const json request{{"version", 1}, {"points", points}, {"max_width", gripper.max_width}};
  const json response = detail::post_json(base_url_, "/v1/grasps", request, timeout_, {});

  CandidateSet set;
  set.source_cloud_id = cloud_digest(cloud);
  try {
    for (const auto& item : response.at("grasps")) {
      GraspPose g;
      try {
        g = grasp_from_json(item);
      } catch (const Error&) {
        continue;
      }
      if (g.score < 0 || g.score > 1) continue;
      if (!validate_grasp_pose(g, gripper.max_width).valid()) continue;
      set.grasps.push_back(g);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendUnavailable, std::string("malformed grasp service response: ") + e.what());
  }
  if (set.empty()) throw Error(ErrorCode::NoFeasibleGrasp, "grasp service returned no valid candidate");
  sort_candidates(set);
  return set;
}

}  // namespace taskgrasp
