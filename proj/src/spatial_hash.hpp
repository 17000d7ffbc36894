#pragma once

#include "taskgrasp/geometry.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

namespace taskgrasp::detail {

/// Uniform voxel hash over point indices; radius queries visit the 27 (or more) cells around a point.
class SpatialHash {
 public:
  explicit SpatialHash(double cell) : cell_(cell) {}

  void insert(const Vec3& p, int index) { cells_[key(cell_of(p))].push_back(index); }

  template <class Fn>
  void for_each_near(const Vec3& p, double radius, Fn&& fn) const {
    const auto c = cell_of(p);
    const int reach = static_cast<int>(std::ceil(radius / cell_));
    for (int dx = -reach; dx <= reach; ++dx)
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dz = -reach; dz <= reach; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (int idx : it->second) fn(idx);
        }
  }

  /// Visits every occupied cell as (cell centre, indices).
  template <class Fn>
  void for_each_cell(Fn&& fn) const {
    for (const auto& [k, idx] : cells_) fn(center_of(k), idx);
  }

  double cell() const { return cell_; }

 private:
  using Cell = std::array<std::int64_t, 3>;

  Cell cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  static std::uint64_t key(const Cell& c) {
    return (static_cast<std::uint64_t>(c[0] & 0x1fffff) << 42) | (static_cast<std::uint64_t>(c[1] & 0x1fffff) << 21) |
           static_cast<std::uint64_t>(c[2] & 0x1fffff);
  }

  Vec3 center_of(std::uint64_t k) const {
    auto unpack = [](std::uint64_t v) {
      const auto x = static_cast<std::int64_t>(v & 0x1fffff);
      return x >= 0x100000 ? x - 0x200000 : x;
    };
    return Vec3((unpack(k >> 42) + 0.5) * cell_, (unpack(k >> 21) + 0.5) * cell_, (unpack(k) + 0.5) * cell_);
  }

  double cell_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

}  // namespace taskgrasp::detail
