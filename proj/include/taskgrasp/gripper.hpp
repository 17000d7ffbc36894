#pragma once

#include "taskgrasp/geometry.hpp"

namespace taskgrasp {

/// Parallel-jaw gripper. Frame: +x approach, +y closing, +z = x cross y; the
/// origin sits between the fingertips at mid finger depth.
struct GripperSpec {
  double max_width = 0.085;
  double finger_depth = 0.04;
  double finger_thickness = 0.008;
  double finger_width = 0.02;
  /// Palm and wrist box behind the fingers: (depth along approach, span along closing, thickness).
  Vec3 body_extent{0.06, 0.10, 0.03};
  /// Added to the contact separation when choosing an opening width.
  double clearance = 0.005;

  void validate() const;
};

}  // namespace taskgrasp
