#pragma once

#include "taskgrasp/grasp_synthesis.hpp"
#include "taskgrasp/image.hpp"

#include <vector>

namespace taskgrasp {

struct RankedGrasp {
  int index = 0;  // position in the candidate set
  double objective = 0.0;
};

struct SelectionReport {
  GraspPose winner;
  int winner_index = 0;
  Vec3 centroid = Vec3::Zero();
  std::vector<RankedGrasp> ranking;  // objective descending; winner first
  double epsilon_used = 1e-4;
};

/// score / max(||t - c||, epsilon)
double selection_objective(const GraspPose& g, const Vec3& centroid, double epsilon);

/// Argmax of the objective. Exact ties go to the higher score, then to the
/// lexicographically smaller translation, then to the lower index.
SelectionReport select_grasp(const CandidateSet& candidates, const Vec3& centroid, double epsilon = 1e-4);

struct ConstrainedSelection {
  PointCloud affordance_cloud;
  CandidateSet candidates;
  SelectionReport report;
};

/// Filters the depth by the affordance mask, takes the centroid of the
/// resulting sub-cloud, asks the backend for candidates on that sub-cloud and
/// selects among them.
ConstrainedSelection constrain_and_select(const DepthImage& depth, const CameraIntrinsics& intr,
                                          const PixelMask& mask, GraspBackend& backend, const GripperSpec& gripper,
                                          double epsilon = 1e-4);

}  // namespace taskgrasp
