#include "taskgrasp/selection.hpp"

#include "taskgrasp/error.hpp"

#include <algorithm>
#include <numeric>

namespace taskgrasp {

double selection_objective(const GraspPose& g, const Vec3& centroid, double epsilon) {
  return g.score / std::max((g.translation - centroid).norm(), epsilon);
}

SelectionReport select_grasp(const CandidateSet& candidates, const Vec3& centroid, double epsilon) {
  if (candidates.empty()) throw Error(ErrorCode::NoCandidates, "no grasp candidates to select from");
  if (!(epsilon > 0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");

  SelectionReport report;
  report.centroid = centroid;
  report.epsilon_used = epsilon;
  const auto& gs = candidates.grasps;
  report.ranking.reserve(gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i)
    report.ranking.push_back({static_cast<int>(i), selection_objective(gs[i], centroid, epsilon)});

  std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](const RankedGrasp& a, const RankedGrasp& b) {
    if (a.objective != b.objective) return a.objective > b.objective;
    const auto& ga = gs[a.index];
    const auto& gb = gs[b.index];
    if (ga.score != gb.score) return ga.score > gb.score;
    return std::lexicographical_compare(ga.translation.data(), ga.translation.data() + 3, gb.translation.data(),
                                        gb.translation.data() + 3);
  });
  report.winner_index = report.ranking.front().index;
  report.winner = gs[report.winner_index];
  return report;
}

ConstrainedSelection constrain_and_select(const DepthImage& depth, const CameraIntrinsics& intr,
                                          const PixelMask& mask, GraspBackend& backend, const GripperSpec& gripper,
                                          double epsilon) {
  ConstrainedSelection out;
  out.affordance_cloud = depth_to_cloud(depth, intr, mask);
  if (out.affordance_cloud.empty())
    throw Error(ErrorCode::EmptyAffordanceRegion, "affordance mask covers no pixel with valid depth");
  const Vec3 centroid = mask_centroid(out.affordance_cloud);
  out.candidates = backend.generate(out.affordance_cloud, gripper);
  out.report = select_grasp(out.candidates, centroid, epsilon);
  return out;
}

}  // namespace taskgrasp
