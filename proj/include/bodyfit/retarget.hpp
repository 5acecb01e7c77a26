#pragma once

#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/vec.hpp"

namespace bodyfit {

struct Quat {
  double w = 1, x = 0, y = 0, z = 0;

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
  }
  double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
  Quat operator-() const { return {-w, -x, -y, -z}; }
};

Quat quat_from_axis_angle(const Vec3d& aa);
Vec3d axis_angle_from_quat(const Quat& q);
Quat compose(const Quat& a, const Quat& b);  // rotation a after b
double rotation_angle_between(const Vec3d& aa0, const Vec3d& aa1);  // geodesic distance

// Shortest-arc spherical interpolation; falls back to normalized lerp for
// nearly identical inputs.
Quat slerp(const Quat& q0, const Quat& q1, double t);

struct AssetSequence {
  std::string id;
  ShapeParams shape;
  std::vector<PoseParams> poses;
  std::vector<double> timestamps;
  std::vector<Vec2d> bev;          // (x, y) of the root per frame
  std::vector<double> speed;       // m/s per frame, from BEV finite differences
  bool cyclic = false;
  int root_joint = 0;

  // Derives bev/speed from poses + timestamps and checks monotonicity.
  void finalize();
  int frames() const { return static_cast<int>(poses.size()); }
};

struct QueryTrajectory {
  std::vector<double> timestamps;
  std::vector<Vec2d> waypoints;
  std::vector<double> headings;  // radians; derived from travel direction

  // Computes headings (held through stationary stretches) and speeds.
  void finalize();
  std::vector<double> speeds() const;
};

// Earliest window of length >= min_len whose endpoint poses are within
// tau_pose mean per-joint geodesic distance (non-root joints). Throws when no
// window qualifies.
AssetSequence clip_cycle(const AssetSequence& seq, double tau_pose, double min_len);

// Pose similarity used by the cycle test.
double pose_distance(const SkeletonTemplate& tmpl_like_parents_unused, const PoseParams& a,
                     const PoseParams& b);
double pose_distance(const std::vector<int>& parents, const PoseParams& a, const PoseParams& b);

// Velocity retrieval: every compared timestep within 0.5 m/s, ranked by mean
// absolute speed difference, ties by asset id.
inline constexpr double kSpeedBand = 0.5;  // m/s
const AssetSequence& retrieve(const std::vector<AssetSequence>& bank,
                              const QueryTrajectory& query);

// Maps query timestamps to cycle phase by matched arc length and rebuilds the
// pose track on the query: slerped joints, query-aligned root.
std::vector<PoseParams> retarget_sequence(const AssetSequence& asset,
                                          const QueryTrajectory& query,
                                          std::vector<double>* phases = nullptr);

}  // namespace bodyfit
