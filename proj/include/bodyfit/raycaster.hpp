#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/vec.hpp"

namespace bodyfit {

struct SensorModel {
  Vec3d origin{};
  Mat3d orientation = Mat3d::identity();  // sensor axes in world coordinates
  double azimuth_res = 0.0;
  double elevation_res = 0.0;

  Vec3d to_sensor(const Vec3d& world) const { return orientation.transpose() * (world - origin); }
  Vec3d dir_to_world(const Vec3d& sensor_dir) const { return orientation * sensor_dir; }
};

struct Aabb {
  Vec3d min{}, max{};
  bool contains(const Vec3d& p) const {
    return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z &&
           p.z <= max.z;
  }
};

Aabb bounding_box(std::span<const Vec3d> points);

struct LidarScan {
  std::vector<Vec3d> target_points;    // returns on the target, world frame
  std::vector<Vec3d> obstacle_points;  // witness points of the rest of the sweep
  Aabb bbox;                           // box enclosing the target points
  SensorModel sensor;
};

// Spherical coordinates of a point in the sensor frame:
// azimuth = atan2(y, x), elevation = asin(z / r).
struct Spherical {
  double r, phi, theta;
};
Spherical spherical_of(const Vec3d& sensor_frame_point);

// Integer ray lattice subtending a target box, at the sensor resolution.
struct RaySet {
  std::vector<std::pair<int, int>> cells;  // (azimuth index, elevation index), sorted
  // Angular ranges of the box, used for the occlusion predicate. Azimuths may
  // exceed +-pi; they are unwrapped around phi_center.
  double phi_min = 0, phi_max = 0, theta_min = 0, theta_max = 0;
  double phi_center = 0;
  double r_min = 0;  // minimum corner radius
  SensorModel sensor;

  Vec3d cell_direction(int i, int j) const;  // unit, world frame
  RaySet without(const std::vector<std::pair<int, int>>& masked) const;
};

RaySet ray_window(const LidarScan& scan, const SensorModel& sensor);

// Lattice cells blocked by witness points closer than the target box.
std::vector<std::pair<int, int>> occluded_rays(const LidarScan& scan, const SensorModel& sensor,
                                               const RaySet& window);

struct Ray {
  Vec3d origin, dir;  // dir unit length
};

// Barycentric hit under the edge convention e1 = v2-v1, e2 = v3-v2, so the
// hit point is (1-u) v1 + (u-v) v2 + v v3.
struct TriangleHit {
  int face = -1;
  double distance = 0;  // along the ray
  double u = 0, v = 0;
  Vec3d point{};
};

inline constexpr double kMinHitDistance = 1e-6;  // self-intersection guard
inline constexpr double kDegenerateDenom = 1e-9;

// Solves the 3x3 system for one triangle; nullopt on miss or degeneracy.
std::optional<TriangleHit> intersect_triangle(const Ray& ray, const Vec3d& v1, const Vec3d& v2,
                                              const Vec3d& v3);

// Closest hit over all faces (reference linear scan).
std::optional<TriangleHit> intersect(const Ray& ray, std::span<const Vec3d> vertices,
                                     std::span<const std::array<int, 3>> faces);
std::optional<TriangleHit> intersect(const Ray& ray, const PosedMesh& mesh);

// Median-split BVH; behaviorally identical to the linear scan, including
// lowest-face-index tie-breaking.
class MeshBvh {
 public:
  MeshBvh(std::span<const Vec3d> vertices, std::span<const std::array<int, 3>> faces);
  explicit MeshBvh(const PosedMesh& mesh);

  std::optional<TriangleHit> intersect(const Ray& ray) const;
  const Aabb& bounds() const { return nodes_.empty() ? empty_bounds_ : nodes_[0].box; }

 private:
  struct Node {
    Aabb box;
    int left = -1, right = -1;  // internal children
    int start = 0, count = 0;   // leaf face range
  };
  int build(int begin, int end);

  std::span<const Vec3d> vertices_;
  std::span<const std::array<int, 3>> faces_;
  std::vector<int> order_;  // face indices, partitioned by the build
  std::vector<Node> nodes_;
  Aabb empty_bounds_{};
};

struct SimulatedScan {
  std::vector<Vec3d> points;
  std::vector<std::pair<int, int>> ray_cells;  // lattice cell per point
  std::vector<TriangleHit> hits;               // provenance for gradient flow
};

// One point per hitting ray of an occlusion-masked window.
SimulatedScan raycast_mesh(const RaySet& window, const PosedMesh& mesh);

}  // namespace bodyfit
