#include "bodyfit/raycaster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bodyfit/error.hpp"

namespace bodyfit {

Aabb bounding_box(std::span<const Vec3d> points) {
  if (points.empty()) throw ValidationError("bounding_box: empty point set");
  Aabb box{points[0], points[0]};
  for (const auto& p : points) {
    box.min.x = std::min(box.min.x, p.x);
    box.min.y = std::min(box.min.y, p.y);
    box.min.z = std::min(box.min.z, p.z);
    box.max.x = std::max(box.max.x, p.x);
    box.max.y = std::max(box.max.y, p.y);
    box.max.z = std::max(box.max.z, p.z);
  }
  return box;
}

Spherical spherical_of(const Vec3d& p) {
  const double r = p.norm();
  return {r, std::atan2(p.y, p.x), std::asin(p.z / r)};
}

Vec3d RaySet::cell_direction(int i, int j) const {
  const double phi = i * sensor.azimuth_res;
  const double theta = j * sensor.elevation_res;
  return sensor.dir_to_world(
      Vec3d(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta)));
}

RaySet RaySet::without(const std::vector<std::pair<int, int>>& masked) const {
  RaySet out = *this;
  out.cells.clear();
  for (const auto& c : cells)
    if (!std::binary_search(masked.begin(), masked.end(), c)) out.cells.push_back(c);
  return out;
}

RaySet ray_window(const LidarScan& scan, const SensorModel& sensor) {
  if (!(sensor.azimuth_res > 0.0) || !(sensor.elevation_res > 0.0))
    throw ValidationError("ray_window: sensor resolutions must be positive");
  if (!(scan.bbox.max.x >= scan.bbox.min.x && scan.bbox.max.y >= scan.bbox.min.y &&
        scan.bbox.max.z >= scan.bbox.min.z))
    throw ValidationError("ray_window: invalid bounding box");
  if (scan.bbox.contains(sensor.origin))
    throw ValidationError("ray_window: sensor origin lies inside the target box");

  RaySet out;
  out.sensor = sensor;

  double phis[8], thetas[8], rs[8];
  int idx = 0;
  for (int cx = 0; cx < 2; ++cx)
    for (int cy = 0; cy < 2; ++cy)
      for (int cz = 0; cz < 2; ++cz) {
        const Vec3d corner(cx ? scan.bbox.max.x : scan.bbox.min.x,
                           cy ? scan.bbox.max.y : scan.bbox.min.y,
                           cz ? scan.bbox.max.z : scan.bbox.min.z);
        const Spherical s = spherical_of(sensor.to_sensor(corner));
        phis[idx] = s.phi;
        thetas[idx] = s.theta;
        rs[idx] = s.r;
        ++idx;
      }

  // Unwrap azimuths around the first corner so boxes straddling +-pi work.
  out.phi_center = phis[0];
  for (int k = 0; k < 8; ++k) {
    while (phis[k] - out.phi_center > M_PI) phis[k] -= 2.0 * M_PI;
    while (phis[k] - out.phi_center < -M_PI) phis[k] += 2.0 * M_PI;
  }
  out.phi_min = *std::min_element(phis, phis + 8);
  out.phi_max = *std::max_element(phis, phis + 8);
  out.theta_min = *std::min_element(thetas, thetas + 8);
  out.theta_max = *std::max_element(thetas, thetas + 8);
  out.r_min = *std::min_element(rs, rs + 8);

  const long i_lo = static_cast<long>(std::floor(out.phi_min / sensor.azimuth_res));
  const long i_hi = static_cast<long>(std::floor(out.phi_max / sensor.azimuth_res));
  const long j_lo = static_cast<long>(std::floor(out.theta_min / sensor.elevation_res));
  const long j_hi = static_cast<long>(std::floor(out.theta_max / sensor.elevation_res));
  for (long i = i_lo + 1; i < i_hi; ++i)
    for (long j = j_lo + 1; j < j_hi; ++j)
      out.cells.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return out;
}

std::vector<std::pair<int, int>> occluded_rays(const LidarScan& scan, const SensorModel& sensor,
                                               const RaySet& window) {
  std::vector<std::pair<int, int>> mask;
  for (const auto& p : scan.obstacle_points) {
    Spherical s = spherical_of(sensor.to_sensor(p));
    s.phi += 2.0 * M_PI * std::round((window.phi_center - s.phi) / (2.0 * M_PI));
    if (s.r < window.r_min && s.phi > window.phi_min && s.phi < window.phi_max &&
        s.theta > window.theta_min && s.theta < window.theta_max) {
      mask.emplace_back(static_cast<int>(std::floor(s.phi / sensor.azimuth_res)),
                        static_cast<int>(std::floor(s.theta / sensor.elevation_res)));
    }
  }
  std::sort(mask.begin(), mask.end());
  mask.erase(std::unique(mask.begin(), mask.end()), mask.end());
  return mask;
}

std::optional<TriangleHit> intersect_triangle(const Ray& ray, const Vec3d& v1, const Vec3d& v2,
                                              const Vec3d& v3) {
  const Vec3d e1 = v2 - v1;
  const Vec3d e2 = v3 - v2;
  const Vec3d t = ray.origin - v1;
  const Vec3d d_cross_e2 = ray.dir.cross(e2);
  const double denom = d_cross_e2.dot(e1);
  if (std::abs(denom) < kDegenerateDenom) return std::nullopt;
  const double inv = 1.0 / denom;
  const Vec3d t_cross_e1 = t.cross(e1);
  const double c = t_cross_e1.dot(e2) * inv;
  if (c <= kMinHitDistance) return std::nullopt;
  const double u = d_cross_e2.dot(t) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const double v = t_cross_e1.dot(ray.dir) * inv;
  if (v < 0.0 || v > u) return std::nullopt;
  TriangleHit hit;
  hit.distance = c;
  hit.u = u;
  hit.v = v;
  hit.point = v1 + e1 * u + e2 * v;
  return hit;
}

namespace {
// Keep the lower face index on exact distance ties, matching a front-to-back
// linear scan.
bool improves(const std::optional<TriangleHit>& best, double distance, int face) {
  if (!best) return true;
  return distance < best->distance || (distance == best->distance && face < best->face);
}
}  // namespace

std::optional<TriangleHit> intersect(const Ray& ray, std::span<const Vec3d> vertices,
                                     std::span<const std::array<int, 3>> faces) {
  std::optional<TriangleHit> best;
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    const auto& fc = faces[f];
    auto hit = intersect_triangle(ray, vertices[fc[0]], vertices[fc[1]], vertices[fc[2]]);
    if (hit && improves(best, hit->distance, f)) {
      hit->face = f;
      best = hit;
    }
  }
  return best;
}

std::optional<TriangleHit> intersect(const Ray& ray, const PosedMesh& mesh) {
  return intersect(ray, mesh.vertices, *mesh.faces);
}

MeshBvh::MeshBvh(std::span<const Vec3d> vertices, std::span<const std::array<int, 3>> faces)
    : vertices_(vertices), faces_(faces) {
  order_.resize(faces.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!faces.empty()) {
    nodes_.reserve(2 * faces.size() / 3 + 1);
    build(0, static_cast<int>(faces.size()));
  }
}

MeshBvh::MeshBvh(const PosedMesh& mesh) : MeshBvh(mesh.vertices, *mesh.faces) {}

int MeshBvh::build(int begin, int end) {
  const int node_id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Aabb box{Vec3d(1e30, 1e30, 1e30), Vec3d(-1e30, -1e30, -1e30)};
  for (int k = begin; k < end; ++k)
    for (int v : faces_[order_[k]]) {
      const Vec3d& p = vertices_[v];
      box.min.x = std::min(box.min.x, p.x);
      box.min.y = std::min(box.min.y, p.y);
      box.min.z = std::min(box.min.z, p.z);
      box.max.x = std::max(box.max.x, p.x);
      box.max.y = std::max(box.max.y, p.y);
      box.max.z = std::max(box.max.z, p.z);
    }
  nodes_[node_id].box = box;
  if (end - begin <= 4) {
    nodes_[node_id].start = begin;
    nodes_[node_id].count = end - begin;
    return node_id;
  }
  const Vec3d extent = box.max - box.min;
  int axis = 0;
  if (extent.y > extent[axis]) axis = 1;
  if (extent.z > extent[axis]) axis = 2;
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int fa, int fb) {
                     const auto centroid = [&](int f) {
                       double c = 0;
                       for (int v : faces_[f]) c += vertices_[v][axis];
                       return c;
                     };
                     const double ca = centroid(fa), cb = centroid(fb);
                     return ca < cb || (ca == cb && fa < fb);
                   });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[node_id].left = left;
  nodes_[node_id].right = right;
  return node_id;
}

namespace {
// Slab test; returns entry distance or +inf on miss.
double box_entry(const Ray& ray, const Aabb& box) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double inv = 1.0 / ray.dir[a];
    double near = (box.min[a] - ray.origin[a]) * inv;
    double far = (box.max[a] - ray.origin[a]) * inv;
    if (inv < 0.0) std::swap(near, far);
    t0 = std::max(t0, near);
    t1 = std::min(t1, far);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}
}  // namespace

std::optional<TriangleHit> MeshBvh::intersect(const Ray& ray) const {
  std::optional<TriangleHit> best;
  if (nodes_.empty()) return best;
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (best && box_entry(ray, node.box) > best->distance) continue;
    if (node.left < 0) {
      for (int k = node.start; k < node.start + node.count; ++k) {
        const int f = order_[k];
        const auto& fc = faces_[f];
        auto hit = intersect_triangle(ray, vertices_[fc[0]], vertices_[fc[1]], vertices_[fc[2]]);
        if (hit && improves(best, hit->distance, f)) {
          hit->face = f;
          best = hit;
        }
      }
    } else {
      const double dl = box_entry(ray, nodes_[node.left].box);
      const double dr = box_entry(ray, nodes_[node.right].box);
      // Push the farther child first so the nearer one is explored next.
      if (dl <= dr) {
        if (dr < std::numeric_limits<double>::infinity()) stack[top++] = node.right;
        if (dl < std::numeric_limits<double>::infinity()) stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
  }
  return best;
}

SimulatedScan raycast_mesh(const RaySet& window, const PosedMesh& mesh) {
  SimulatedScan out;
  if (window.cells.empty() || mesh.faces->empty()) return out;
  const MeshBvh bvh(mesh);
  for (const auto& [i, j] : window.cells) {
    const Ray ray{window.sensor.origin, window.cell_direction(i, j)};
    if (auto hit = bvh.intersect(ray)) {
      out.points.push_back(hit->point);
      out.ray_cells.emplace_back(i, j);
      out.hits.push_back(*hit);
    }
  }
  return out;
}

}  // namespace bodyfit
