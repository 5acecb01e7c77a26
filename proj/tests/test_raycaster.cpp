#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bodyfit/ad.hpp"
#include "bodyfit/body_model.hpp"
#include "bodyfit/raycaster.hpp"
#include "bodyfit/rng.hpp"

using namespace bodyfit;

namespace {

// Independent brute-force ray/triangle intersection using the standard edge
// convention (e2' = v3 - v1), for cross-checking the production caster.
struct OracleHit {
  int face;
  double distance;
};
std::optional<OracleHit> oracle_cast(const Ray& ray, std::span<const Vec3d> verts,
                                     std::span<const std::array<int, 3>> faces) {
  std::optional<OracleHit> best;
  for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
    const Vec3d& a = verts[faces[f][0]];
    const Vec3d& b = verts[faces[f][1]];
    const Vec3d& c = verts[faces[f][2]];
    const Vec3d e1 = b - a, e2 = c - a;
    const Vec3d p = ray.dir.cross(e2);
    const double det = p.dot(e1);
    if (std::abs(det) < 1e-12) continue;
    const Vec3d t = ray.origin - a;
    const double u = p.dot(t) / det;
    if (u < 0.0 || u > 1.0) continue;
    const Vec3d q = t.cross(e1);
    const double v = q.dot(ray.dir) / det;
    if (v < 0.0 || u + v > 1.0) continue;
    const double dist = q.dot(e2) / det;
    if (dist <= kMinHitDistance) continue;
    if (!best || dist < best->distance) best = OracleHit{f, dist};
  }
  return best;
}

LidarScan box_scan(const Vec3d& lo, const Vec3d& hi, double d_phi, double d_theta,
                   const Vec3d& origin = Vec3d(0, 0, 0)) {
  LidarScan scan;
  scan.bbox = {lo, hi};
  scan.sensor.origin = origin;
  scan.sensor.azimuth_res = d_phi;
  scan.sensor.elevation_res = d_theta;
  return scan;
}

std::vector<std::array<int, 3>> tri(std::initializer_list<std::array<int, 3>> faces) {
  return faces;
}

// UV sphere mesh.
void make_sphere(const Vec3d& center, double radius, int rows, int cols,
                 std::vector<Vec3d>& verts, std::vector<std::array<int, 3>>& faces) {
  verts.clear();
  faces.clear();
  verts.push_back(center + Vec3d(0, 0, -radius));
  for (int r = 1; r < rows; ++r) {
    const double lam = -M_PI_2 + M_PI * r / rows;
    for (int c = 0; c < cols; ++c) {
      const double t = 2 * M_PI * c / cols;
      verts.push_back(center + Vec3d(radius * std::cos(lam) * std::cos(t),
                                     radius * std::cos(lam) * std::sin(t),
                                     radius * std::sin(lam)));
    }
  }
  verts.push_back(center + Vec3d(0, 0, radius));
  const auto ring_at = [&](int r, int c) { return 1 + (r - 1) * cols + (c % cols); };
  for (int c = 0; c < cols; ++c) faces.push_back({0, ring_at(1, c + 1), ring_at(1, c)});
  for (int r = 1; r + 1 < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      faces.push_back({ring_at(r, c), ring_at(r, c + 1), ring_at(r + 1, c + 1)});
      faces.push_back({ring_at(r, c), ring_at(r + 1, c + 1), ring_at(r + 1, c)});
    }
  const int top = static_cast<int>(verts.size()) - 1;
  for (int c = 0; c < cols; ++c)
    faces.push_back({top, ring_at(rows - 1, c), ring_at(rows - 1, c + 1)});
}

}  // namespace

TEST_CASE("ray window from stated floor bounds: range [0, 0.05] at 0.01 gives 1..4") {
  // Box corners at azimuth {0, 0.05} and elevation {0, ~0.05}.
  Aabb box;
  box.min = Vec3d(10.0, 0.0, 0.0);
  box.max = Vec3d(10.0 + 1e-9, 10.0 * std::tan(0.05), 10.0 * std::tan(0.05));
  LidarScan scan;
  scan.bbox = box;
  scan.sensor.azimuth_res = 0.01;
  scan.sensor.elevation_res = 0.01;
  const RaySet w = ray_window(scan, scan.sensor);
  std::set<int> is;
  for (auto& [i, j] : w.cells) is.insert(i);
  CHECK(is == std::set<int>({1, 2, 3, 4}));
}

TEST_CASE("window narrower than one cell is empty") {
  LidarScan scan = box_scan(Vec3d(10, 0.001, 0.001), Vec3d(10.01, 0.004, 0.004), 0.01, 0.01);
  const RaySet w = ray_window(scan, scan.sensor);
  CHECK(w.cells.empty());
}

TEST_CASE("ray window rejects a sensor inside the box") {
  LidarScan scan = box_scan(Vec3d(-1, -1, -1), Vec3d(1, 1, 1), 0.01, 0.01);
  CHECK_THROWS_AS(ray_window(scan, scan.sensor), ValidationError);
}

TEST_CASE("ray window equals exhaustive lattice enumeration") {
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    const Vec3d center(rng.uniform(4, 12), rng.uniform(-4, 4), rng.uniform(-2, 2));
    const Vec3d half(rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.1, 1.0));
    LidarScan scan = box_scan(center - half, center + half, rng.uniform(0.002, 0.02),
                              rng.uniform(0.002, 0.02));
    const RaySet w = ray_window(scan, scan.sensor);

    // Oracle: angle ranges direct from corners, then enumerate a padded lattice.
    double phi_lo = 1e9, phi_hi = -1e9, th_lo = 1e9, th_hi = -1e9;
    for (int cx = 0; cx < 2; ++cx)
      for (int cy = 0; cy < 2; ++cy)
        for (int cz = 0; cz < 2; ++cz) {
          const Vec3d corner(cx ? scan.bbox.max.x : scan.bbox.min.x,
                             cy ? scan.bbox.max.y : scan.bbox.min.y,
                             cz ? scan.bbox.max.z : scan.bbox.min.z);
          const double r = corner.norm();
          phi_lo = std::min(phi_lo, std::atan2(corner.y, corner.x));
          phi_hi = std::max(phi_hi, std::atan2(corner.y, corner.x));
          th_lo = std::min(th_lo, std::asin(corner.z / r));
          th_hi = std::max(th_hi, std::asin(corner.z / r));
        }
    std::set<std::pair<int, int>> expected;
    const long i_lo = static_cast<long>(std::floor(phi_lo / scan.sensor.azimuth_res)) - 2;
    const long i_hi = static_cast<long>(std::floor(phi_hi / scan.sensor.azimuth_res)) + 2;
    const long j_lo = static_cast<long>(std::floor(th_lo / scan.sensor.elevation_res)) - 2;
    const long j_hi = static_cast<long>(std::floor(th_hi / scan.sensor.elevation_res)) + 2;
    for (long i = i_lo; i <= i_hi; ++i)
      for (long j = j_lo; j <= j_hi; ++j)
        if (i > std::floor(phi_lo / scan.sensor.azimuth_res) &&
            i < std::floor(phi_hi / scan.sensor.azimuth_res) &&
            j > std::floor(th_lo / scan.sensor.elevation_res) &&
            j < std::floor(th_hi / scan.sensor.elevation_res))
          expected.insert({static_cast<int>(i), static_cast<int>(j)});
    const std::set<std::pair<int, int>> got(w.cells.begin(), w.cells.end());
    CHECK(got == expected);
  }
}

TEST_CASE("occlusion masking") {
  LidarScan scan = box_scan(Vec3d(9, -0.5, -0.5), Vec3d(11, 0.5, 0.5), 0.01, 0.01);
  const RaySet w = ray_window(scan, scan.sensor);

  SUBCASE("near obstacle point masks its cell") {
    scan.obstacle_points = {Vec3d(2, 0.02, 0.03)};
    const auto mask = occluded_rays(scan, scan.sensor, w);
    REQUIRE(mask.size() == 1);
    CHECK(mask[0].first == static_cast<int>(std::floor(std::atan2(0.02, 2.0) / 0.01)));
    const double r = Vec3d(2, 0.02, 0.03).norm();
    CHECK(mask[0].second == static_cast<int>(std::floor(std::asin(0.03 / r) / 0.01)));
  }

  SUBCASE("obstacle outside the azimuth window leaves the mask empty") {
    scan.obstacle_points = {Vec3d(2, 1.9, 0.0)};  // azimuth ~0.76, window ~0.055
    CHECK(occluded_rays(scan, scan.sensor, w).empty());
  }

  SUBCASE("points at or beyond r_min are not occluders") {
    scan.obstacle_points = {Vec3d(9.3, 0.0, 0.0)};  // inside the box region
    CHECK(occluded_rays(scan, scan.sensor, w).empty());
  }

  SUBCASE("random clouds match pointwise predicate evaluation") {
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
      scan.obstacle_points.clear();
      for (int p = 0; p < 200; ++p)
        scan.obstacle_points.push_back(
            Vec3d(rng.uniform(0.5, 12), rng.uniform(-1, 1), rng.uniform(-1, 1)));
      const auto mask = occluded_rays(scan, scan.sensor, w);
      std::set<std::pair<int, int>> expected;
      for (const auto& p : scan.obstacle_points) {
        const double r = p.norm();
        const double phi = std::atan2(p.y, p.x);
        const double theta = std::asin(p.z / r);
        if (r < w.r_min && phi > w.phi_min && phi < w.phi_max && theta > w.theta_min &&
            theta < w.theta_max)
          expected.insert({static_cast<int>(std::floor(phi / 0.01)),
                           static_cast<int>(std::floor(theta / 0.01))});
      }
      CHECK(std::set<std::pair<int, int>>(mask.begin(), mask.end()) == expected);
    }
  }
}

TEST_CASE("triangle intersection under the nonstandard edge convention") {
  const std::vector<Vec3d> verts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  const auto faces = tri({{0, 1, 2}});

  SUBCASE("stated example: hit at (0.25, 0.25, 0) with c=1, u=0.5, v=0.25") {
    const Ray ray{Vec3d(0.25, 0.25, -1), Vec3d(0, 0, 1)};
    const auto hit = intersect(ray, verts, faces);
    REQUIRE(hit.has_value());
    CHECK(hit->distance == doctest::Approx(1.0));
    CHECK(hit->u == doctest::Approx(0.5));
    CHECK(hit->v == doctest::Approx(0.25));
    CHECK((hit->point - Vec3d(0.25, 0.25, 0)).norm() < 1e-12);
  }

  SUBCASE("ray parallel to the plane misses") {
    const Ray ray{Vec3d(0.25, 0.25, -1), Vec3d(1, 0, 0)};
    CHECK(!intersect(ray, verts, faces).has_value());
  }

  SUBCASE("closest of two coaxial triangles wins") {
    std::vector<Vec3d> v2 = verts;
    v2.push_back(Vec3d(0, 0, 0.5));
    v2.push_back(Vec3d(1, 0, 0.5));
    v2.push_back(Vec3d(0, 1, 0.5));
    const auto f2 = tri({{3, 4, 5}, {0, 1, 2}});  // far face listed first
    const Ray ray{Vec3d(0.25, 0.25, -1), Vec3d(0, 0, 1)};
    const auto hit = intersect(ray, v2, f2);
    REQUIRE(hit.has_value());
    CHECK(hit->face == 1);
    CHECK(hit->distance == doctest::Approx(1.0));
  }
}

TEST_CASE("raycast of a sphere covers exactly its silhouette") {
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  const Vec3d center(10, 0, 0);
  const double radius = 0.8;
  make_sphere(center, radius, 24, 32, verts, faces);
  PosedMesh mesh;
  mesh.vertices = verts;
  mesh.faces = &faces;

  LidarScan scan = box_scan(center - Vec3d(radius, radius, radius),
                            center + Vec3d(radius, radius, radius), 0.01, 0.01);
  const RaySet w = ray_window(scan, scan.sensor);
  const SimulatedScan sim = raycast_mesh(w, mesh);
  CHECK(!sim.points.empty());
  // Every returned point lies on the near hemisphere.
  for (const auto& p : sim.points) {
    CHECK(p.norm() < center.norm());
    CHECK(std::abs((p - center).norm() - radius) < 0.06);  // inscribed chord error
  }
  // Rays well inside the silhouette all return exactly one point.
  int inside = 0;
  for (const auto& [i, j] : w.cells) {
    const Vec3d dir = w.cell_direction(i, j);
    const double perp = (center - dir * center.dot(dir)).norm();
    if (perp < radius * 0.97) ++inside;
  }
  CHECK(static_cast<int>(sim.points.size()) >= inside);
  CHECK(sim.points.size() == sim.hits.size());
  CHECK(sim.points.size() == sim.ray_cells.size());
}

TEST_CASE("fully masked window yields an empty scan") {
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  make_sphere(Vec3d(10, 0, 0), 0.5, 8, 12, verts, faces);
  PosedMesh mesh;
  mesh.vertices = verts;
  mesh.faces = &faces;
  LidarScan scan = box_scan(Vec3d(9.5, -0.5, -0.5), Vec3d(10.5, 0.5, 0.5), 0.01, 0.01);
  RaySet w = ray_window(scan, scan.sensor);
  REQUIRE(!w.cells.empty());
  // Wall of witness points at r=2, one per cell center.
  for (const auto& [i, j] : w.cells) {
    const double phi = (i + 0.5) * 0.01, theta = (j + 0.5) * 0.01;
    scan.obstacle_points.push_back(
        Vec3d(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi),
              std::sin(theta)) *
        2.0);
  }
  const auto mask = occluded_rays(scan, scan.sensor, w);
  const RaySet masked = w.without(mask);
  CHECK(masked.cells.empty());
  CHECK(raycast_mesh(masked, mesh).points.empty());
}

TEST_CASE("bvh caster matches linear scan and the independent oracle") {
  Rng rng(47);
  for (int trial = 0; trial < 6; ++trial) {
    // Random triangle soup in a shell in front of the sensor.
    std::vector<Vec3d> verts;
    std::vector<std::array<int, 3>> faces;
    const int n_faces = 40 + trial * 90;
    for (int f = 0; f < n_faces; ++f) {
      const Vec3d base(rng.uniform(5, 12), rng.uniform(-2, 2), rng.uniform(-2, 2));
      const int v0 = static_cast<int>(verts.size());
      verts.push_back(base);
      verts.push_back(base + Vec3d(rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)));
      verts.push_back(base + Vec3d(rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3)));
      faces.push_back({v0, v0 + 1, v0 + 2});
    }
    PosedMesh mesh;
    mesh.vertices = verts;
    mesh.faces = &faces;
    const MeshBvh bvh(mesh);

    for (int r = 0; r < 400; ++r) {
      Vec3d dir(rng.uniform(0.5, 1.0), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4));
      const Ray ray{Vec3d(0, 0, 0), dir.normalized()};
      const auto fast = bvh.intersect(ray);
      const auto slow = intersect(ray, verts, faces);   // linear reference
      const auto orac = oracle_cast(ray, verts, faces);  // independent algebra
      CHECK(fast.has_value() == slow.has_value());
      if (fast && slow) {
        CHECK(fast->face == slow->face);
        CHECK(fast->distance == doctest::Approx(slow->distance).epsilon(1e-12));
      }
      CHECK(fast.has_value() == orac.has_value());
      if (fast && orac) {
        CHECK(fast->face == orac->face);
        CHECK(std::abs(fast->distance - orac->distance) < 1e-9);
      }
    }
  }
}

TEST_CASE("closest-hit: no other triangle intersects at smaller distance") {
  Rng rng(53);
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  make_sphere(Vec3d(8, 0, 0), 1.0, 10, 14, verts, faces);
  const MeshBvh bvh(verts, faces);
  for (int r = 0; r < 300; ++r) {
    Vec3d dir(1.0, rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15));
    const Ray ray{Vec3d(0, 0, 0), dir.normalized()};
    const auto hit = bvh.intersect(ray);
    if (!hit) continue;
    for (const auto& f : faces) {
      const auto th = intersect_triangle(ray, verts[f[0]], verts[f[1]], verts[f[2]]);
      if (th) CHECK(th->distance >= hit->distance - 1e-12);
    }
  }
}

TEST_CASE("hit points reproduce their barycentric combination") {
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  make_sphere(Vec3d(7, 0.3, -0.2), 0.9, 12, 16, verts, faces);
  PosedMesh mesh;
  mesh.vertices = verts;
  mesh.faces = &faces;
  LidarScan scan = box_scan(Vec3d(6.1, -0.6, -1.1), Vec3d(7.9, 1.2, 0.7), 0.02, 0.02);
  const SimulatedScan sim = raycast_mesh(ray_window(scan, scan.sensor), mesh);
  REQUIRE(!sim.points.empty());
  for (size_t k = 0; k < sim.points.size(); ++k) {
    const auto& hit = sim.hits[k];
    const auto& f = faces[hit.face];
    const Vec3d recon =
        verts[f[0]] * (1.0 - hit.u) + verts[f[1]] * (hit.u - hit.v) + verts[f[2]] * hit.v;
    CHECK((recon - sim.points[k]).norm() < 1e-9);
  }
}

TEST_CASE("simulated points are linear in their triangle's vertices") {
  // Holding (face, u, v) fixed, the Jacobian blocks are (1-u), (u-v), v.
  const double u = 0.62, v = 0.31;
  ad::Tape tape;
  std::vector<double> base = {0.1, 0.2, 0.3, 1.1, 0.15, 0.4, 0.5, 1.3, 0.2};
  std::vector<ad::Var> leaves;
  for (int k = 0; k < 9; ++k) leaves.push_back(ad::leaf(tape, base[k]));
  const Vec3<ad::Var> v1(leaves[0], leaves[1], leaves[2]);
  const Vec3<ad::Var> v2(leaves[3], leaves[4], leaves[5]);
  const Vec3<ad::Var> v3(leaves[6], leaves[7], leaves[8]);
  const Vec3<ad::Var> y = v1 * ad::Var(1.0 - u) + v2 * ad::Var(u - v) + v3 * ad::Var(v);
  const auto adj = tape.backward(y.x.i);
  CHECK(adj[leaves[0].i] == doctest::Approx(1.0 - u));
  CHECK(adj[leaves[3].i] == doctest::Approx(u - v));
  CHECK(adj[leaves[6].i] == doctest::Approx(v));
  CHECK(adj[leaves[1].i] == 0.0);  // off-coordinate blocks vanish
}

TEST_CASE("no simulated point is emitted along a masked direction") {
  std::vector<Vec3d> verts;
  std::vector<std::array<int, 3>> faces;
  make_sphere(Vec3d(10, 0, 0), 0.8, 12, 16, verts, faces);
  PosedMesh mesh;
  mesh.vertices = verts;
  mesh.faces = &faces;
  LidarScan scan = box_scan(Vec3d(9.2, -0.8, -0.8), Vec3d(10.8, 0.8, 0.8), 0.01, 0.01);
  RaySet w = ray_window(scan, scan.sensor);
  // Mask a patch of cells via obstacle points.
  Rng rng(61);
  for (int p = 0; p < 40; ++p) {
    const auto& [i, j] = w.cells[rng.uniform_int(0, static_cast<int>(w.cells.size()) - 1)];
    scan.obstacle_points.push_back(w.cell_direction(i, j) * 3.0);
  }
  const auto mask = occluded_rays(scan, scan.sensor, w);
  REQUIRE(!mask.empty());
  const SimulatedScan sim = raycast_mesh(w.without(mask), mesh);
  for (const auto& cell : sim.ray_cells)
    CHECK(!std::binary_search(mask.begin(), mask.end(), cell));
}
