#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "bodyfit/ad.hpp"
#include "bodyfit/body_model.hpp"
#include "bodyfit/optim.hpp"
#include "bodyfit/raycaster.hpp"
#include "bodyfit/rng.hpp"

using namespace bodyfit;

namespace {

// Quaternion-exponential rotation, the independent oracle for rodrigues.
Mat3d quat_rotation(const Vec3d& aa) {
  const double theta = aa.norm();
  double w = std::cos(0.5 * theta);
  Vec3d v = theta < 1e-300 ? Vec3d(0, 0, 0) : aa * (std::sin(0.5 * theta) / theta);
  Mat3d r;
  r(0, 0) = 1 - 2 * (v.y * v.y + v.z * v.z);
  r(0, 1) = 2 * (v.x * v.y - w * v.z);
  r(0, 2) = 2 * (v.x * v.z + w * v.y);
  r(1, 0) = 2 * (v.x * v.y + w * v.z);
  r(1, 1) = 1 - 2 * (v.x * v.x + v.z * v.z);
  r(1, 2) = 2 * (v.y * v.z - w * v.x);
  r(2, 0) = 2 * (v.x * v.z - w * v.y);
  r(2, 1) = 2 * (v.y * v.z + w * v.x);
  r(2, 2) = 1 - 2 * (v.x * v.x + v.y * v.y);
  return r;
}

double mat_diff(const Mat3d& a, const Mat3d& b) {
  double m = 0;
  for (int i = 0; i < 9; ++i) m = std::max(m, std::abs(a.m[i] - b.m[i]));
  return m;
}

// Two-joint template: root at the origin, child along +z, one vertex bound
// hard to each joint.
SkeletonTemplate two_joint_template() {
  SkeletonTemplate t;
  t.joints = {{0, 0, 0}, {0, 0, 1}};
  t.parents = {-1, 0};
  t.symmetry_class = {-1, 0};
  t.num_scale_classes = 1;
  t.joint_names = {"root", "child"};
  t.vertices = {{0.1, 0, 0.2}, {0.1, 0, 1.2}};
  t.normals = {{1, 0, 0}, {1, 0, 0}};
  t.faces = {};
  t.blend_weights = {{{0, 1.0}}, {{1, 1.0}}};
  t.finalize();
  return t;
}

PoseParams rest_pose(const SkeletonTemplate& t) {
  PoseParams p;
  p.joint_rotations.assign(t.num_joints(), Vec3d(0, 0, 0));
  return p;
}

}  // namespace

TEST_CASE("rodrigues identity and quarter turn") {
  const Mat3d eye = rodrigues(Vec3d(0, 0, 0));
  CHECK(mat_diff(eye, Mat3d::identity()) == 0.0);
  const Mat3d quarter = rodrigues(Vec3d(0, 0, M_PI_2));
  const Vec3d r = quarter * Vec3d(1, 0, 0);
  CHECK(r.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.y == doctest::Approx(1.0));
  CHECK(std::abs(r.z) < 1e-15);
}

TEST_CASE("rodrigues matches the quaternion-exponential oracle") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec3d aa(rng.normal(0, 1.2), rng.normal(0, 1.2), rng.normal(0, 1.2));
    CHECK(mat_diff(rodrigues(aa), quat_rotation(aa)) < 1e-10);
  }
  // Taylor branch
  for (int i = 0; i < 50; ++i) {
    const Vec3d aa(rng.normal(0, 1e-9), rng.normal(0, 1e-9), rng.normal(0, 1e-9));
    CHECK(mat_diff(rodrigues(aa), quat_rotation(aa)) < 1e-12);
  }
}

TEST_CASE("rodrigues output is a proper rotation") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Vec3d aa(rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2));
    const Mat3d r = rodrigues(aa);
    CHECK(r.det() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(mat_diff(r * r.transpose(), Mat3d::identity()) < 1e-9);
  }
}

TEST_CASE("axis_angle_from_matrix inverts rodrigues") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Vec3d aa(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
    aa = wrap_axis_angle(aa);
    const Vec3d back = axis_angle_from_matrix(rodrigues(aa));
    CHECK((back - aa).norm() < 1e-8);
  }
  // Near-pi branch
  const Vec3d near_pi = Vec3d(1, 0.2, -0.3).normalized() * (M_PI - 1e-9);
  const Vec3d back = axis_angle_from_matrix(rodrigues(near_pi));
  CHECK(mat_diff(rodrigues(back), rodrigues(near_pi)) < 1e-6);
}

TEST_CASE("joint transforms: identity pose is the identity map") {
  const SkeletonTemplate t = make_template();
  PoseParams pose = rest_pose(t);
  pose.root_offset = Vec3d(0.5, -0.25, 2.0);
  const auto jt = joint_transforms(t, pose, neutral_shape(t));
  for (int k = 0; k < t.num_joints(); ++k) {
    CHECK(mat_diff(jt.world[k].linear, Mat3d::identity()) < 1e-12);
    CHECK(jt.world[k].translation.norm() < 1e-12);
    CHECK((jt.posed_joints[k] - (t.joints[k] + pose.root_offset)).norm() < 1e-12);
  }
}

TEST_CASE("bone scale acts about the parent joint") {
  const SkeletonTemplate t = two_joint_template();
  PoseParams pose = rest_pose(t);
  pose.root_offset = Vec3d(3, 1, -2);
  ShapeParams shape = neutral_shape(t);
  shape.bone_scales[0] = 2.0;
  const auto jt = joint_transforms(t, pose, shape);
  // j_child = c + j_parent + 2 (j_child - j_parent)
  const Vec3d expected = pose.root_offset + t.joints[0] + (t.joints[1] - t.joints[0]) * 2.0;
  CHECK((jt.posed_joints[1] - expected).norm() < 1e-12);
  CHECK((jt.posed_joints[0] - (t.joints[0] + pose.root_offset)).norm() < 1e-12);
}

TEST_CASE("chain transforms match a naive left-to-right product oracle") {
  // Five-joint chain with random rotations and scales.
  SkeletonTemplate t;
  Rng rng(17);
  t.joints.resize(5);
  t.parents = {-1, 0, 1, 2, 3};
  t.symmetry_class = {-1, 0, 1, 2, 3};
  t.num_scale_classes = 4;
  for (int k = 0; k < 5; ++k) {
    t.joints[k] = Vec3d(rng.normal(0, 0.3), rng.normal(0, 0.3), 0.4 * k);
    t.joint_names.push_back("j" + std::to_string(k));
  }
  t.vertices = {{0, 0, 0}};
  t.normals = {{0, 0, 1}};
  t.blend_weights = {{{4, 1.0}}};
  t.finalize();

  for (int trial = 0; trial < 20; ++trial) {
    PoseParams pose;
    ShapeParams shape;
    for (int k = 0; k < 5; ++k)
      pose.joint_rotations.push_back(
          Vec3d(rng.normal(0, 0.8), rng.normal(0, 0.8), rng.normal(0, 0.8)));
    for (int c = 0; c < 4; ++c) shape.bone_scales.push_back(rng.uniform(0.6, 1.7));
    shape.displacements = {0.0};

    const auto jt = joint_transforms(t, pose, shape);

    // Oracle: explicit per-joint blocks multiplied root-to-k in order.
    for (int k = 0; k < 5; ++k) {
      Transformd acc = Transformd::identity();
      for (int p = 0; p <= k; ++p) {
        const Mat3d rot = rodrigues(pose.joint_rotations[p]);
        Transformd block;
        if (t.parents[p] < 0) {
          block.linear = rot;
          block.translation = t.joints[p] - rot * t.joints[p];
        } else {
          const double s = shape.bone_scales[t.symmetry_class[p]];
          const Vec3d jq = t.joints[t.parents[p]];
          block.linear = rot * s;
          block.translation = jq + (t.joints[p] - jq) * s - block.linear * t.joints[p];
        }
        acc = acc * block;
      }
      CHECK(mat_diff(jt.world[k].linear, acc.linear) < 1e-10);
      CHECK((jt.world[k].translation - acc.translation).norm() < 1e-10);
    }
  }
}

TEST_CASE("finalize rejects non-tree parents") {
  SkeletonTemplate t = two_joint_template();
  t.parents = {1, 0};  // cycle, no root
  CHECK_THROWS_AS(t.finalize(), ValidationError);
}

TEST_CASE("pose_mesh identity reproduces the template") {
  const SkeletonTemplate t = make_template();
  const PosedMesh posed = pose_mesh(t, rest_pose(t), neutral_shape(t));
  double max_err = 0;
  for (int i = 0; i < t.num_vertices(); ++i)
    max_err = std::max(max_err, (posed.vertices[i] - t.vertices[i]).norm());
  CHECK(max_err < 1e-12);
  CHECK(posed.faces == &t.faces);
  CHECK(posed.provenance[42] == 42);
}

TEST_CASE("pose_mesh pure translation") {
  const SkeletonTemplate t = make_template();
  PoseParams pose = rest_pose(t);
  pose.root_offset = Vec3d(1, 2, 3);
  const PosedMesh posed = pose_mesh(t, pose, neutral_shape(t));
  for (int i = 0; i < t.num_vertices(); i += 97)
    CHECK((posed.vertices[i] - (t.vertices[i] + pose.root_offset)).norm() < 1e-12);
}

TEST_CASE("hard-weighted elbow bend rotates distal vertices rigidly") {
  const SkeletonTemplate t = two_joint_template();
  PoseParams pose = rest_pose(t);
  pose.joint_rotations[1] = Vec3d(0, M_PI_2, 0);  // bend at the child joint
  const PosedMesh posed = pose_mesh(t, pose, neutral_shape(t));
  // Vertex 0 is bound to the root: unmoved.
  CHECK((posed.vertices[0] - t.vertices[0]).norm() < 1e-12);
  // Vertex 1 is bound to the child: rotates rigidly about the child joint.
  const Vec3d expected =
      t.joints[1] + rodrigues(Vec3d(0, M_PI_2, 0)) * (t.vertices[1] - t.joints[1]);
  CHECK((posed.vertices[1] - expected).norm() < 1e-12);
}

TEST_CASE("make_template satisfies all invariants") {
  const SkeletonTemplate t = make_template();  // finalize() ran inside
  CHECK(t.num_joints() == 17);
  CHECK(t.num_vertices() > 1000);
  CHECK(t.num_vertices() < 2000);
  CHECK(t.root() == 0);

  SUBCASE("watertight: every edge is shared by exactly two faces, opposite orientation") {
    std::map<std::pair<int, int>, int> directed;
    for (const auto& f : t.faces)
      for (int e = 0; e < 3; ++e) directed[{f[e], f[(e + 1) % 3]}]++;
    for (const auto& [edge, count] : directed) {
      CHECK(count == 1);
      CHECK(directed.count({edge.second, edge.first}) == 1);
    }
  }

  SUBCASE("left/right knees mirror across the sagittal plane") {
    const Vec3d l = t.joints[t.joint_index("knee_l")];
    const Vec3d r = t.joints[t.joint_index("knee_r")];
    CHECK(std::abs(l.x - r.x) < 1e-9);
    CHECK(std::abs(l.y + r.y) < 1e-9);
    CHECK(std::abs(l.z - r.z) < 1e-9);
  }

  SUBCASE("mirror joints share a symmetry class") {
    CHECK(t.symmetry_class[t.joint_index("knee_l")] == t.symmetry_class[t.joint_index("knee_r")]);
    CHECK(t.symmetry_class[t.joint_index("wrist_l")] ==
          t.symmetry_class[t.joint_index("wrist_r")]);
    CHECK(t.symmetry_class[t.joint_index("pelvis")] == -1);
  }

  SUBCASE("rejects non-positive dimensions") {
    TemplateConfig bad;
    bad.thigh_radius = -0.1;
    CHECK_THROWS_AS(make_template(bad), ValidationError);
    TemplateConfig bad2;
    bad2.limb_segments = 0;
    CHECK_THROWS_AS(make_template(bad2), ValidationError);
  }
}

TEST_CASE("rest-pose trunk window fills with hits from 10 m") {
  const SkeletonTemplate t = make_template();
  const PosedMesh posed = pose_mesh(t, rest_pose(t), neutral_shape(t));

  // Window of the mid-trunk region (torso wall between waist and chest).
  std::vector<Vec3d> trunk;
  for (const Vec3d& v : t.vertices)
    if (v.z >= -0.05 && v.z <= 0.32 && std::abs(v.y) <= 0.15 && std::abs(v.x) <= 0.12)
      trunk.push_back(v);
  REQUIRE(trunk.size() > 40);

  LidarScan scan;
  scan.sensor.origin = Vec3d(-10, 0, 0.2);
  scan.sensor.azimuth_res = 0.002;
  scan.sensor.elevation_res = 0.002;
  scan.bbox = bounding_box(trunk);
  const RaySet window = ray_window(scan, scan.sensor);
  REQUIRE(window.cells.size() > 100);

  const MeshBvh bvh(posed);
  int hits = 0;
  for (const auto& [i, j] : window.cells)
    if (bvh.intersect(Ray{scan.sensor.origin, window.cell_direction(i, j)})) ++hits;
  CHECK(static_cast<double>(hits) / window.cells.size() >= 0.95);
}

TEST_CASE("rigid equivariance: rotating the root rotates the posed mesh") {
  const SkeletonTemplate t = make_template();
  Rng rng(23);
  PoseParams pose = rest_pose(t);
  for (auto& aa : pose.joint_rotations)
    aa = Vec3d(rng.normal(0, 0.2), rng.normal(0, 0.2), rng.normal(0, 0.2));
  const ShapeParams shape = neutral_shape(t);

  const Vec3d spin(0.3, -0.5, 0.9);
  const Mat3d r = rodrigues(spin);
  PoseParams rotated = pose;
  rotated.joint_rotations[0] = axis_angle_from_matrix(r * rodrigues(pose.joint_rotations[0]));

  const PosedMesh base = pose_mesh(t, pose, shape);
  const PosedMesh rot = pose_mesh(t, rotated, shape);
  // Root joint sits at the origin, so vertices rotate about it.
  double max_err = 0;
  for (int i = 0; i < t.num_vertices(); i += 13)
    max_err = std::max(max_err, (rot.vertices[i] - r * base.vertices[i]).norm());
  CHECK(max_err < 1e-8);
}

TEST_CASE("scale symmetry: mirrored poses produce the mirrored mesh") {
  const SkeletonTemplate t = make_template();
  Rng rng(29);
  PoseParams pose = rest_pose(t);
  for (auto& aa : pose.joint_rotations)
    aa = Vec3d(rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3));
  ShapeParams shape = neutral_shape(t);
  for (auto& s : shape.bone_scales) s = rng.uniform(0.85, 1.2);

  // Mirror across y=0: swap left/right joints, conjugate rotations.
  PoseParams mirrored = pose;
  for (int k = 0; k < t.num_joints(); ++k) {
    std::string name = t.joint_names[k];
    if (name.ends_with("_l"))
      name = name.substr(0, name.size() - 2) + "_r";
    else if (name.ends_with("_r"))
      name = name.substr(0, name.size() - 2) + "_l";
    const int src = t.joint_index(name);
    const Vec3d aa = pose.joint_rotations[src];
    mirrored.joint_rotations[k] = Vec3d(-aa.x, aa.y, -aa.z);
  }

  const PosedMesh base = pose_mesh(t, pose, shape);
  const PosedMesh mir = pose_mesh(t, mirrored, shape);
  // Set-level comparison: the mirrored posed set equals the posed mirrored set.
  std::vector<Vec3d> flipped = base.vertices;
  for (auto& p : flipped) p.y = -p.y;
  double hausdorff = 0;
  for (const auto& p : flipped) {
    double best = 1e30;
    for (const auto& q : mir.vertices) best = std::min(best, (p - q).squaredNorm());
    hausdorff = std::max(hausdorff, best);
  }
  CHECK(std::sqrt(hausdorff) < 1e-9);
}

TEST_CASE("pose_mesh is differentiable in all parameter groups") {
  const SkeletonTemplate t = make_template();
  Rng rng(31);
  ParamBlock params = ParamBlock::zeros(ParamLayout{1, t.num_joints(), t.num_scale_classes,
                                                    t.num_vertices()});
  PoseParams pose = rest_pose(t);
  for (auto& aa : pose.joint_rotations)
    aa = Vec3d(rng.normal(0, 0.3), rng.normal(0, 0.3), rng.normal(0, 0.3));
  pose.root_offset = Vec3d(0.2, -0.1, 0.4);
  ShapeParams shape = neutral_shape(t);
  for (auto& s : shape.bone_scales) s = rng.uniform(0.8, 1.3);
  for (auto& d : shape.displacements) d = rng.normal(0, 0.004);
  params.set_pose(0, pose);
  params.set_shape(shape);

  const std::vector<int> probe_vertices = {5, 333, 777, 1111};
  const auto value = [&](const ParamBlock& p) {
    const auto jt = joint_transforms(t, p.pose(0), p.shape());
    double sum = 0;
    for (int v : probe_vertices) {
      const Vec3d pv = pose_vertex(t, jt, p.shape(), p.pose(0).root_offset, v);
      sum += pv.x + 2 * pv.y - 0.5 * pv.z;
    }
    return sum;
  };

  ad::Tape tape;
  const BoundParams bound = bind_params(params, tape, StageMask::all());
  const auto jt = joint_transforms(t, bound.poses[0], bound.shape);
  ad::Var total(0.0);
  for (int v : probe_vertices) {
    const Vec3<ad::Var> pv = pose_vertex(t, jt, bound.shape, bound.poses[0].root_offset, v);
    total += pv.x + ad::Var(2.0) * pv.y - ad::Var(0.5) * pv.z;
  }
  const auto adj = tape.backward(total.i);

  const double h = 1e-5;
  Rng pick(37);
  int checked = 0;
  for (int s = 0; s < 60; ++s) {
    const int coord = pick.uniform_int(0, params.layout.size() - 1);
    ParamBlock plus = params, minus = params;
    plus.data[coord] += h;
    minus.data[coord] -= h;
    const double fd = (value(plus) - value(minus)) / (2 * h);
    const double analytic = bound.leaf_node[coord] >= 0 ? adj[bound.leaf_node[coord]] : 0.0;
    const double rel = std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
    CHECK(rel < 1e-4);
    ++checked;
  }
  CHECK(checked == 60);
}
