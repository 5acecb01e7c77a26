#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bodyfit/error.hpp"
#include "bodyfit/vec.hpp"

namespace bodyfit {

// Canonical humanoid template: mesh, skinning weights and skeletal tree.
// Immutable after construction; all posing functions are pure.
struct SkeletonTemplate {
  std::vector<Vec3d> vertices;
  std::vector<Vec3d> normals;
  std::vector<std::array<int, 3>> faces;
  // Sparse per-vertex blend weights, (joint, weight) pairs.
  std::vector<std::vector<std::pair<int, double>>> blend_weights;
  std::vector<Vec3d> joints;
  std::vector<int> parents;  // -1 marks the root
  // Scale-sharing class per joint; -1 for the root (its scale is fixed at 1).
  std::vector<int> symmetry_class;
  int num_scale_classes = 0;
  std::vector<std::string> joint_names;

  // Root-first traversal order; filled by finalize().
  std::vector<int> topo_order;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_joints() const { return static_cast<int>(joints.size()); }
  int root() const;
  int joint_index(const std::string& name) const;  // -1 if absent

  // Validates every invariant and computes topo_order. Throws ValidationError.
  void finalize();
};

template <class T>
struct PoseT {
  std::vector<Vec3<T>> joint_rotations;  // axis-angle per joint
  Vec3<T> root_offset{};
};
using PoseParams = PoseT<double>;

template <class T>
struct ShapeT {
  std::vector<T> bone_scales;    // one per symmetry class
  std::vector<T> displacements;  // one per vertex, along the template normal
};
using ShapeParams = ShapeT<double>;

inline ShapeParams neutral_shape(const SkeletonTemplate& tmpl) {
  ShapeParams s;
  s.bone_scales.assign(tmpl.num_scale_classes, 1.0);
  s.displacements.assign(tmpl.vertices.size(), 0.0);
  return s;
}

// Axis-angle exponential. Total function; Taylor branch keeps it smooth
// through the origin.
template <class T>
Mat3<T> rodrigues(const Vec3<T>& aa) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta_sq = aa.squaredNorm();
  T k_sin, k_cos;  // sin(t)/t and (1-cos(t))/t^2
  if (value_of(theta_sq) < 1e-16) {
    k_sin = T(1.0) - theta_sq / T(6.0);
    k_cos = T(0.5) - theta_sq / T(24.0);
  } else {
    const T theta = sqrt(theta_sq);
    k_sin = sin(theta) / theta;
    k_cos = (T(1.0) - cos(theta)) / theta_sq;
  }
  Mat3<T> r = Mat3<T>::identity();
  // I + k_sin*[aa]x + k_cos*[aa]x^2
  const T &wx = aa.x, &wy = aa.y, &wz = aa.z;
  r(0, 0) += k_cos * (-wy * wy - wz * wz);
  r(0, 1) = -k_sin * wz + k_cos * wx * wy;
  r(0, 2) = k_sin * wy + k_cos * wx * wz;
  r(1, 0) = k_sin * wz + k_cos * wx * wy;
  r(1, 1) += k_cos * (-wx * wx - wz * wz);
  r(1, 2) = -k_sin * wx + k_cos * wy * wz;
  r(2, 0) = -k_sin * wy + k_cos * wx * wz;
  r(2, 1) = k_sin * wx + k_cos * wy * wz;
  r(2, 2) += k_cos * (-wx * wx - wy * wy);
  return r;
}

// Matrix logarithm back to axis-angle (double only; used by IO and retarget).
Vec3d axis_angle_from_matrix(const Mat3d& r);
// Wraps so that the magnitude is <= pi (IO canonical range).
Vec3d wrap_axis_angle(const Vec3d& aa);

template <class T>
struct JointTransformsT {
  std::vector<Transform<T>> world;   // T_k, template frame -> posed frame
  std::vector<Vec3<T>> posed_joints;  // T_k j_k + c
};
using JointTransforms = JointTransformsT<double>;

// Chain transforms: each joint contributes its rotation about its own
// template position and its bone scale about its parent's position, composed
// along the ancestor chain. Scales thus change bone lengths between a joint
// and its parent, and are shared within symmetry classes.
template <class T>
JointTransformsT<T> joint_transforms(const SkeletonTemplate& tmpl, const PoseT<T>& pose,
                                     const ShapeT<T>& shape) {
  const int K = tmpl.num_joints();
  if (static_cast<int>(pose.joint_rotations.size()) != K)
    throw ValidationError("joint_transforms: pose has wrong joint count");
  if (static_cast<int>(shape.bone_scales.size()) != tmpl.num_scale_classes)
    throw ValidationError("joint_transforms: wrong bone scale count");
  JointTransformsT<T> out;
  out.world.resize(K);
  out.posed_joints.resize(K);
  for (int k : tmpl.topo_order) {
    const Mat3<T> rot = rodrigues(pose.joint_rotations[k]);
    const Vec3<T> jk(T(tmpl.joints[k].x), T(tmpl.joints[k].y), T(tmpl.joints[k].z));
    Transform<T> block;
    const int parent = tmpl.parents[k];
    if (parent < 0) {
      block.linear = rot;
      block.translation = jk - rot * jk;
      out.world[k] = block;
    } else {
      const T s = shape.bone_scales[tmpl.symmetry_class[k]];
      const Vec3<T> jq(T(tmpl.joints[parent].x), T(tmpl.joints[parent].y),
                       T(tmpl.joints[parent].z));
      block.linear = rot * s;
      block.translation = jq + (jk - jq) * s - block.linear * jk;
      out.world[k] = out.world[parent] * block;
    }
    out.posed_joints[k] = out.world[k].apply(jk) + pose.root_offset;
  }
  return out;
}

// One skinned vertex: sum_k w_ik T_k (v_i + n_i d_i) + c.
template <class T>
Vec3<T> pose_vertex(const SkeletonTemplate& tmpl, const JointTransformsT<T>& jt,
                    const ShapeT<T>& shape, const Vec3<T>& root_offset, int i) {
  const Vec3d& v = tmpl.vertices[i];
  const Vec3d& n = tmpl.normals[i];
  const T& d = shape.displacements[i];
  const Vec3<T> p(T(v.x) + T(n.x) * d, T(v.y) + T(n.y) * d, T(v.z) + T(n.z) * d);
  Vec3<T> acc(T(0.0), T(0.0), T(0.0));
  for (const auto& [joint, w] : tmpl.blend_weights[i]) acc += jt.world[joint].apply(p) * T(w);
  return acc + root_offset;
}

struct PosedMesh {
  std::vector<Vec3d> vertices;
  const std::vector<std::array<int, 3>>* faces = nullptr;  // shared with the template
  std::vector<int> provenance;  // template vertex index per posed vertex
};

PosedMesh pose_mesh(const SkeletonTemplate& tmpl, const PoseParams& pose,
                    const ShapeParams& shape);

// Procedural built-in template (capsule-and-ellipsoid mannequin, 17 joints).
struct TemplateConfig {
  int limb_segments = 12;   // radial segments around limbs
  int torso_segments = 16;  // radial segments around the torso
  int limb_rings = 4;       // cylindrical rings along a limb
  int cap_rings = 2;        // rings per hemispherical cap

  double torso_bottom = -0.10, torso_top = 0.48;
  double hip_halfwidth_mesh = 0.150, chest_halfwidth = 0.175;
  double hip_depth = 0.095, chest_depth = 0.105;
  double neck_radius = 0.050;
  double head_rx = 0.085, head_ry = 0.075, head_rz = 0.095;
  double upper_arm_radius = 0.050, forearm_radius = 0.042, hand_length = 0.09;
  double thigh_radius = 0.075, shin_radius = 0.055, foot_radius = 0.035;
  double foot_length = 0.16;

  double shoulder_y = 0.19, shoulder_z = 0.46;
  double elbow_y = 0.225, elbow_z = 0.16;
  double wrist_y = 0.245, wrist_z = -0.10;
  double hip_y = 0.10, hip_z = -0.06;
  double knee_z = -0.48, ankle_z = -0.88;
  double spine1_z = 0.14, spine2_z = 0.32, neck_z = 0.50, head_z = 0.62;

  double weight_smoothing = 0.03;  // softening distance for skinning weights
  int weight_influences = 4;       // kept joints per vertex
};

SkeletonTemplate make_template(const TemplateConfig& config = {});

}  // namespace bodyfit
