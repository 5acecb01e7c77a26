#include "bodyfit/body_model.hpp"

#include <algorithm>
#include <cmath>

namespace bodyfit {

int SkeletonTemplate::root() const {
  for (int k = 0; k < num_joints(); ++k)
    if (parents[k] < 0) return k;
  return -1;
}

int SkeletonTemplate::joint_index(const std::string& name) const {
  for (int k = 0; k < static_cast<int>(joint_names.size()); ++k)
    if (joint_names[k] == name) return k;
  return -1;
}

void SkeletonTemplate::finalize() {
  const int n = num_vertices();
  const int K = num_joints();
  if (K == 0) throw ValidationError("template: no joints");
  if (normals.size() != vertices.size() || blend_weights.size() != vertices.size())
    throw ValidationError("template: vertex attribute counts disagree");
  if (parents.size() != joints.size() || symmetry_class.size() != joints.size())
    throw ValidationError("template: joint attribute counts disagree");

  int root_count = 0;
  for (int k = 0; k < K; ++k) {
    if (parents[k] < 0) {
      ++root_count;
      if (symmetry_class[k] != -1)
        throw ValidationError("template: root joint must not carry a scale class");
    } else if (parents[k] >= K) {
      throw ValidationError("template: parent index out of range");
    } else if (symmetry_class[k] < 0 || symmetry_class[k] >= num_scale_classes) {
      throw ValidationError("template: joint " + std::to_string(k) + " has no valid scale class");
    }
  }
  if (root_count != 1) throw ValidationError("template: tree must have exactly one root");

  // Root-first order; also detects cycles.
  topo_order.clear();
  topo_order.reserve(K);
  std::vector<char> placed(K, 0);
  topo_order.push_back(root());
  placed[root()] = 1;
  for (int pass = 0; pass < K; ++pass) {
    for (int k = 0; k < K; ++k)
      if (!placed[k] && placed[parents[k]]) {
        topo_order.push_back(k);
        placed[k] = 1;
      }
    if (static_cast<int>(topo_order.size()) == K) break;
  }
  if (static_cast<int>(topo_order.size()) != K)
    throw ValidationError("template: parents do not form a tree (cycle detected)");

  for (int i = 0; i < n; ++i) {
    if (std::abs(normals[i].norm() - 1.0) > 1e-9)
      throw ValidationError("template: normal " + std::to_string(i) + " is not unit length");
    double wsum = 0.0;
    for (const auto& [j, w] : blend_weights[i]) {
      if (j < 0 || j >= K) throw ValidationError("template: blend weight joint index out of range");
      if (w < 0.0) throw ValidationError("template: negative blend weight");
      wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9)
      throw ValidationError("template: blend weights of vertex " + std::to_string(i) +
                            " sum to " + std::to_string(wsum));
  }
  for (const auto& f : faces)
    for (int v : f)
      if (v < 0 || v >= n) throw ValidationError("template: face references invalid vertex");
}

Vec3d axis_angle_from_matrix(const Mat3d& r) {
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  const double c = std::clamp((tr - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3d skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-8) return skew * 0.5;
  if (theta > M_PI - 1e-6) {
    // Near pi the skew part vanishes; recover the axis from R + I.
    Vec3d axis(std::sqrt(std::max(0.0, (r(0, 0) + 1.0) * 0.5)),
               std::sqrt(std::max(0.0, (r(1, 1) + 1.0) * 0.5)),
               std::sqrt(std::max(0.0, (r(2, 2) + 1.0) * 0.5)));
    // Fix signs using the largest component.
    int m = 0;
    if (axis.y > axis[m]) m = 1;
    if (axis.z > axis[m]) m = 2;
    if (m == 0) {
      axis.y = std::copysign(axis.y, r(0, 1) + r(1, 0));
      axis.z = std::copysign(axis.z, r(0, 2) + r(2, 0));
    } else if (m == 1) {
      axis.x = std::copysign(axis.x, r(0, 1) + r(1, 0));
      axis.z = std::copysign(axis.z, r(1, 2) + r(2, 1));
    } else {
      axis.x = std::copysign(axis.x, r(0, 2) + r(2, 0));
      axis.y = std::copysign(axis.y, r(1, 2) + r(2, 1));
    }
    return axis.normalized() * theta;
  }
  return skew * (theta / (2.0 * std::sin(theta)));
}

Vec3d wrap_axis_angle(const Vec3d& aa) {
  double theta = aa.norm();
  if (theta <= M_PI || theta < 1e-12) return aa;
  const Vec3d axis = aa / theta;
  theta = std::fmod(theta, 2.0 * M_PI);
  if (theta > M_PI) theta -= 2.0 * M_PI;
  return axis * theta;
}

PosedMesh pose_mesh(const SkeletonTemplate& tmpl, const PoseParams& pose,
                    const ShapeParams& shape) {
  const auto jt = joint_transforms(tmpl, pose, shape);
  PosedMesh out;
  out.faces = &tmpl.faces;
  const int n = tmpl.num_vertices();
  out.vertices.resize(n);
  out.provenance.resize(n);
  for (int i = 0; i < n; ++i) {
    out.vertices[i] = pose_vertex(tmpl, jt, shape, pose.root_offset, i);
    out.provenance[i] = i;
  }
  return out;
}

namespace {

struct MeshBuilder {
  std::vector<Vec3d> vertices;
  std::vector<std::array<int, 3>> faces;

  int add(const Vec3d& v) {
    vertices.push_back(v);
    return static_cast<int>(vertices.size()) - 1;
  }

  // Stitches a stack of rings (bottom to top, equal segment count) and two
  // poles into a closed surface with outward orientation.
  void stitch(const Vec3d& bottom_pole, const std::vector<std::vector<int>>& rows,
              const Vec3d& top_pole) {
    const int bp = add(bottom_pole);
    const int tp = add(top_pole);
    const int nseg = static_cast<int>(rows.front().size());
    for (int j = 0; j < nseg; ++j) {
      const int jn = (j + 1) % nseg;
      faces.push_back({bp, rows.front()[jn], rows.front()[j]});
      faces.push_back({tp, rows.back()[j], rows.back()[jn]});
    }
    for (size_t r = 0; r + 1 < rows.size(); ++r) {
      for (int j = 0; j < nseg; ++j) {
        const int jn = (j + 1) % nseg;
        const int a = rows[r][j], b = rows[r][jn];
        const int c = rows[r + 1][jn], d = rows[r + 1][j];
        faces.push_back({a, b, c});
        faces.push_back({a, c, d});
      }
    }
  }

  // Ring trig is reflection-symmetric by construction (s[n-j] == -s[j]
  // exactly), so mirrored body parts come out bitwise mirror-symmetric.
  std::vector<int> ring(const Vec3d& center, const Vec3d& a, const Vec3d& b, double ra, double rb,
                        int nseg) {
    std::vector<double> c(nseg), s(nseg);
    for (int j = 0; j <= nseg / 2; ++j) {
      const double t = 2.0 * M_PI * j / nseg;
      c[j] = std::cos(t);
      s[j] = std::sin(t);
    }
    if (nseg % 2 == 0) s[nseg / 2] = 0.0;
    s[0] = 0.0;
    for (int j = nseg / 2 + 1; j < nseg; ++j) {
      c[j] = c[nseg - j];
      s[j] = -s[nseg - j];
    }
    std::vector<int> ids(nseg);
    for (int j = 0; j < nseg; ++j) ids[j] = add(center + a * (ra * c[j]) + b * (rb * s[j]));
    return ids;
  }

  void capsule(const Vec3d& p0, const Vec3d& p1, double radius, int nseg, int nrings, int ncap) {
    const Vec3d axis = p1 - p0;
    const double len = axis.norm();
    const Vec3d u = axis / len;
    const Vec3d a = (std::abs(u.z) < 0.9 ? u.cross(Vec3d(0, 0, 1)) : u.cross(Vec3d(0, 1, 0)))
                        .normalized();
    const Vec3d b = u.cross(a);  // a x b = u

    std::vector<std::vector<int>> rows;
    for (int i = 1; i <= ncap; ++i) {
      const double lam = -M_PI_2 + M_PI_2 * i / (ncap + 1);
      rows.push_back(ring(p0 + u * (radius * std::sin(lam)), a, b, radius * std::cos(lam),
                          radius * std::cos(lam), nseg));
    }
    for (int i = 0; i <= nrings; ++i)
      rows.push_back(ring(p0 + axis * (double(i) / nrings), a, b, radius, radius, nseg));
    for (int i = 1; i <= ncap; ++i) {
      const double lam = M_PI_2 * i / (ncap + 1);
      rows.push_back(ring(p1 + u * (radius * std::sin(lam)), a, b, radius * std::cos(lam),
                          radius * std::cos(lam), nseg));
    }
    stitch(p0 - u * radius, rows, p1 + u * radius);
  }

  void ellipsoid(const Vec3d& center, double rx, double ry, double rz, int nseg, int nrows) {
    std::vector<std::vector<int>> rows;
    for (int i = 1; i < nrows; ++i) {
      const double lam = -M_PI_2 + M_PI * i / nrows;
      rows.push_back(ring(center + Vec3d(0, 0, rz * std::sin(lam)), Vec3d(1, 0, 0),
                          Vec3d(0, 1, 0), rx * std::cos(lam), ry * std::cos(lam), nseg));
    }
    stitch(center - Vec3d(0, 0, rz), rows, center + Vec3d(0, 0, rz));
  }

  // Tapered elliptical tube with flat fan caps.
  void tube(double z0, double z1, double rx0, double ry0, double rx1, double ry1, int nseg,
            int nrows) {
    std::vector<std::vector<int>> rows;
    for (int i = 0; i <= nrows; ++i) {
      const double t = double(i) / nrows;
      rows.push_back(ring(Vec3d(0, 0, z0 + t * (z1 - z0)), Vec3d(1, 0, 0), Vec3d(0, 1, 0),
                          rx0 + t * (rx1 - rx0), ry0 + t * (ry1 - ry0), nseg));
    }
    stitch(Vec3d(0, 0, z0), rows, Vec3d(0, 0, z1));
  }
};

double point_segment_distance(const Vec3d& p, const Vec3d& a, const Vec3d& b) {
  const Vec3d ab = b - a;
  const double len_sq = ab.squaredNorm();
  if (len_sq < 1e-18) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len_sq, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

}  // namespace

SkeletonTemplate make_template(const TemplateConfig& cfg) {
  const double dims[] = {cfg.hip_halfwidth_mesh, cfg.chest_halfwidth, cfg.hip_depth,
                         cfg.chest_depth,        cfg.neck_radius,     cfg.head_rx,
                         cfg.head_ry,            cfg.head_rz,         cfg.upper_arm_radius,
                         cfg.forearm_radius,     cfg.thigh_radius,    cfg.shin_radius,
                         cfg.foot_radius,        cfg.foot_length,     cfg.hand_length,
                         cfg.weight_smoothing};
  for (double d : dims)
    if (!(d > 0.0)) throw ValidationError("make_template: dimensions must be positive");
  if (cfg.limb_segments < 3 || cfg.torso_segments < 3 || cfg.limb_rings < 1 || cfg.cap_rings < 1 ||
      cfg.weight_influences < 1)
    throw ValidationError("make_template: segment/ring counts must be positive");
  if (!(cfg.torso_top > cfg.torso_bottom))
    throw ValidationError("make_template: torso_top must exceed torso_bottom");

  SkeletonTemplate t;
  t.joint_names = {"pelvis",     "spine1",  "spine2",  "neck",       "head",   "shoulder_l",
                   "elbow_l",    "wrist_l", "shoulder_r", "elbow_r", "wrist_r", "hip_l",
                   "knee_l",     "ankle_l", "hip_r",   "knee_r",     "ankle_r"};
  t.joints = {
      {0, 0, 0},
      {0, 0, cfg.spine1_z},
      {0, 0, cfg.spine2_z},
      {0, 0, cfg.neck_z},
      {0, 0, cfg.head_z},
      {0, cfg.shoulder_y, cfg.shoulder_z},
      {0, cfg.elbow_y, cfg.elbow_z},
      {0, cfg.wrist_y, cfg.wrist_z},
      {0, -cfg.shoulder_y, cfg.shoulder_z},
      {0, -cfg.elbow_y, cfg.elbow_z},
      {0, -cfg.wrist_y, cfg.wrist_z},
      {0, cfg.hip_y, cfg.hip_z},
      {0, cfg.hip_y, cfg.knee_z},
      {0, cfg.hip_y, cfg.ankle_z},
      {0, -cfg.hip_y, cfg.hip_z},
      {0, -cfg.hip_y, cfg.knee_z},
      {0, -cfg.hip_y, cfg.ankle_z},
  };
  t.parents = {-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15};
  t.symmetry_class = {-1, 0, 1, 2, 3, 4, 5, 6, 4, 5, 6, 7, 8, 9, 7, 8, 9};
  t.num_scale_classes = 10;

  MeshBuilder mb;
  mb.tube(cfg.torso_bottom, cfg.torso_top, cfg.hip_depth, cfg.hip_halfwidth_mesh,
          cfg.chest_depth, cfg.chest_halfwidth, cfg.torso_segments, cfg.limb_rings + 4);
  mb.capsule(Vec3d(0, 0, cfg.torso_top), t.joints[4], cfg.neck_radius, cfg.limb_segments, 2,
             cfg.cap_rings);
  // Skull sits above the head joint, nudged forward so front and back differ.
  mb.ellipsoid(Vec3d(0.012, 0, cfg.head_z + cfg.head_rz * 0.85), cfg.head_rx, cfg.head_ry,
               cfg.head_rz, cfg.limb_segments + 2, 8);

  for (int side = 0; side < 2; ++side) {
    const double sy = side == 0 ? 1.0 : -1.0;
    const Vec3d shoulder(0, sy * cfg.shoulder_y, cfg.shoulder_z);
    const Vec3d elbow(0, sy * cfg.elbow_y, cfg.elbow_z);
    const Vec3d wrist(0, sy * cfg.wrist_y, cfg.wrist_z);
    const Vec3d hand_tip = wrist + (wrist - elbow).normalized() * cfg.hand_length;
    const Vec3d hip(0, sy * cfg.hip_y, cfg.hip_z);
    const Vec3d knee(0, sy * cfg.hip_y, cfg.knee_z);
    const Vec3d ankle(0, sy * cfg.hip_y, cfg.ankle_z);
    const Vec3d toe = ankle + Vec3d(cfg.foot_length, 0, -0.05);

    mb.capsule(shoulder, elbow, cfg.upper_arm_radius, cfg.limb_segments, cfg.limb_rings,
               cfg.cap_rings);
    mb.capsule(elbow, hand_tip, cfg.forearm_radius, cfg.limb_segments, cfg.limb_rings,
               cfg.cap_rings);
    mb.capsule(hip, knee, cfg.thigh_radius, cfg.limb_segments, cfg.limb_rings, cfg.cap_rings);
    mb.capsule(knee, ankle, cfg.shin_radius, cfg.limb_segments, cfg.limb_rings, cfg.cap_rings);
    mb.capsule(ankle, toe, cfg.foot_radius, cfg.limb_segments, cfg.limb_rings, cfg.cap_rings);
  }

  t.vertices = std::move(mb.vertices);
  t.faces = std::move(mb.faces);

  // Area-weighted vertex normals.
  t.normals.assign(t.vertices.size(), Vec3d(0, 0, 0));
  for (const auto& f : t.faces) {
    const Vec3d n = (t.vertices[f[1]] - t.vertices[f[0]]).cross(t.vertices[f[2]] - t.vertices[f[0]]);
    for (int v : f) t.normals[v] += n;
  }
  for (auto& n : t.normals) n = n.normalized();

  // Influence segments per joint: the bones it drives (leaves get a stub so
  // hands, feet and the skull bind to their nearest articulated joint).
  std::vector<std::vector<std::pair<Vec3d, Vec3d>>> segs(t.num_joints());
  for (int k = 0; k < t.num_joints(); ++k)
    if (t.parents[k] >= 0) segs[t.parents[k]].push_back({t.joints[t.parents[k]], t.joints[k]});
  const auto leaf_stub = [&](const char* name, const Vec3d& tip) {
    const int k = t.joint_index(name);
    segs[k].push_back({t.joints[k], tip});
  };
  leaf_stub("head", t.joints[4] + Vec3d(0.012, 0, 2.0 * cfg.head_rz * 0.85));
  for (int side = 0; side < 2; ++side) {
    const double sy = side == 0 ? 1.0 : -1.0;
    const Vec3d elbow(0, sy * cfg.elbow_y, cfg.elbow_z);
    const Vec3d wrist(0, sy * cfg.wrist_y, cfg.wrist_z);
    leaf_stub(side == 0 ? "wrist_l" : "wrist_r",
              wrist + (wrist - elbow).normalized() * cfg.hand_length);
    const Vec3d ankle(0, sy * cfg.hip_y, cfg.ankle_z);
    leaf_stub(side == 0 ? "ankle_l" : "ankle_r", ankle + Vec3d(cfg.foot_length, 0, -0.05));
  }

  const double h2 = cfg.weight_smoothing * cfg.weight_smoothing;
  const int influences = std::min(cfg.weight_influences, t.num_joints());
  t.blend_weights.resize(t.vertices.size());
  for (size_t i = 0; i < t.vertices.size(); ++i) {
    std::vector<std::pair<int, double>> w;
    for (int k = 0; k < t.num_joints(); ++k) {
      double dmin = 1e30;
      for (const auto& [a, b] : segs[k])
        dmin = std::min(dmin, point_segment_distance(t.vertices[i], a, b));
      const double q = dmin * dmin + h2;
      w.push_back({k, 1.0 / (q * q)});
    }
    std::sort(w.begin(), w.end(),
              [](const auto& l, const auto& r) {
                return l.second > r.second || (l.second == r.second && l.first < r.first);
              });
    // Keep ties at the cutoff so sagittal-plane vertices stay mirror-symmetric.
    size_t cut = influences;
    while (cut < w.size() && w[cut].second == w[influences - 1].second) ++cut;
    w.resize(cut);
    std::sort(w.begin(), w.end());  // by joint index, for stable serialization
    double sum = 0.0;
    for (const auto& [k, wk] : w) sum += wk;
    double acc = 0.0;
    for (size_t j = 0; j + 1 < w.size(); ++j) {
      w[j].second /= sum;
      acc += w[j].second;
    }
    w.back().second = 1.0 - acc;  // weights sum to 1 exactly
    t.blend_weights[i] = std::move(w);
  }

  t.finalize();
  return t;
}

}  // namespace bodyfit
