#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfit/body_model.hpp"
#include "bodyfit/error.hpp"
#include "bodyfit/raycaster.hpp"
#include "bodyfit/vec.hpp"

namespace bodyfit {

// ---------------------------------------------------------------------------
// Observations

struct Joints2D {
  struct Detection {
    std::string name;  // skeleton joint name
    double u = 0, v = 0;
    double confidence = 0;
    int joint = -1;  // resolved skeleton joint index
  };
  std::vector<Detection> detections;

  // Resolves names against the template; unknown names are an error.
  void bind(const SkeletonTemplate& tmpl);
};

struct Camera {
  std::array<double, 12> p{};  // 3x4 projection, row-major
  int width = 0, height = 0;

  template <class T>
  std::array<T, 3> homogeneous(const Vec3<T>& x) const {
    return {T(p[0]) * x.x + T(p[1]) * x.y + T(p[2]) * x.z + T(p[3]),
            T(p[4]) * x.x + T(p[5]) * x.y + T(p[6]) * x.z + T(p[7]),
            T(p[8]) * x.x + T(p[9]) * x.y + T(p[10]) * x.z + T(p[11])};
  }
};

// Perspective projection; throws on non-positive depth.
Vec2d project(const Camera& camera, const Vec3d& point);
std::optional<Vec2d> try_project(const Camera& camera, const Vec3d& point);

// ---------------------------------------------------------------------------
// Priors

struct GmmPrior {
  int dim = 0;
  std::vector<double> weights;
  std::vector<std::vector<double>> means;        // R x dim
  std::vector<std::vector<double>> chol_lower;   // R x dim*dim, L with Sigma = L L^T
  std::vector<double> log_norm;                  // per-component log normalizer

  int components() const { return static_cast<int>(weights.size()); }
  // Recomputes log normalizers and checks invariants. Throws ValidationError
  // (singular factors are rejected here, i.e. at load time).
  void finalize();

  // -log sum_r g_r N(x; mu_r, Sigma_r), via log-sum-exp.
  template <class T>
  T neg_log_density(std::span<const T> x) const {
    const int R = components();
    std::vector<T> a(R);
    std::vector<T> z(dim);
    double maxv = -1e300;
    for (int r = 0; r < R; ++r) {
      const double* L = chol_lower[r].data();
      const double* mu = means[r].data();
      T quad(0.0);
      for (int i = 0; i < dim; ++i) {
        T acc = x[i] - T(mu[i]);
        for (int j = 0; j < i; ++j) acc -= T(L[i * dim + j]) * z[j];
        z[i] = acc / T(L[i * dim + i]);
        quad += z[i] * z[i];
      }
      a[r] = T(std::log(weights[r]) + log_norm[r]) - quad * T(0.5);
      maxv = std::max(maxv, value_of(a[r]));
    }
    using std::exp;
    using std::log;
    T sum(0.0);
    for (int r = 0; r < R; ++r) sum += exp(a[r] - T(maxv));
    return -(T(maxv) + log(sum));
  }
};

// EM fit with full covariances, regularized by +1e-6 I. The log-likelihood
// trace (one entry per iteration) is appended to `trace` when given.
GmmPrior fit_gmm(const std::vector<std::vector<double>>& samples, int R, int max_iters,
                 uint64_t seed, std::vector<double>* trace = nullptr);

// Pose vector the GMM prior is defined over: concatenated axis-angles of the
// non-root joints, in joint order.
template <class T>
std::vector<T> pose_prior_vector(const SkeletonTemplate& tmpl, const PoseT<T>& pose) {
  std::vector<T> x;
  x.reserve(3 * (tmpl.num_joints() - 1));
  for (int k = 0; k < tmpl.num_joints(); ++k) {
    if (tmpl.parents[k] < 0) continue;
    x.push_back(pose.joint_rotations[k].x);
    x.push_back(pose.joint_rotations[k].y);
    x.push_back(pose.joint_rotations[k].z);
  }
  return x;
}

inline int pose_prior_dim(const SkeletonTemplate& tmpl) { return 3 * (tmpl.num_joints() - 1); }

// Built-in prior fitted to a procedural pose library (stand/walk/jog anchors
// with seeded jitter); deterministic, cached per joint count.
std::vector<std::vector<double>> builtin_pose_samples(const SkeletonTemplate& tmpl,
                                                      int per_anchor, uint64_t seed);
const GmmPrior& default_pose_prior(const SkeletonTemplate& tmpl);

struct EnergyWeights {
  double lambda_sim = 144.0 * 144.0;
  double lambda_joint = 0.2 * 0.2;
  double lambda_pose = 0.478 * 0.478;
  double lambda_bone = 2.0 * 2.0;
  double lambda_l2 = 100.0 * 100.0;
  double lambda_lap = 1000.0 * 1000.0;
  double sigma = 100.0;  // Geman-McClure scale, pixels

  void validate() const;
};

// Uniform graph Laplacian: (L x)_i = mean of neighbors - x_i.
struct LaplacianOperator {
  std::vector<std::vector<int>> neighbors;

  static LaplacianOperator from_faces(int num_vertices,
                                      std::span<const std::array<int, 3>> faces);

  template <class T>
  Vec3<T> apply_row(std::span<const Vec3<T>> field, int i) const {
    Vec3<T> acc(T(0.0), T(0.0), T(0.0));
    const auto& nbr = neighbors[i];
    if (nbr.empty()) return acc;
    for (int j : nbr) acc += field[j];
    return acc * T(1.0 / nbr.size()) - field[i];
  }
};

// ---------------------------------------------------------------------------
// Energy terms

// Symmetric mean of squared nearest-neighbor distances. Throws on empty sets.
double chamfer(std::span<const Vec3d> x, std::span<const Vec3d> y);

struct ChamferPairs {
  std::vector<int> x_to_y, y_to_x;
};
ChamferPairs chamfer_pairs(std::span<const Vec3d> x, std::span<const Vec3d> y);

template <class T>
T chamfer_frozen(std::span<const Vec3d> x, std::span<const Vec3<T>> y,
                 const ChamferPairs& pairs) {
  T sum_x(0.0), sum_y(0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const Vec3<T> d = y[pairs.x_to_y[i]] - Vec3<T>(T(x[i].x), T(x[i].y), T(x[i].z));
    sum_x += d.squaredNorm();
  }
  for (size_t j = 0; j < y.size(); ++j) {
    const Vec3d& xp = x[pairs.y_to_x[j]];
    const Vec3<T> d = y[j] - Vec3<T>(T(xp.x), T(xp.y), T(xp.z));
    sum_y += d.squaredNorm();
  }
  return sum_x * T(1.0 / x.size()) + sum_y * T(1.0 / y.size());
}

// rho(x) = x^2 sigma^2 / (x^2 + sigma^2); bounded by sigma^2.
double geman_mcclure(double x, double sigma);

template <class T>
T geman_mcclure_sq(const T& x_sq, double sigma) {
  const double s2 = sigma * sigma;
  return x_sq * T(s2) / (x_sq + T(s2));
}

// sum_k m_k rho(|pi(j_k) - p_k|); joints behind the camera contribute zero.
double e_joint(std::span<const Vec3d> posed_joints, const Joints2D& joints2d,
               const Camera& camera, double sigma);

// 2D-joint term with the behind-camera set frozen.
template <class T>
T e_joint_frozen(std::span<const Vec3<T>> posed_joints, const Joints2D& joints2d,
                 const Camera& camera, double sigma, std::span<const char> visible) {
  T total(0.0);
  for (size_t d = 0; d < joints2d.detections.size(); ++d) {
    if (!visible[d]) continue;
    const auto& det = joints2d.detections[d];
    const auto h = camera.homogeneous(posed_joints[det.joint]);
    const T inv_w = T(1.0) / h[2];
    const T du = h[0] * inv_w - T(det.u);
    const T dv = h[1] * inv_w - T(det.v);
    total += T(det.confidence) * geman_mcclure_sq(du * du + dv * dv, sigma);
  }
  return total;
}

// Cumulative bone scale penalty: sum_k (prod_{p in ancestors(k)} s_p - 1)^2.
template <class T>
T bone_scale_penalty(const SkeletonTemplate& tmpl, const ShapeT<T>& shape) {
  std::vector<T> cumulative(tmpl.num_joints());
  T total(0.0);
  for (int k : tmpl.topo_order) {
    const int parent = tmpl.parents[k];
    const T own = parent < 0 ? T(1.0) : shape.bone_scales[tmpl.symmetry_class[k]];
    cumulative[k] = parent < 0 ? own : cumulative[parent] * own;
    const T dev = cumulative[k] - T(1.0);
    total += dev * dev;
  }
  return total;
}

// GMM negative log-likelihood plus the weighted bone term (Eq. 7 shape).
double e_pose(const SkeletonTemplate& tmpl, const PoseParams& pose, const ShapeParams& shape,
              const GmmPrior& gmm, double lambda_bone);

// (laplacian part, l2 part) of the displacement prior.
template <class T>
std::pair<T, T> shape_parts(const SkeletonTemplate& tmpl, const LaplacianOperator& lap,
                            const ShapeT<T>& shape) {
  const int n = tmpl.num_vertices();
  std::vector<Vec3<T>> field(n);
  for (int i = 0; i < n; ++i) {
    const Vec3d& nrm = tmpl.normals[i];
    const T& d = shape.displacements[i];
    field[i] = Vec3<T>(T(nrm.x) * d, T(nrm.y) * d, T(nrm.z) * d);
  }
  T lap_part(0.0), l2(0.0);
  for (int i = 0; i < n; ++i) {
    lap_part += lap.apply_row<T>(field, i).squaredNorm();
    l2 += shape.displacements[i] * shape.displacements[i];
  }
  return {lap_part, l2};
}

// Laplacian part + lambda_l2 * l2 part (Eq. 8 shape).
double e_shape(const ShapeParams& shape, const SkeletonTemplate& tmpl,
               const LaplacianOperator& lap, double lambda_l2);

// ---------------------------------------------------------------------------
// Sequence energy

// Per-frame inputs, fixed for the duration of a fit.
struct FrameContext {
  const LidarScan* scan = nullptr;
  const Joints2D* joints2d = nullptr;
  const Camera* camera = nullptr;
  RaySet masked_window;  // ray window minus occluded rays

  static FrameContext make(const LidarScan& scan, const Joints2D* joints2d,
                           const Camera* camera);
};

// Discrete decisions captured at one evaluation point: ray hits, chamfer
// pairings and the behind-camera set. Held fixed within a gradient
// evaluation and re-derived each outer iteration.
struct FrameFreeze {
  SimulatedScan sim;
  ChamferPairs pairs;
  std::vector<char> joint_visible;
  bool sim_active = false;
};

FrameFreeze freeze_frame(const SkeletonTemplate& tmpl, const PoseParams& pose,
                         const ShapeParams& shape, const FrameContext& ctx);

template <class T>
struct FrameTerms {
  T sim{0.0}, joint{0.0}, gmm{0.0}, bone{0.0}, lap{0.0}, l2{0.0};
};

// Raw (unweighted) terms of one frame under a freeze. The posed mesh is
// evaluated lazily: only vertices of hit faces are skinned.
template <class T>
FrameTerms<T> eval_frame_frozen(const SkeletonTemplate& tmpl, const PoseT<T>& pose,
                                const ShapeT<T>& shape, const GmmPrior& gmm,
                                const LaplacianOperator& lap, const FrameContext& ctx,
                                const FrameFreeze& freeze, double sigma) {
  FrameTerms<T> terms;
  const auto jt = joint_transforms(tmpl, pose, shape);

  if (freeze.sim_active) {
    std::vector<int> slot(tmpl.num_vertices(), -1);
    std::vector<Vec3<T>> posed;
    posed.reserve(3 * freeze.sim.hits.size());
    const auto posed_vertex = [&](int vid) -> Vec3<T> {
      if (slot[vid] < 0) {
        slot[vid] = static_cast<int>(posed.size());
        posed.push_back(pose_vertex(tmpl, jt, shape, pose.root_offset, vid));
      }
      return posed[slot[vid]];
    };
    std::vector<Vec3<T>> sim_points;
    sim_points.reserve(freeze.sim.hits.size());
    for (const auto& hit : freeze.sim.hits) {
      const auto& f = tmpl.faces[hit.face];
      const Vec3<T> a = posed_vertex(f[0]);
      const Vec3<T> b = posed_vertex(f[1]);
      const Vec3<T> c = posed_vertex(f[2]);
      sim_points.push_back(a * T(1.0 - hit.u) + b * T(hit.u - hit.v) + c * T(hit.v));
    }
    terms.sim = chamfer_frozen<T>(ctx.scan->target_points, sim_points, freeze.pairs);
  }

  if (ctx.joints2d && ctx.camera && !ctx.joints2d->detections.empty()) {
    terms.joint = e_joint_frozen<T>(jt.posed_joints, *ctx.joints2d, *ctx.camera, sigma,
                                    freeze.joint_visible);
  }

  const std::vector<T> prior_vec = pose_prior_vector(tmpl, pose);
  if (gmm.dim != static_cast<int>(prior_vec.size()))
    throw ValidationError("pose prior dimension mismatch: gmm " + std::to_string(gmm.dim) +
                          " vs pose vector " + std::to_string(prior_vec.size()));
  terms.gmm = gmm.neg_log_density<T>(prior_vec);
  terms.bone = bone_scale_penalty(tmpl, shape);

  const auto [lap_part, l2_part] = shape_parts(tmpl, lap, shape);
  terms.lap = lap_part;
  terms.l2 = l2_part;
  return terms;
}

struct EnergyBreakdown {
  double sim = 0, joint = 0, pose = 0, bone = 0, lap = 0, l2 = 0;
  double total() const { return sim + joint + pose + bone + lap + l2; }
};

struct TotalEnergy {
  double total = 0;
  EnergyBreakdown weighted;                  // per-term sums over frames, weighted
  std::vector<FrameTerms<double>> raw;       // per-frame unweighted terms
};

// Full sequence objective, correspondences re-derived per frame at the
// evaluation point. Frame-level failures are reported with the frame index.
TotalEnergy total_energy(const SkeletonTemplate& tmpl, std::span<const PoseParams> poses,
                         const ShapeParams& shape, std::span<const FrameContext> frames,
                         const GmmPrior& gmm, const LaplacianOperator& lap,
                         const EnergyWeights& weights);

}  // namespace bodyfit
