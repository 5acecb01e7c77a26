#include "bodyfit/energy.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace bodyfit {

void Joints2D::bind(const SkeletonTemplate& tmpl) {
  for (auto& det : detections) {
    det.joint = tmpl.joint_index(det.name);
    if (det.joint < 0)
      throw ValidationError("joints2d: unknown joint name '" + det.name + "'");
    if (!std::isfinite(det.u) || !std::isfinite(det.v))
      throw ValidationError("joints2d: non-finite pixel for joint '" + det.name + "'");
    if (det.confidence < 0.0 || det.confidence > 1.0)
      throw ValidationError("joints2d: confidence outside [0,1] for joint '" + det.name + "'");
  }
}

Vec2d project(const Camera& camera, const Vec3d& point) {
  const auto h = camera.homogeneous(point);
  if (!(h[2] > 0.0)) throw ValidationError("project: point has non-positive depth");
  return {h[0] / h[2], h[1] / h[2]};
}

std::optional<Vec2d> try_project(const Camera& camera, const Vec3d& point) {
  const auto h = camera.homogeneous(point);
  if (!(h[2] > 0.0)) return std::nullopt;
  return Vec2d{h[0] / h[2], h[1] / h[2]};
}

void EnergyWeights::validate() const {
  const double vals[] = {lambda_sim, lambda_joint, lambda_pose, lambda_bone, lambda_l2, lambda_lap};
  for (double v : vals)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError("energy weights must be finite and non-negative");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be positive");
}

LaplacianOperator LaplacianOperator::from_faces(int num_vertices,
                                                std::span<const std::array<int, 3>> faces) {
  LaplacianOperator lap;
  lap.neighbors.resize(num_vertices);
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) {
      lap.neighbors[f[e]].push_back(f[(e + 1) % 3]);
      lap.neighbors[f[e]].push_back(f[(e + 2) % 3]);
    }
  for (auto& nbr : lap.neighbors) {
    std::sort(nbr.begin(), nbr.end());
    nbr.erase(std::unique(nbr.begin(), nbr.end()), nbr.end());
  }
  return lap;
}

double chamfer(std::span<const Vec3d> x, std::span<const Vec3d> y) {
  if (x.empty() || y.empty()) throw ValidationError("chamfer: empty point set");
  double sum_x = 0.0;
  for (const auto& p : x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : y) best = std::min(best, (p - q).squaredNorm());
    sum_x += best;
  }
  double sum_y = 0.0;
  for (const auto& q : y) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : x) best = std::min(best, (p - q).squaredNorm());
    sum_y += best;
  }
  return sum_x / x.size() + sum_y / y.size();
}

ChamferPairs chamfer_pairs(std::span<const Vec3d> x, std::span<const Vec3d> y) {
  if (x.empty() || y.empty()) throw ValidationError("chamfer: empty point set");
  ChamferPairs pairs;
  pairs.x_to_y.resize(x.size());
  pairs.y_to_x.resize(y.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t j = 0; j < y.size(); ++j) {
      const double d = (x[i] - y[j]).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    pairs.x_to_y[i] = arg;
  }
  for (size_t j = 0; j < y.size(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double d = (x[i] - y[j]).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(i);
      }
    }
    pairs.y_to_x[j] = arg;
  }
  return pairs;
}

double geman_mcclure(double x, double sigma) {
  if (!(sigma > 0.0)) throw ValidationError("geman_mcclure: sigma must be positive");
  const double x2 = x * x;
  const double s2 = sigma * sigma;
  return x2 * s2 / (x2 + s2);
}

double e_joint(std::span<const Vec3d> posed_joints, const Joints2D& joints2d,
               const Camera& camera, double sigma) {
  double total = 0.0;
  for (const auto& det : joints2d.detections) {
    if (det.joint < 0 || det.joint >= static_cast<int>(posed_joints.size()))
      throw ValidationError("e_joint: detection '" + det.name + "' is not bound to a joint");
    const auto px = try_project(camera, posed_joints[det.joint]);
    if (!px) continue;  // behind the camera
    const Vec2d diff{px->x - det.u, px->y - det.v};
    total += det.confidence * geman_mcclure(diff.norm(), sigma);
  }
  return total;
}

double e_pose(const SkeletonTemplate& tmpl, const PoseParams& pose, const ShapeParams& shape,
              const GmmPrior& gmm, double lambda_bone) {
  const auto vec = pose_prior_vector(tmpl, pose);
  if (gmm.dim != static_cast<int>(vec.size()))
    throw ValidationError("e_pose: gmm dimension does not match the pose vector");
  return gmm.neg_log_density<double>(vec) + lambda_bone * bone_scale_penalty(tmpl, shape);
}

double e_shape(const ShapeParams& shape, const SkeletonTemplate& tmpl,
               const LaplacianOperator& lap, double lambda_l2) {
  const auto [lap_part, l2_part] = shape_parts<double>(tmpl, lap, shape);
  return lap_part + lambda_l2 * l2_part;
}

FrameContext FrameContext::make(const LidarScan& scan, const Joints2D* joints2d,
                                const Camera* camera) {
  FrameContext ctx;
  ctx.scan = &scan;
  ctx.joints2d = joints2d;
  ctx.camera = camera;
  const RaySet window = ray_window(scan, scan.sensor);
  ctx.masked_window = window.without(occluded_rays(scan, scan.sensor, window));
  return ctx;
}

FrameFreeze freeze_frame(const SkeletonTemplate& tmpl, const PoseParams& pose,
                         const ShapeParams& shape, const FrameContext& ctx) {
  FrameFreeze freeze;
  const PosedMesh mesh = pose_mesh(tmpl, pose, shape);
  freeze.sim = raycast_mesh(ctx.masked_window, mesh);
  if (!ctx.scan->target_points.empty() && !freeze.sim.points.empty()) {
    freeze.pairs = chamfer_pairs(ctx.scan->target_points, freeze.sim.points);
    freeze.sim_active = true;
  }
  if (ctx.joints2d && ctx.camera) {
    const auto jt = joint_transforms(tmpl, pose, shape);
    freeze.joint_visible.resize(ctx.joints2d->detections.size(), 0);
    for (size_t d = 0; d < ctx.joints2d->detections.size(); ++d) {
      const int k = ctx.joints2d->detections[d].joint;
      if (k < 0 || k >= tmpl.num_joints())
        throw ValidationError("freeze_frame: unbound 2D joint detection");
      freeze.joint_visible[d] = try_project(*ctx.camera, jt.posed_joints[k]).has_value();
    }
  }
  return freeze;
}

TotalEnergy total_energy(const SkeletonTemplate& tmpl, std::span<const PoseParams> poses,
                         const ShapeParams& shape, std::span<const FrameContext> frames,
                         const GmmPrior& gmm, const LaplacianOperator& lap,
                         const EnergyWeights& weights) {
  weights.validate();
  if (poses.size() != frames.size())
    throw ValidationError("total_energy: pose and frame counts differ");
  TotalEnergy out;
  for (size_t t = 0; t < frames.size(); ++t) {
    try {
      const FrameFreeze freeze = freeze_frame(tmpl, poses[t], shape, frames[t]);
      if (!freeze.sim_active && !frames[t].scan->target_points.empty())
        std::cerr << "warning: frame " << t << ": no simulated returns, skipping E_sim\n";
      const auto terms = eval_frame_frozen<double>(tmpl, poses[t], shape, gmm, lap, frames[t],
                                                   freeze, weights.sigma);
      out.raw.push_back(terms);
      out.weighted.sim += weights.lambda_sim * terms.sim;
      out.weighted.joint += weights.lambda_joint * terms.joint;
      out.weighted.pose += weights.lambda_pose * terms.gmm;
      out.weighted.bone += weights.lambda_bone * terms.bone;
      out.weighted.lap += weights.lambda_lap * terms.lap;
      out.weighted.l2 += weights.lambda_l2 * terms.l2;
    } catch (const ValidationError& e) {
      throw ValidationError("frame " + std::to_string(t) + ": " + e.what());
    } catch (const NumericError& e) {
      throw NumericError("frame " + std::to_string(t) + ": " + e.what());
    }
  }
  out.total = out.weighted.total();
  if (!std::isfinite(out.total)) throw NumericError("total_energy: non-finite energy");
  return out;
}

}  // namespace bodyfit
