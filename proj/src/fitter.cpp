#include "bodyfit/fitter.hpp"

#include <algorithm>
#include <cmath>

namespace bodyfit {

void FitConfig::validate() const {
  weights.validate();
  if (warmup_iters < 1 || stage1_iters < 1 || stage2_iters < 1)
    throw ValidationError("fit config: iteration caps must be positive");
  if (!(tolerance > 0.0)) throw ValidationError("fit config: tolerance must be positive");
  if (tolerance_window < 1) throw ValidationError("fit config: tolerance window must be positive");
  if (yaws.empty()) throw ValidationError("fit config: need at least one yaw start");
  if (!(learning_rate > 0.0)) throw ValidationError("fit config: learning rate must be positive");
}

ParamBlock init_params(const SkeletonTemplate& tmpl, std::span<const FrameObservation> obs,
                       const GmmPrior& gmm, double yaw) {
  if (obs.empty()) throw ValidationError("init_params: empty sequence");
  if (gmm.dim != pose_prior_dim(tmpl))
    throw ValidationError("init_params: gmm dimension does not match the template");
  // Highest-weight component mean, unpacked to non-root joints.
  const int best =
      static_cast<int>(std::max_element(gmm.weights.begin(), gmm.weights.end()) -
                       gmm.weights.begin());
  PoseParams pose;
  pose.joint_rotations.assign(tmpl.num_joints(), Vec3d(0, 0, 0));
  int cursor = 0;
  for (int k = 0; k < tmpl.num_joints(); ++k) {
    if (tmpl.parents[k] < 0) continue;
    for (int a = 0; a < 3; ++a) pose.joint_rotations[k][a] = gmm.means[best][cursor++];
  }
  // Root yaw about +z composed onto the (identity) prior root rotation.
  pose.joint_rotations[tmpl.root()] = Vec3d(0, 0, yaw);

  std::vector<PoseParams> poses(obs.size(), pose);
  for (size_t t = 0; t < obs.size(); ++t) {
    const auto& pts = obs[t].scan.target_points;
    if (pts.empty())
      throw ValidationError("init_params: frame " + std::to_string(t) + " has no target points");
    Vec3d centroid(0, 0, 0);
    for (const auto& p : pts) centroid += p;
    poses[t].root_offset = centroid / static_cast<double>(pts.size());
  }
  return ParamBlock::pack(tmpl, poses, neutral_shape(tmpl));
}

SequenceEval eval_sequence(const SkeletonTemplate& tmpl, const ParamBlock& params,
                           std::span<const FrameContext> frames, const GmmPrior& gmm,
                           const LaplacianOperator& lap, const EnergyWeights& weights,
                           const StageMask* grad_mask) {
  const int T = static_cast<int>(frames.size());
  const ParamLayout& layout = params.layout;
  SequenceEval out;
  out.raw.resize(T);
  if (grad_mask) out.grad.assign(layout.size(), 0.0);

  std::vector<EnergyBreakdown> frame_weighted(T);
  std::vector<std::vector<double>> frame_grads(T);
  std::vector<std::string> frame_errors(T);

#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < T; ++t) {
    try {
      const PoseParams pose = params.pose(t);
      const ShapeParams shape = params.shape();
      const FrameFreeze freeze = freeze_frame(tmpl, pose, shape, frames[t]);

      ad::Tape tape;
      const StageMask bind_mask = grad_mask ? *grad_mask : StageMask{false, false, false, false};
      // Single-frame view of the parameters so the tape only carries frame t.
      ParamBlock single = ParamBlock::zeros(ParamLayout{1, layout.joints, layout.classes,
                                                        layout.verts});
      single.set_pose(0, pose);
      single.set_shape(shape);
      const BoundParams bound = bind_params(single, tape, bind_mask);
      const auto terms = eval_frame_frozen<ad::Var>(tmpl, bound.poses[0], bound.shape, gmm, lap,
                                                    frames[t], freeze, weights.sigma);
      const ad::Var total = terms.sim * weights.lambda_sim + terms.joint * weights.lambda_joint +
                            terms.gmm * weights.lambda_pose + terms.bone * weights.lambda_bone +
                            terms.lap * weights.lambda_lap + terms.l2 * weights.lambda_l2;

      out.raw[t] = {terms.sim.val(), terms.joint.val(), terms.gmm.val(),
                    terms.bone.val(), terms.lap.val(),  terms.l2.val()};
      frame_weighted[t].sim = weights.lambda_sim * terms.sim.val();
      frame_weighted[t].joint = weights.lambda_joint * terms.joint.val();
      frame_weighted[t].pose = weights.lambda_pose * terms.gmm.val();
      frame_weighted[t].bone = weights.lambda_bone * terms.bone.val();
      frame_weighted[t].lap = weights.lambda_lap * terms.lap.val();
      frame_weighted[t].l2 = weights.lambda_l2 * terms.l2.val();

      if (grad_mask) {
        const std::vector<double> adj = tape.backward(total.i);
        std::vector<double> g(single.layout.size(), 0.0);
        if (total.i >= 0) accumulate_gradient(bound, adj, g);
        frame_grads[t] = std::move(g);
      }
    } catch (const std::exception& e) {
      frame_errors[t] = e.what();
    }
  }

  for (int t = 0; t < T; ++t)
    if (!frame_errors[t].empty())
      throw NumericError("frame " + std::to_string(t) + ": " + frame_errors[t]);

  // Deterministic reduction in frame order.
  for (int t = 0; t < T; ++t) {
    out.weighted.sim += frame_weighted[t].sim;
    out.weighted.joint += frame_weighted[t].joint;
    out.weighted.pose += frame_weighted[t].pose;
    out.weighted.bone += frame_weighted[t].bone;
    out.weighted.lap += frame_weighted[t].lap;
    out.weighted.l2 += frame_weighted[t].l2;
    if (grad_mask) {
      const ParamLayout single{1, layout.joints, layout.classes, layout.verts};
      const auto& g = frame_grads[t];
      for (int k = 0; k < layout.joints; ++k)
        for (int a = 0; a < 3; ++a)
          out.grad[layout.rotation_coord(t, k, a)] += g[single.rotation_coord(0, k, a)];
      for (int a = 0; a < 3; ++a)
        out.grad[layout.offset_coord(t, a)] += g[single.offset_coord(0, a)];
      for (int c = 0; c < layout.classes; ++c)
        out.grad[layout.scales_begin() + c] += g[single.scales_begin() + c];
      for (int i = 0; i < layout.verts; ++i)
        out.grad[layout.displacements_begin() + i] += g[single.displacements_begin() + i];
    }
  }
  out.total = out.weighted.total();
  if (!std::isfinite(out.total)) throw NumericError("eval_sequence: non-finite energy");
  return out;
}

namespace {

struct StageOutcome {
  std::vector<double> trace;
  bool converged = false;
};

// Runs Adam on one stage, tracking the best-so-far iterate in `best_params` /
// `best_energy`. The trace records the refreshed energy at each iterate.
StageOutcome run_stage(const SkeletonTemplate& tmpl, ParamBlock& params,
                       std::span<const FrameContext> frames, const GmmPrior& gmm,
                       const LaplacianOperator& lap, const FitConfig& config,
                       const StageMask& mask, int max_iters, ParamBlock& best_params,
                       double& best_energy) {
  StageOutcome outcome;
  AdamState adam = AdamState::init(params.layout.size(), config.learning_rate);
  adam.beta1 = config.adam_beta1;
  adam.beta2 = config.adam_beta2;
  adam.eps = config.adam_eps;

  double prev_energy = 0;
  int small_change_run = 0;
  for (int iter = 0; iter < max_iters; ++iter) {
    const SequenceEval eval =
        eval_sequence(tmpl, params, frames, gmm, lap, config.weights, &mask);
    outcome.trace.push_back(eval.total);
    if (eval.total < best_energy) {
      best_energy = eval.total;
      best_params = params;
    }
    if (iter > 0) {
      const double decrease = (prev_energy - eval.total) / std::max(std::abs(prev_energy), 1e-12);
      small_change_run = decrease < config.tolerance ? small_change_run + 1 : 0;
      if (small_change_run >= config.tolerance_window) {
        outcome.converged = true;
        break;
      }
    }
    prev_energy = eval.total;
    adam_step(adam, params, eval.grad, mask);
  }
  return outcome;
}

}  // namespace

FitResult fit_sequence(std::span<const FrameObservation> obs, const SkeletonTemplate& tmpl,
                       const GmmPrior& gmm, const FitConfig& config) {
  config.validate();
  if (obs.empty()) throw ValidationError("fit_sequence: empty sequence");
  for (size_t t = 1; t < obs.size(); ++t)
    if (!(obs[t].timestamp > obs[t - 1].timestamp))
      throw ValidationError("fit_sequence: timestamps must be strictly increasing");

  bool any_lidar = false;
  for (const auto& o : obs) any_lidar = any_lidar || !o.scan.target_points.empty();
  const bool any_joints = [&] {
    for (const auto& o : obs)
      if (!o.joints2d.detections.empty()) return true;
    return false;
  }();
  if (config.weights.lambda_joint == 0.0 && !any_lidar)
    throw ValidationError("fit_sequence: no usable evidence (lambda_joint = 0 and no LiDAR points)");
  if (!any_lidar && !any_joints)
    throw ValidationError("fit_sequence: no usable evidence (no LiDAR points, no 2D joints)");
  for (size_t t = 0; t < obs.size(); ++t)
    if (obs[t].scan.target_points.empty())
      throw ValidationError("fit_sequence: frame " + std::to_string(t) + " has no target points");

  if (config.initial_params &&
      config.initial_params->layout.frames != static_cast<int>(obs.size()))
    throw ValidationError("fit_sequence: initial_params frame count does not match observations");

  std::vector<FrameContext> frames;
  frames.reserve(obs.size());
  for (const auto& o : obs)
    frames.push_back(FrameContext::make(o.scan, o.joints2d.detections.empty() ? nullptr
                                                                              : &o.joints2d,
                                        &o.camera));
  const LaplacianOperator lap = LaplacianOperator::from_faces(tmpl.num_vertices(), tmpl.faces);

  FitResult result;
  for (const auto& o : obs) result.timestamps.push_back(o.timestamp);

  // Multi-start warmup; hindsight keeps the branch with the lower energy.
  struct Branch {
    ParamBlock params;
    ParamBlock best_params;
    double best_energy;
    double initial_energy;
    double yaw;
  };
  std::vector<Branch> branches;
  for (size_t b = 0; b < (config.initial_params ? 1 : config.yaws.size()); ++b) {
    Branch branch{config.initial_params ? *config.initial_params
                                        : init_params(tmpl, obs, gmm, config.yaws[b]),
                  ParamBlock{}, 0.0, 0.0, config.initial_params ? 0.0 : config.yaws[b]};
    branch.best_params = branch.params;
    branch.best_energy = std::numeric_limits<double>::infinity();
    branch.initial_energy =
        eval_sequence(tmpl, branch.params, frames, gmm, lap, config.weights, nullptr).total;
    run_stage(tmpl, branch.params, frames, gmm, lap, config, StageMask::pose_stage(),
              config.warmup_iters, branch.best_params, branch.best_energy);
    result.warmup_energies.push_back(branch.best_energy);
    branches.push_back(std::move(branch));
  }
  Branch& chosen = *std::min_element(branches.begin(), branches.end(),
                                     [](const Branch& a, const Branch& b) {
                                       return a.best_energy < b.best_energy;
                                     });
  result.chosen_yaw = chosen.yaw;
  result.initial_energy = chosen.initial_energy;

  ParamBlock params = chosen.params;
  ParamBlock best_params = chosen.best_params;
  double best_energy = chosen.best_energy;

  const StageOutcome stage1 =
      run_stage(tmpl, params, frames, gmm, lap, config, StageMask::pose_stage(),
                config.stage1_iters, best_params, best_energy);
  result.stage1_trace = stage1.trace;

  // Stage 2 refines displacements from the best stage-1 iterate.
  params = best_params;
  const StageOutcome stage2 =
      run_stage(tmpl, params, frames, gmm, lap, config, StageMask::shape_stage(),
                config.stage2_iters, best_params, best_energy);
  result.stage2_trace = stage2.trace;

  const SequenceEval final_eval =
      eval_sequence(tmpl, best_params, frames, gmm, lap, config.weights, nullptr);
  result.final_energy = final_eval.total;
  result.final_breakdown = final_eval.weighted;
  result.final_raw_terms = final_eval.raw;
  result.poses = best_params.poses();
  result.shape = best_params.shape();
  return result;
}

Metrics metrics(std::span<const PosedMesh> pred_meshes,
                std::span<const std::vector<Vec3d>> pred_joints,
                std::span<const PosedMesh> gt_meshes,
                std::span<const std::vector<Vec3d>> gt_joints) {
  if (pred_meshes.size() != gt_meshes.size() || pred_joints.size() != gt_joints.size() ||
      pred_meshes.size() != pred_joints.size() || pred_meshes.empty())
    throw ValidationError("metrics: frame counts disagree or are empty");
  Metrics m;
  for (size_t t = 0; t < pred_meshes.size(); ++t) {
    const auto& pv = pred_meshes[t].vertices;
    const auto& gv = gt_meshes[t].vertices;
    if (pv.size() != gv.size())
      throw ValidationError("metrics: vertex topology mismatch (PVE undefined)");
    if (pred_joints[t].size() != gt_joints[t].size())
      throw ValidationError("metrics: joint counts disagree");
    double pve = 0;
    for (size_t i = 0; i < pv.size(); ++i) pve += (pv[i] - gv[i]).norm();
    m.pve += pve / pv.size();
    double mpjpe = 0;
    for (size_t k = 0; k < pred_joints[t].size(); ++k)
      mpjpe += (pred_joints[t][k] - gt_joints[t][k]).norm();
    m.mpjpe += mpjpe / pred_joints[t].size();
    m.cd += std::sqrt(chamfer(pv, gv));
  }
  const double scale = 100.0 / pred_meshes.size();  // meters -> cm, averaged over frames
  m.pve *= scale;
  m.mpjpe *= scale;
  m.cd *= scale;
  return m;
}

Metrics metrics(const SkeletonTemplate& tmpl, std::span<const PoseParams> pred_poses,
                const ShapeParams& pred_shape, std::span<const PoseParams> gt_poses,
                const ShapeParams& gt_shape) {
  if (pred_poses.size() != gt_poses.size())
    throw ValidationError("metrics: sequence lengths disagree");
  std::vector<PosedMesh> pm, gm;
  std::vector<std::vector<Vec3d>> pj, gj;
  for (size_t t = 0; t < pred_poses.size(); ++t) {
    pm.push_back(pose_mesh(tmpl, pred_poses[t], pred_shape));
    gm.push_back(pose_mesh(tmpl, gt_poses[t], gt_shape));
    pj.push_back(joint_transforms(tmpl, pred_poses[t], pred_shape).posed_joints);
    gj.push_back(joint_transforms(tmpl, gt_poses[t], gt_shape).posed_joints);
  }
  return metrics(pm, pj, gm, gj);
}

}  // namespace bodyfit
