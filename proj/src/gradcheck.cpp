#include "bodyfit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bodyfit/optim.hpp"
#include "bodyfit/rng.hpp"
#include "bodyfit/simulate.hpp"

namespace bodyfit {

namespace {

struct Composite {
  double sim = 0, joint = 0, pose = 0, shape = 0;
  double total() const { return sim + joint + pose + shape; }
};

// Weighted composites summed over frames, with freezes held fixed.
Composite composite_at(const SkeletonTemplate& tmpl, const ParamBlock& params,
                       std::span<const FrameContext> frames,
                       std::span<const FrameFreeze> freezes, const GmmPrior& gmm,
                       const LaplacianOperator& lap, const EnergyWeights& w) {
  Composite out;
  for (size_t t = 0; t < frames.size(); ++t) {
    const PoseParams pose = params.pose(static_cast<int>(t));
    const ShapeParams shape = params.shape();
    const auto terms = eval_frame_frozen<double>(tmpl, pose, shape, gmm, lap, frames[t],
                                                 freezes[t], w.sigma);
    out.sim += w.lambda_sim * terms.sim;
    out.joint += w.lambda_joint * terms.joint;
    out.pose += w.lambda_pose * terms.gmm + w.lambda_bone * terms.bone;
    out.shape += w.lambda_lap * terms.lap + w.lambda_l2 * terms.l2;
  }
  return out;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

GradCheckReport run_gradcheck(const SkeletonTemplate& tmpl, const GmmPrior& gmm, uint64_t seed,
                              int trials, int coords_per_trial, double step) {
  GradCheckReport report;
  report.trials = trials;
  const LaplacianOperator lap = LaplacianOperator::from_faces(tmpl.num_vertices(), tmpl.faces);
  const EnergyWeights weights;

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(seed * 1000003u + trial);

    SynthConfig cfg;
    cfg.seed = seed + trial;
    cfg.frames = 2;
    cfg.azimuth_res = 0.008;
    cfg.elevation_res = 0.008;
    cfg.yaw = rng.uniform(-M_PI, M_PI);
    const SynthScene scene = synth_ground_truth(tmpl, gmm, cfg);

    std::vector<FrameContext> frames;
    for (const auto& o : scene.observations)
      frames.push_back(FrameContext::make(o.scan, &o.joints2d, &o.camera));

    ParamBlock params = ParamBlock::pack(tmpl, scene.true_poses, scene.true_shape);
    const ParamLayout& layout = params.layout;
    for (int t = 0; t < layout.frames; ++t) {
      for (int k = 0; k < layout.joints; ++k)
        for (int a = 0; a < 3; ++a)
          params.data[layout.rotation_coord(t, k, a)] += rng.normal(0.0, 0.06);
      for (int a = 0; a < 3; ++a) params.data[layout.offset_coord(t, a)] += rng.normal(0.0, 0.05);
    }
    for (int c = layout.scales_begin(); c < layout.displacements_begin(); ++c)
      params.data[c] = std::clamp(params.data[c] * (1.0 + rng.normal(0.0, 0.05)), 0.6, 1.8);
    for (int c = layout.displacements_begin(); c < layout.size(); ++c)
      params.data[c] += rng.normal(0.0, 0.004);

    std::vector<FrameFreeze> freezes;
    for (size_t t = 0; t < frames.size(); ++t)
      freezes.push_back(freeze_frame(tmpl, params.pose(static_cast<int>(t)), params.shape(),
                                     frames[t]));

    // Analytic gradients of each composite, accumulated over frames.
    std::vector<double> g_sim(layout.size(), 0.0), g_joint(layout.size(), 0.0),
        g_pose(layout.size(), 0.0), g_shape(layout.size(), 0.0), g_total(layout.size(), 0.0);
    for (size_t t = 0; t < frames.size(); ++t) {
      ad::Tape tape;
      ParamBlock single = ParamBlock::zeros(ParamLayout{1, layout.joints, layout.classes,
                                                        layout.verts});
      single.set_pose(0, params.pose(static_cast<int>(t)));
      single.set_shape(params.shape());
      const BoundParams bound = bind_params(single, tape, StageMask::all());
      const auto terms = eval_frame_frozen<ad::Var>(tmpl, bound.poses[0], bound.shape, gmm, lap,
                                                    frames[t], freezes[t], weights.sigma);
      const ad::Var sim_w = terms.sim * weights.lambda_sim;
      const ad::Var joint_w = terms.joint * weights.lambda_joint;
      const ad::Var pose_w = terms.gmm * weights.lambda_pose + terms.bone * weights.lambda_bone;
      const ad::Var shape_w = terms.lap * weights.lambda_lap + terms.l2 * weights.lambda_l2;
      const ad::Var total_w = sim_w + joint_w + pose_w + shape_w;

      const auto scatter = [&](const ad::Var& y, std::vector<double>& g) {
        if (y.i < 0) return;
        const std::vector<double> adj = tape.backward(y.i);
        std::vector<double> local(single.layout.size(), 0.0);
        accumulate_gradient(bound, adj, local);
        const ParamLayout sl = single.layout;
        for (int k = 0; k < layout.joints; ++k)
          for (int a = 0; a < 3; ++a)
            g[layout.rotation_coord(static_cast<int>(t), k, a)] +=
                local[sl.rotation_coord(0, k, a)];
        for (int a = 0; a < 3; ++a)
          g[layout.offset_coord(static_cast<int>(t), a)] += local[sl.offset_coord(0, a)];
        for (int c = 0; c < layout.classes; ++c)
          g[layout.scales_begin() + c] += local[sl.scales_begin() + c];
        for (int i = 0; i < layout.verts; ++i)
          g[layout.displacements_begin() + i] += local[sl.displacements_begin() + i];
      };
      scatter(sim_w, g_sim);
      scatter(joint_w, g_joint);
      scatter(pose_w, g_pose);
      scatter(shape_w, g_shape);
      scatter(total_w, g_total);
    }

    // Sampled coordinates across all groups.
    std::vector<int> coords;
    for (int s = 0; s < coords_per_trial; ++s) {
      const int group = s % 4;
      int coord = 0;
      switch (group) {
        case 0:
          coord = layout.rotation_coord(rng.uniform_int(0, layout.frames - 1),
                                        rng.uniform_int(0, layout.joints - 1),
                                        rng.uniform_int(0, 2));
          break;
        case 1:
          coord = layout.offset_coord(rng.uniform_int(0, layout.frames - 1),
                                      rng.uniform_int(0, 2));
          break;
        case 2:
          coord = layout.scales_begin() + rng.uniform_int(0, layout.classes - 1);
          break;
        default:
          coord = layout.displacements_begin() + rng.uniform_int(0, layout.verts - 1);
          break;
      }
      coords.push_back(coord);
    }

    for (int coord : coords) {
      ParamBlock plus = params, minus = params;
      plus.data[coord] += step;
      minus.data[coord] -= step;
      const Composite cp = composite_at(tmpl, plus, frames, freezes, gmm, lap, weights);
      const Composite cm = composite_at(tmpl, minus, frames, freezes, gmm, lap, weights);
      const double inv = 1.0 / (2.0 * step);
      report.sim = std::max(report.sim, rel_err(g_sim[coord], (cp.sim - cm.sim) * inv));
      report.joint = std::max(report.joint, rel_err(g_joint[coord], (cp.joint - cm.joint) * inv));
      report.pose = std::max(report.pose, rel_err(g_pose[coord], (cp.pose - cm.pose) * inv));
      report.shape = std::max(report.shape, rel_err(g_shape[coord], (cp.shape - cm.shape) * inv));
      report.total =
          std::max(report.total, rel_err(g_total[coord], (cp.total() - cm.total()) * inv));
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace bodyfit
