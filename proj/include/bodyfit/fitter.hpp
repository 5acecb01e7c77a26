#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bodyfit/energy.hpp"
#include "bodyfit/optim.hpp"

namespace bodyfit {

struct FrameObservation {
  LidarScan scan;
  Joints2D joints2d;
  Camera camera;
  double timestamp = 0;
};

struct FitConfig {
  EnergyWeights weights;
  int warmup_iters = 10;     // per yaw branch, before hindsight selection
  int stage1_iters = 150;
  int stage2_iters = 150;
  double tolerance = 1e-4;   // relative energy decrease
  int tolerance_window = 5;  // consecutive small-decrease iterations
  std::vector<double> yaws = {0.0, M_PI};
  double learning_rate = 1e-2;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  uint64_t seed = 0;

  // Asset-bank admission filters (checked by bank-add, not by the fit).
  int filter_min_points = 100;
  double filter_joint_score = 0.1;
  double filter_joint_score_fraction = 0.7;
  double filter_e_sim_max = 20.0;    // raw chamfer, cm^2
  double filter_e_joint_max = 6.0;   // raw robust pixel term
  double filter_e_pose_max = 22.0;   // raw prior term

  // Test hook: start from these parameters instead of init_params.
  std::optional<ParamBlock> initial_params;

  void validate() const;
};

struct FitResult {
  std::vector<PoseParams> poses;
  ShapeParams shape;
  double chosen_yaw = 0;
  double initial_energy = 0;  // of the chosen branch at its initialization
  double final_energy = 0;    // best-so-far total
  std::vector<double> warmup_energies;  // one final warmup energy per yaw branch
  std::vector<double> stage1_trace;     // energy at the start of each iteration
  std::vector<double> stage2_trace;
  EnergyBreakdown final_breakdown;
  std::vector<FrameTerms<double>> final_raw_terms;
  std::vector<double> timestamps;
};

// Prior-mean initialization with the root yaw composed on top; root offsets
// at the per-frame target centroids.
ParamBlock init_params(const SkeletonTemplate& tmpl, std::span<const FrameObservation> obs,
                       const GmmPrior& gmm, double yaw);

// Sequence energy and (optionally) its gradient under the stage mask.
// Correspondences are frozen at the current parameters, per frame.
struct SequenceEval {
  double total = 0;
  EnergyBreakdown weighted;
  std::vector<FrameTerms<double>> raw;
  std::vector<double> grad;
};
SequenceEval eval_sequence(const SkeletonTemplate& tmpl, const ParamBlock& params,
                           std::span<const FrameContext> frames, const GmmPrior& gmm,
                           const LaplacianOperator& lap, const EnergyWeights& weights,
                           const StageMask* grad_mask);

// Two-stage minimization with dual-yaw warmup and hindsight branch selection.
FitResult fit_sequence(std::span<const FrameObservation> obs, const SkeletonTemplate& tmpl,
                       const GmmPrior& gmm, const FitConfig& config);

// Evaluation metrics, all in centimeters.
struct Metrics {
  double pve = 0, mpjpe = 0, cd = 0;
};
Metrics metrics(std::span<const PosedMesh> pred_meshes,
                std::span<const std::vector<Vec3d>> pred_joints,
                std::span<const PosedMesh> gt_meshes,
                std::span<const std::vector<Vec3d>> gt_joints);
Metrics metrics(const SkeletonTemplate& tmpl, std::span<const PoseParams> pred_poses,
                const ShapeParams& pred_shape, std::span<const PoseParams> gt_poses,
                const ShapeParams& gt_shape);

}  // namespace bodyfit
