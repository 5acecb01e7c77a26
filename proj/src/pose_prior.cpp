#include <map>
#include <mutex>

#include "bodyfit/energy.hpp"
#include "bodyfit/rng.hpp"

namespace bodyfit {

namespace {

using AnchorSpec = std::vector<std::pair<const char*, Vec3d>>;

// Stand / stride / jog anchors; rotations are axis-angle, x forward, z up.
// Strides swing hips and shoulders about the lateral (y) axis.
std::vector<AnchorSpec> anchor_specs() {
  return {
      // stand
      {},
      // relaxed stand, elbows slightly bent
      {{"elbow_l", {0, -0.25, 0}}, {"elbow_r", {0, -0.25, 0}}, {"spine1", {0, 0.05, 0}}},
      // stride A: left leg forward
      {{"hip_l", {0, -0.42, 0}},
       {"knee_l", {0, 0.25, 0}},
       {"hip_r", {0, 0.35, 0}},
       {"knee_r", {0, 0.55, 0}},
       {"ankle_l", {0, 0.15, 0}},
       {"shoulder_l", {0, 0.30, 0}},
       {"shoulder_r", {0, -0.30, 0}},
       {"elbow_l", {0, -0.20, 0}},
       {"elbow_r", {0, -0.45, 0}},
       {"spine1", {0, 0.06, 0}}},
      // stride B: mirror of A
      {{"hip_r", {0, -0.42, 0}},
       {"knee_r", {0, 0.25, 0}},
       {"hip_l", {0, 0.35, 0}},
       {"knee_l", {0, 0.55, 0}},
       {"ankle_r", {0, 0.15, 0}},
       {"shoulder_r", {0, 0.30, 0}},
       {"shoulder_l", {0, -0.30, 0}},
       {"elbow_r", {0, -0.20, 0}},
       {"elbow_l", {0, -0.45, 0}},
       {"spine1", {0, 0.06, 0}}},
      // mid-stride passing poses
      {{"hip_l", {0, -0.12, 0}},
       {"knee_l", {0, 0.35, 0}},
       {"hip_r", {0, 0.10, 0}},
       {"shoulder_l", {0, 0.10, 0}},
       {"shoulder_r", {0, -0.10, 0}},
       {"elbow_l", {0, -0.30, 0}},
       {"elbow_r", {0, -0.30, 0}}},
      {{"hip_r", {0, -0.12, 0}},
       {"knee_r", {0, 0.35, 0}},
       {"hip_l", {0, 0.10, 0}},
       {"shoulder_r", {0, 0.10, 0}},
       {"shoulder_l", {0, -0.10, 0}},
       {"elbow_r", {0, -0.30, 0}},
       {"elbow_l", {0, -0.30, 0}}},
      // jog A/B: larger swings, bent elbows, forward lean
      {{"hip_l", {0, -0.65, 0}},
       {"knee_l", {0, 0.45, 0}},
       {"hip_r", {0, 0.50, 0}},
       {"knee_r", {0, 0.95, 0}},
       {"shoulder_l", {0, 0.40, 0}},
       {"shoulder_r", {0, -0.40, 0}},
       {"elbow_l", {0, -0.85, 0}},
       {"elbow_r", {0, -0.85, 0}},
       {"spine1", {0, 0.14, 0}}},
      {{"hip_r", {0, -0.65, 0}},
       {"knee_r", {0, 0.45, 0}},
       {"hip_l", {0, 0.50, 0}},
       {"knee_l", {0, 0.95, 0}},
       {"shoulder_r", {0, 0.40, 0}},
       {"shoulder_l", {0, -0.40, 0}},
       {"elbow_r", {0, -0.85, 0}},
       {"elbow_l", {0, -0.85, 0}},
       {"spine1", {0, 0.14, 0}}},
  };
}

std::vector<double> anchor_vector(const SkeletonTemplate& tmpl, const AnchorSpec& spec) {
  PoseParams pose;
  pose.joint_rotations.assign(tmpl.num_joints(), Vec3d(0, 0, 0));
  for (const auto& [name, aa] : spec) {
    const int k = tmpl.joint_index(name);
    if (k >= 0) pose.joint_rotations[k] = aa;
  }
  return pose_prior_vector<double>(tmpl, pose);
}

}  // namespace

std::vector<std::vector<double>> builtin_pose_samples(const SkeletonTemplate& tmpl,
                                                      int per_anchor, uint64_t seed) {
  const auto specs = anchor_specs();
  Rng rng(seed);
  std::vector<std::vector<double>> samples;
  samples.reserve(specs.size() * per_anchor);
  for (const auto& spec : specs) {
    const std::vector<double> anchor = anchor_vector(tmpl, spec);
    for (int s = 0; s < per_anchor; ++s) {
      std::vector<double> x = anchor;
      for (double& xi : x) xi += rng.normal(0.0, 0.04);
      samples.push_back(std::move(x));
    }
  }
  return samples;
}

const GmmPrior& default_pose_prior(const SkeletonTemplate& tmpl) {
  static std::mutex mutex;
  static std::map<int, GmmPrior> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(tmpl.num_joints());
  if (it == cache.end()) {
    const auto samples = builtin_pose_samples(tmpl, 160, 0xB0D7F17u);
    it = cache.emplace(tmpl.num_joints(), fit_gmm(samples, 8, 50, 0xB0D7F17u)).first;
  }
  return it->second;
}

}  // namespace bodyfit
