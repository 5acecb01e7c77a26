#include "bodyfit/optim.hpp"

#include <algorithm>
#include <cmath>

namespace bodyfit {

std::vector<char> StageMask::coordinate_mask(const ParamLayout& layout) const {
  std::vector<char> mask(layout.size(), 0);
  const auto fill = [&](int begin, int end, bool on) {
    if (on) std::fill(mask.begin() + begin, mask.begin() + end, 1);
  };
  fill(layout.rotations_begin(), layout.offsets_begin(), rotations);
  fill(layout.offsets_begin(), layout.scales_begin(), offsets);
  fill(layout.scales_begin(), layout.displacements_begin(), scales);
  fill(layout.displacements_begin(), layout.size(), displacements);
  return mask;
}

ParamBlock ParamBlock::zeros(const ParamLayout& layout) {
  ParamBlock block;
  block.layout = layout;
  block.data.assign(layout.size(), 0.0);
  return block;
}

ParamBlock ParamBlock::pack(const SkeletonTemplate& tmpl, std::span<const PoseParams> poses,
                            const ShapeParams& shape) {
  ParamLayout layout{static_cast<int>(poses.size()), tmpl.num_joints(), tmpl.num_scale_classes,
                     tmpl.num_vertices()};
  ParamBlock block = zeros(layout);
  for (int t = 0; t < layout.frames; ++t) block.set_pose(t, poses[t]);
  block.set_shape(shape);
  return block;
}

PoseParams ParamBlock::pose(int frame) const {
  PoseParams pose;
  pose.joint_rotations.resize(layout.joints);
  for (int k = 0; k < layout.joints; ++k)
    for (int a = 0; a < 3; ++a)
      pose.joint_rotations[k][a] = data[layout.rotation_coord(frame, k, a)];
  for (int a = 0; a < 3; ++a) pose.root_offset[a] = data[layout.offset_coord(frame, a)];
  return pose;
}

ShapeParams ParamBlock::shape() const {
  ShapeParams shape;
  shape.bone_scales.assign(data.begin() + layout.scales_begin(),
                           data.begin() + layout.displacements_begin());
  shape.displacements.assign(data.begin() + layout.displacements_begin(),
                             data.begin() + layout.size());
  return shape;
}

std::vector<PoseParams> ParamBlock::poses() const {
  std::vector<PoseParams> out;
  out.reserve(layout.frames);
  for (int t = 0; t < layout.frames; ++t) out.push_back(pose(t));
  return out;
}

void ParamBlock::set_pose(int frame, const PoseParams& pose) {
  for (int k = 0; k < layout.joints; ++k)
    for (int a = 0; a < 3; ++a)
      data[layout.rotation_coord(frame, k, a)] = pose.joint_rotations[k][a];
  for (int a = 0; a < 3; ++a) data[layout.offset_coord(frame, a)] = pose.root_offset[a];
}

void ParamBlock::set_shape(const ShapeParams& shape) {
  std::copy(shape.bone_scales.begin(), shape.bone_scales.end(),
            data.begin() + layout.scales_begin());
  std::copy(shape.displacements.begin(), shape.displacements.end(),
            data.begin() + layout.displacements_begin());
}

BoundParams bind_params(const ParamBlock& block, ad::Tape& tape, const StageMask& mask) {
  const ParamLayout& layout = block.layout;
  BoundParams bound;
  bound.leaf_node.assign(layout.size(), -1);
  const auto var_at = [&](int coord, bool active) -> ad::Var {
    if (!active) return ad::Var(block.data[coord]);
    const ad::Var v = ad::leaf(tape, block.data[coord]);
    bound.leaf_node[coord] = v.i;
    return v;
  };
  bound.poses.resize(layout.frames);
  for (int t = 0; t < layout.frames; ++t) {
    auto& pose = bound.poses[t];
    pose.joint_rotations.resize(layout.joints);
    for (int k = 0; k < layout.joints; ++k)
      for (int a = 0; a < 3; ++a)
        pose.joint_rotations[k][a] = var_at(layout.rotation_coord(t, k, a), mask.rotations);
    for (int a = 0; a < 3; ++a)
      pose.root_offset[a] = var_at(layout.offset_coord(t, a), mask.offsets);
  }
  bound.shape.bone_scales.resize(layout.classes);
  for (int c = 0; c < layout.classes; ++c)
    bound.shape.bone_scales[c] = var_at(layout.scales_begin() + c, mask.scales);
  bound.shape.displacements.resize(layout.verts);
  for (int i = 0; i < layout.verts; ++i)
    bound.shape.displacements[i] = var_at(layout.displacements_begin() + i, mask.displacements);
  return bound;
}

void accumulate_gradient(const BoundParams& bound, std::span<const double> adjoints,
                         std::span<double> grad) {
  for (std::size_t c = 0; c < bound.leaf_node.size(); ++c)
    if (bound.leaf_node[c] >= 0) grad[c] += adjoints[bound.leaf_node[c]];
}

std::vector<double> gradient(const DiffFn& objective, std::span<const double> x, double* value) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(x.size());
  for (double xi : x) vars.push_back(ad::leaf(tape, xi));
  const ad::Var y = objective(tape, vars);
  if (!std::isfinite(y.val())) throw NumericError("gradient: objective is non-finite");
  if (value) *value = y.val();
  const std::vector<double> adj = tape.backward(y.i);
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) grad[k] = y.i < 0 ? 0.0 : adj[vars[k].i];
  return grad;
}

AdamState AdamState::init(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, std::vector<double>& params, std::span<const double> grad,
               const std::vector<char>* active) {
  if (state.m.size() != params.size() || grad.size() != params.size())
    throw ValidationError("adam_step: dimension mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (active && !(*active)[k]) continue;
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * grad[k];
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * grad[k] * grad[k];
    const double m_hat = state.m[k] / bc1;
    const double v_hat = state.v[k] / bc2;
    params[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void adam_step(AdamState& state, ParamBlock& block, std::span<const double> grad,
               const StageMask& mask) {
  const std::vector<char> active = mask.coordinate_mask(block.layout);
  adam_step(state, block.data, grad, &active);
  for (int c = block.layout.scales_begin(); c < block.layout.displacements_begin(); ++c)
    block.data[c] = std::clamp(block.data[c], kScaleClampLo, kScaleClampHi);
}

}  // namespace bodyfit
