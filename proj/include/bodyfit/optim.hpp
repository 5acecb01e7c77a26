#pragma once

#include <functional>
#include <span>
#include <vector>

#include "bodyfit/ad.hpp"
#include "bodyfit/body_model.hpp"
#include "bodyfit/energy.hpp"
#include "bodyfit/error.hpp"

namespace bodyfit {

// Flattening order: per-frame joint rotations, per-frame root offsets, bone
// scales, displacements.
struct ParamLayout {
  int frames = 0, joints = 0, classes = 0, verts = 0;

  int rotations_begin() const { return 0; }
  int offsets_begin() const { return 3 * joints * frames; }
  int scales_begin() const { return offsets_begin() + 3 * frames; }
  int displacements_begin() const { return scales_begin() + classes; }
  int size() const { return displacements_begin() + verts; }

  int rotation_coord(int frame, int joint, int axis) const {
    return rotations_begin() + 3 * (frame * joints + joint) + axis;
  }
  int offset_coord(int frame, int axis) const { return offsets_begin() + 3 * frame + axis; }
};

// Which parameter groups a stage optimizes. Stage 1 works on pose, offsets
// and bone scales; stage 2 on the per-vertex displacements.
struct StageMask {
  bool rotations = true, offsets = true, scales = true, displacements = true;

  static StageMask all() { return {}; }
  static StageMask pose_stage() { return {true, true, true, false}; }
  static StageMask shape_stage() { return {false, false, false, true}; }

  std::vector<char> coordinate_mask(const ParamLayout& layout) const;
};

struct ParamBlock {
  ParamLayout layout;
  std::vector<double> data;

  static ParamBlock zeros(const ParamLayout& layout);
  static ParamBlock pack(const SkeletonTemplate& tmpl, std::span<const PoseParams> poses,
                         const ShapeParams& shape);

  PoseParams pose(int frame) const;
  ShapeParams shape() const;
  std::vector<PoseParams> poses() const;

  void set_pose(int frame, const PoseParams& pose);
  void set_shape(const ShapeParams& shape);
};

// Tape bindings for one evaluation: active coordinates become tape leaves,
// masked ones stay constants (and therefore get exactly zero gradient).
struct BoundParams {
  std::vector<PoseT<ad::Var>> poses;
  ShapeT<ad::Var> shape;
  std::vector<int32_t> leaf_node;  // per coordinate; -1 when masked
};
BoundParams bind_params(const ParamBlock& block, ad::Tape& tape, const StageMask& mask);

// Scatters tape adjoints back into a layout-sized gradient vector.
void accumulate_gradient(const BoundParams& bound, std::span<const double> adjoints,
                         std::span<double> grad);

// Generic scalar objective: builds its value on the given tape from leaf
// variables seeded with x.
using DiffFn = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

// Exact derivative of the (frozen-correspondence) objective. Throws
// NumericError when the objective is non-finite.
std::vector<double> gradient(const DiffFn& objective, std::span<const double> x,
                             double* value = nullptr);

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double lr = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  static AdamState init(std::size_t n, double lr);
};

// Bias-corrected Adam update. Inactive coordinates are untouched (moments
// included). Bone scales are clamped to [0.5, 2] after the step.
void adam_step(AdamState& state, std::vector<double>& params, std::span<const double> grad,
               const std::vector<char>* active = nullptr);
void adam_step(AdamState& state, ParamBlock& block, std::span<const double> grad,
               const StageMask& mask);

inline constexpr double kScaleClampLo = 0.5;
inline constexpr double kScaleClampHi = 2.0;

}  // namespace bodyfit
