#pragma once

#include <cstdint>

#include "bodyfit/body_model.hpp"
#include "bodyfit/energy.hpp"

namespace bodyfit {

// Central-difference verification of the analytic gradients on randomized
// small problems (2 frames, coarse ray window), with correspondences and hit
// faces frozen at the evaluation point.
struct GradCheckReport {
  double sim = 0, joint = 0, pose = 0, shape = 0, total = 0;  // max relative errors
  int trials = 0;
  int coords_checked = 0;

  bool pass(double tol = 1e-4) const {
    return sim < tol && joint < tol && pose < tol && shape < tol && total < tol;
  }
};

GradCheckReport run_gradcheck(const SkeletonTemplate& tmpl, const GmmPrior& gmm, uint64_t seed,
                              int trials, int coords_per_trial = 12, double step = 1e-5);

}  // namespace bodyfit
