#pragma once

#include "lip/projector.hpp"
#include "lip/tape.hpp"

namespace lip {

struct LossWeights {
  double lambda1 = 1.0;   // gradient-difference term
  double lambda2 = 0.02;  // projection term
  void validate() const;
};

// Mean absolute difference over all elements.
Var l1_loss(Tape& tape, Var x, Var y);

// Sum over spatial axes of the mean squared difference of absolute forward
// differences. Every spatial axis needs extent >= 2. The default treats all
// axes as spatial; a batched caller passes the spatial axes explicitly.
Var gdl_loss(Tape& tape, Var x, Var y);
Var gdl_loss(Tape& tape, Var x, Var y, const std::vector<std::size_t>& axes);

// Mean over angles of the per-angle mean squared projection difference.
Var lip_loss(Tape& tape, Var x, Var y, const AngleSet& angles, double voxel_width = 1.0);

// l1 + lambda1 * gdl + lambda2 * lip. The projection term is skipped entirely
// when lambda2 == 0, which keeps the zero-weight graph identical to the
// image-domain one.
Var total_loss(Tape& tape, Var x, Var y, const LossWeights& weights, const AngleSet& angles,
               double voxel_width = 1.0);

// Forward-only conveniences for metrics and logging; same code path as the
// tape versions.
double l1_loss_value(const Tensor& x, const Tensor& y);
double gdl_loss_value(const Tensor& x, const Tensor& y);
double lip_loss_value(const Tensor& x, const Tensor& y, const AngleSet& angles,
                      double voxel_width = 1.0);

}  // namespace lip
