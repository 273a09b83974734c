#include "lip/losses.hpp"

#include <cmath>

namespace lip {

void LossWeights::validate() const {
  if (!(std::isfinite(lambda1) && lambda1 >= 0.0)) {
    throw ConfigError("LossWeights: lambda1 must be finite and >= 0");
  }
  if (!(std::isfinite(lambda2) && lambda2 >= 0.0)) {
    throw ConfigError("LossWeights: lambda2 must be finite and >= 0");
  }
}

Var l1_loss(Tape& t, Var x, Var y) {
  require_same_shape(t.value(x), t.value(y), "l1_loss");
  return t.reduce_mean(t.abs(t.sub(x, y)));
}

Var gdl_loss(Tape& t, Var x, Var y) {
  const std::size_t rank = t.value(x).rank();
  std::vector<std::size_t> axes(rank);
  for (std::size_t ax = 0; ax < rank; ++ax) axes[ax] = ax;
  return gdl_loss(t, x, y, axes);
}

Var gdl_loss(Tape& t, Var x, Var y, const std::vector<std::size_t>& axes) {
  // Keep a copy: pushing nodes may invalidate references into the tape.
  const Shape shape = t.value(x).shape();
  require_same_shape(t.value(x), t.value(y), "gdl_loss");
  if (shape.empty() || axes.empty()) {
    throw ShapeError("gdl_loss: need at least one spatial axis");
  }
  for (std::size_t ax : axes) {
    if (ax >= shape.size()) throw ShapeError("gdl_loss: axis out of range");
    if (shape[ax] < 2) {
      throw ShapeError("gdl_loss: every spatial axis needs extent >= 2, got " +
                       shape_to_string(shape));
    }
  }
  Var acc{};
  for (std::size_t ax : axes) {
    Var gx = t.abs(t.spatial_gradient(x, ax));
    Var gy = t.abs(t.spatial_gradient(y, ax));
    Var term = t.reduce_mean(t.square(t.sub(gx, gy)));
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return acc;
}

Var lip_loss(Tape& t, Var x, Var y, const AngleSet& angles, double voxel_width) {
  require_same_shape(t.value(x), t.value(y), "lip_loss");
  Var acc{};
  for (double angle : angles.angles()) {
    Var px = project_op(t, x, angle, voxel_width);
    Var py = project_op(t, y, angle, voxel_width);
    Var term = t.reduce_mean(t.square(t.sub(px, py)));
    acc = acc.valid() ? t.add(acc, term) : term;
  }
  return t.scalar_mul(acc, 1.0 / double(angles.count()));
}

Var total_loss(Tape& t, Var x, Var y, const LossWeights& weights, const AngleSet& angles,
               double voxel_width) {
  weights.validate();
  Var total = l1_loss(t, x, y);
  if (weights.lambda1 != 0.0) {
    total = t.add(total, t.scalar_mul(gdl_loss(t, x, y), weights.lambda1));
  }
  if (weights.lambda2 != 0.0) {
    total = t.add(total, t.scalar_mul(lip_loss(t, x, y, angles, voxel_width), weights.lambda2));
  }
  return total;
}

double l1_loss_value(const Tensor& x, const Tensor& y) {
  Tape t;
  return t.value(l1_loss(t, t.constant(x), t.constant(y)))[0];
}

double gdl_loss_value(const Tensor& x, const Tensor& y) {
  Tape t;
  return t.value(gdl_loss(t, t.constant(x), t.constant(y)))[0];
}

double lip_loss_value(const Tensor& x, const Tensor& y, const AngleSet& angles,
                      double voxel_width) {
  Tape t;
  return t.value(lip_loss(t, t.constant(x), t.constant(y), angles, voxel_width))[0];
}

}  // namespace lip
