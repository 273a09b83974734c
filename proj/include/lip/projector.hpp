#pragma once

#include <vector>

#include "lip/tape.hpp"
#include "lip/tensor.hpp"

namespace lip {

// Projection angles in degrees, strictly increasing within [0, 180).
class AngleSet {
 public:
  explicit AngleSet(std::vector<double> angles_deg);
  // n angles uniformly sampled over 180 degrees: {0, 180/n, ..., (n-1)*180/n}.
  static AngleSet uniform(std::size_t n);

  const std::vector<double>& angles() const { return angles_; }
  std::size_t count() const { return angles_.size(); }

 private:
  std::vector<double> angles_;
};

inline AngleSet make_angle_set(std::size_t n) { return AngleSet::uniform(n); }

// Line integrals at one angle: [bins] for a 2D image, [slices, bins] for a 3D
// volume projected slice by slice.
struct Projection {
  Tensor values;
  double angle_deg = 0.0;
};

// Counterclockwise rotation about the in-plane center ((H-1)/2, (W-1)/2) with
// bilinear interpolation; samples outside the source grid read as zero.
// Accepts a square [H, W] slice or a [D, H, W] stack rotated per slice.
Tensor rotate_bilinear(const Tensor& image, double angle_deg);

// Exact transpose of rotate_bilinear as a linear map (scatter with the same
// bilinear weights).
Tensor rotate_bilinear_adjoint(const Tensor& image, double angle_deg);

// Rotate by -angle, then sum along in-plane axis 0 and scale by the voxel
// width, so values are line integrals in physical units.
Projection project(const Tensor& image, double angle_deg, double voxel_width = 1.0);

// Exact transpose of project: broadcast along the summed axis, then scatter
// through the transposed rotation. <Px, y> == <x, P^T y> to roundoff.
Tensor project_adjoint(const Projection& p, double angle_deg, const Shape& target_shape,
                       double voxel_width = 1.0);

// Tape-recorded versions; gradients flow through the exact adjoint.
Var rotate_op(Tape& tape, Var image, double angle_deg);
Var project_op(Tape& tape, Var image, double angle_deg, double voxel_width = 1.0);

}  // namespace lip
