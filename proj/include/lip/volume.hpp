#pragma once

#include "lip/tensor.hpp"

namespace lip {

// Dense grid of voxel values with physical spacing. Values are attenuation
// coefficients in 1/cm, activity in SUV, or normalized intensities depending
// on context.
struct ImageVolume {
  Tensor values;               // [H, W] or [D, H, W]
  double voxel_width_cm = 0.4;  // in-plane spacing
};

}  // namespace lip
