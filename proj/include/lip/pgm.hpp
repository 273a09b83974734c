#pragma once

#include <string>

#include "lip/tensor.hpp"

namespace lip {

// Binary (P5) 8-bit PGM, intensities linearly mapped from [min, max] to
// [0, 255]; a constant image maps to all zeros.
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace lip
