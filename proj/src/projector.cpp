#include "lip/projector.hpp"

#include <cmath>

namespace lip {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Trig {
  double c, s;
};

// Snap near-lattice trig values so that rotations by exact multiples of 90
// degrees land on integer grid points and degenerate to index permutations.
Trig trig_for(double angle_deg) {
  const double rad = angle_deg * kPi / 180.0;
  double c = std::cos(rad), s = std::sin(rad);
  if (std::fabs(c) < 1e-14) c = 0.0;
  if (std::fabs(s) < 1e-14) s = 0.0;
  return {c, s};
}

void require_square_slices(const Tensor& image, const char* what) {
  if (image.rank() == 2) {
    if (image.extent(0) != image.extent(1)) {
      throw ShapeError(std::string(what) + ": in-plane extents must be square, got " +
                       shape_to_string(image.shape()));
    }
  } else if (image.rank() == 3) {
    if (image.extent(1) != image.extent(2)) {
      throw ShapeError(std::string(what) + ": in-plane extents must be square, got " +
                       shape_to_string(image.shape()));
    }
  } else {
    throw ShapeError(std::string(what) + ": expected a 2D slice or 3D stack, got " +
                     shape_to_string(image.shape()));
  }
}

// One slice, gather (adjoint = false) or scatter (adjoint = true).
void rotate_slice(const double* src, double* dst, std::size_t n, const Trig& t, bool adjoint) {
  const double center = (double(n) - 1.0) / 2.0;
  const std::ptrdiff_t ni = std::ptrdiff_t(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double v = double(r) - center;
    for (std::size_t col = 0; col < n; ++col) {
      const double u = double(col) - center;
      // Source location for destination (r, col) under a CCW rotation.
      const double su = u * t.c - v * t.s + center;
      const double sv = u * t.s + v * t.c + center;
      const double fx = std::floor(su);
      const double fy = std::floor(sv);
      const std::ptrdiff_t x0 = std::ptrdiff_t(fx);
      const std::ptrdiff_t y0 = std::ptrdiff_t(fy);
      const double ax = su - fx;
      const double ay = sv - fy;
      const double w00 = (1.0 - ay) * (1.0 - ax);
      const double w01 = (1.0 - ay) * ax;
      const double w10 = ay * (1.0 - ax);
      const double w11 = ay * ax;
      const std::size_t di = r * n + col;
      const bool x0_in = x0 >= 0 && x0 < ni;
      const bool x1_in = x0 + 1 >= 0 && x0 + 1 < ni;
      const bool y0_in = y0 >= 0 && y0 < ni;
      const bool y1_in = y0 + 1 >= 0 && y0 + 1 < ni;
      if (!adjoint) {
        double acc = 0.0;
        if (y0_in) {
          if (x0_in && w00 != 0.0) acc += w00 * src[std::size_t(y0) * n + std::size_t(x0)];
          if (x1_in && w01 != 0.0) acc += w01 * src[std::size_t(y0) * n + std::size_t(x0 + 1)];
        }
        if (y1_in) {
          if (x0_in && w10 != 0.0) acc += w10 * src[std::size_t(y0 + 1) * n + std::size_t(x0)];
          if (x1_in && w11 != 0.0) acc += w11 * src[std::size_t(y0 + 1) * n + std::size_t(x0 + 1)];
        }
        dst[di] = acc;
      } else {
        const double g = src[di];
        if (g == 0.0) continue;
        if (y0_in) {
          if (x0_in && w00 != 0.0) dst[std::size_t(y0) * n + std::size_t(x0)] += w00 * g;
          if (x1_in && w01 != 0.0) dst[std::size_t(y0) * n + std::size_t(x0 + 1)] += w01 * g;
        }
        if (y1_in) {
          if (x0_in && w10 != 0.0) dst[std::size_t(y0 + 1) * n + std::size_t(x0)] += w10 * g;
          if (x1_in && w11 != 0.0) dst[std::size_t(y0 + 1) * n + std::size_t(x0 + 1)] += w11 * g;
        }
      }
    }
  }
}

Tensor rotate_impl(const Tensor& image, double angle_deg, bool adjoint) {
  require_square_slices(image, adjoint ? "rotate_bilinear_adjoint" : "rotate_bilinear");
  const Trig t = trig_for(angle_deg);
  Tensor out(image.shape());
  if (image.rank() == 2) {
    rotate_slice(image.data(), out.data(), image.extent(0), t, adjoint);
  } else {
    const std::size_t n = image.extent(1);
    const std::size_t slice = n * n;
    for (std::size_t d = 0; d < image.extent(0); ++d) {
      rotate_slice(image.data() + d * slice, out.data() + d * slice, n, t, adjoint);
    }
  }
  return out;
}

}  // namespace

AngleSet::AngleSet(std::vector<double> angles_deg) : angles_(std::move(angles_deg)) {
  if (angles_.empty()) throw ConfigError("AngleSet: angle list must be nonempty");
  double prev = -1.0;
  for (double a : angles_) {
    if (!(a >= 0.0 && a < 180.0)) {
      throw ConfigError("AngleSet: angles must lie in [0, 180), got " + std::to_string(a));
    }
    if (a <= prev) throw ConfigError("AngleSet: angles must be strictly increasing");
    prev = a;
  }
}

AngleSet AngleSet::uniform(std::size_t n) {
  if (n == 0) throw ConfigError("AngleSet: angle count must be positive");
  std::vector<double> angles(n);
  for (std::size_t j = 0; j < n; ++j) angles[j] = double(j) * 180.0 / double(n);
  return AngleSet(std::move(angles));
}

Tensor rotate_bilinear(const Tensor& image, double angle_deg) {
  return rotate_impl(image, angle_deg, false);
}

Tensor rotate_bilinear_adjoint(const Tensor& image, double angle_deg) {
  return rotate_impl(image, angle_deg, true);
}

Projection project(const Tensor& image, double angle_deg, double voxel_width) {
  Tensor rot = rotate_bilinear(image, -angle_deg);
  if (rot.rank() == 2) {
    const std::size_t n = rot.extent(1);
    Tensor bins(Shape{n});
    for (std::size_t r = 0; r < rot.extent(0); ++r) {
      const double* row = rot.data() + r * n;
      for (std::size_t x = 0; x < n; ++x) bins[x] += row[x];
    }
    bins.scale(voxel_width);
    return Projection{std::move(bins), angle_deg};
  }
  const std::size_t d_extent = rot.extent(0);
  const std::size_t n = rot.extent(2);
  Tensor bins(Shape{d_extent, n});
  for (std::size_t d = 0; d < d_extent; ++d) {
    double* out_row = bins.data() + d * n;
    for (std::size_t r = 0; r < rot.extent(1); ++r) {
      const double* row = rot.data() + (d * rot.extent(1) + r) * n;
      for (std::size_t x = 0; x < n; ++x) out_row[x] += row[x];
    }
  }
  bins.scale(voxel_width);
  return Projection{std::move(bins), angle_deg};
}

Tensor project_adjoint(const Projection& p, double angle_deg, const Shape& target_shape,
                       double voxel_width) {
  const Tensor& values = p.values;
  Tensor spread;
  if (target_shape.size() == 2) {
    if (values.rank() != 1 || target_shape[0] != target_shape[1] ||
        values.extent(0) != target_shape[1]) {
      throw ShapeError("project_adjoint: projection length inconsistent with target shape " +
                       shape_to_string(target_shape));
    }
    const std::size_t n = target_shape[1];
    spread = Tensor(target_shape);
    for (std::size_t r = 0; r < target_shape[0]; ++r) {
      double* row = spread.data() + r * n;
      for (std::size_t x = 0; x < n; ++x) row[x] = values[x] * voxel_width;
    }
  } else if (target_shape.size() == 3) {
    if (values.rank() != 2 || target_shape[1] != target_shape[2] ||
        values.extent(0) != target_shape[0] || values.extent(1) != target_shape[2]) {
      throw ShapeError("project_adjoint: projection extents inconsistent with target shape " +
                       shape_to_string(target_shape));
    }
    const std::size_t n = target_shape[2];
    spread = Tensor(target_shape);
    for (std::size_t d = 0; d < target_shape[0]; ++d) {
      const double* vrow = values.data() + d * n;
      for (std::size_t r = 0; r < target_shape[1]; ++r) {
        double* row = spread.data() + (d * target_shape[1] + r) * n;
        for (std::size_t x = 0; x < n; ++x) row[x] = vrow[x] * voxel_width;
      }
    }
  } else {
    throw ShapeError("project_adjoint: target shape must be rank 2 or 3");
  }
  return rotate_bilinear_adjoint(spread, -angle_deg);
}

Var rotate_op(Tape& tape, Var image, double angle_deg) {
  return tape.linear_unary(
      image, "rotate", [angle_deg](const Tensor& x) { return rotate_bilinear(x, angle_deg); },
      [angle_deg](const Tensor& g) { return rotate_bilinear_adjoint(g, angle_deg); });
}

Var project_op(Tape& tape, Var image, double angle_deg, double voxel_width) {
  const Shape in_shape = tape.value(image).shape();
  return tape.linear_unary(
      image, "project",
      [angle_deg, voxel_width](const Tensor& x) {
        return project(x, angle_deg, voxel_width).values;
      },
      [angle_deg, voxel_width, in_shape](const Tensor& g) {
        return project_adjoint(Projection{g, angle_deg}, angle_deg, in_shape, voxel_width);
      });
}

}  // namespace lip
