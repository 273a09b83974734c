#pragma once

// Independent brute-force implementations used as test oracles. These are
// written from the definitions, not from the library code paths they check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "lip/projector.hpp"
#include "lip/tensor.hpp"

namespace oracle {

inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  while (i < 0 || i >= std::ptrdiff_t(n)) {
    if (i < 0) i = -1 - i;
    if (i >= std::ptrdiff_t(n)) i = 2 * std::ptrdiff_t(n) - 1 - i;
  }
  return std::size_t(i);
}

// Plain nested-loop 2D convolution, [C_in, H, W] x [C_out, C_in, kh, kw].
inline lip::Tensor conv2d(const lip::Tensor& in, const lip::Tensor& k, std::size_t stride,
                          bool symmetric) {
  const std::size_t cin = in.extent(0), H = in.extent(1), W = in.extent(2);
  const std::size_t cout = k.extent(0), kh = k.extent(2), kw = k.extent(3);
  const std::size_t ph = symmetric ? (kh - 1) / 2 : 0;
  const std::size_t pw = symmetric ? (kw - 1) / 2 : 0;
  const std::size_t oh = (H + 2 * ph - kh) / stride + 1;
  const std::size_t ow = (W + 2 * pw - kw) / stride + 1;
  lip::Tensor out(lip::Shape{cout, oh, ow});
  for (std::size_t co = 0; co < cout; ++co) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t dy = 0; dy < kh; ++dy) {
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const std::ptrdiff_t sy = std::ptrdiff_t(y * stride + dy) - std::ptrdiff_t(ph);
              const std::ptrdiff_t sx = std::ptrdiff_t(x * stride + dx) - std::ptrdiff_t(pw);
              double v;
              if (symmetric) {
                v = in.at(ci, reflect(sy, H), reflect(sx, W));
              } else {
                v = in.at(ci, std::size_t(sy), std::size_t(sx));
              }
              acc += v * k[((co * cin + ci) * kh + dy) * kw + dx];
            }
          }
        }
        out.at(co, y, x) = acc;
      }
    }
  }
  return out;
}

inline lip::Tensor conv3d(const lip::Tensor& in, const lip::Tensor& k, std::size_t stride,
                          bool symmetric) {
  const std::size_t cin = in.extent(0), D = in.extent(1), H = in.extent(2), W = in.extent(3);
  const std::size_t cout = k.extent(0), kd = k.extent(2), kh = k.extent(3), kw = k.extent(4);
  const std::size_t pd = symmetric ? (kd - 1) / 2 : 0;
  const std::size_t ph = symmetric ? (kh - 1) / 2 : 0;
  const std::size_t pw = symmetric ? (kw - 1) / 2 : 0;
  const std::size_t od = (D + 2 * pd - kd) / stride + 1;
  const std::size_t oh = (H + 2 * ph - kh) / stride + 1;
  const std::size_t ow = (W + 2 * pw - kw) / stride + 1;
  lip::Tensor out(lip::Shape{cout, od, oh, ow});
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t dz = 0; dz < kd; ++dz)
              for (std::size_t dy = 0; dy < kh; ++dy)
                for (std::size_t dx = 0; dx < kw; ++dx) {
                  const std::ptrdiff_t sz = std::ptrdiff_t(z * stride + dz) - std::ptrdiff_t(pd);
                  const std::ptrdiff_t sy = std::ptrdiff_t(y * stride + dy) - std::ptrdiff_t(ph);
                  const std::ptrdiff_t sx = std::ptrdiff_t(x * stride + dx) - std::ptrdiff_t(pw);
                  double v;
                  if (symmetric) {
                    v = in[((ci * D + reflect(sz, D)) * H + reflect(sy, H)) * W + reflect(sx, W)];
                  } else {
                    v = in[((ci * D + std::size_t(sz)) * H + std::size_t(sy)) * W +
                           std::size_t(sx)];
                  }
                  acc += v * k[(((co * cin + ci) * kd + dz) * kh + dy) * kw + dx];
                }
          out[((co * od + z) * oh + y) * ow + x] = acc;
        }
  return out;
}

// Inverse-map bilinear rotation (CCW about the center, zeros outside).
inline lip::Tensor rotate2d(const lip::Tensor& img, double angle_deg) {
  const std::size_t n = img.extent(0);
  const double c = std::cos(angle_deg * M_PI / 180.0);
  const double s = std::sin(angle_deg * M_PI / 180.0);
  const double center = (double(n) - 1.0) / 2.0;
  lip::Tensor out(img.shape());
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t col = 0; col < n; ++col) {
      const double u = double(col) - center;
      const double v = double(r) - center;
      const double sx = u * c - v * s + center;
      const double sy = u * s + v * c + center;
      const std::ptrdiff_t x0 = std::ptrdiff_t(std::floor(sx));
      const std::ptrdiff_t y0 = std::ptrdiff_t(std::floor(sy));
      const double fx = sx - std::floor(sx);
      const double fy = sy - std::floor(sy);
      double acc = 0.0;
      const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
      for (int i = 0; i < 4; ++i) {
        if (ys[i] >= 0 && ys[i] < std::ptrdiff_t(n) && xs[i] >= 0 && xs[i] < std::ptrdiff_t(n)) {
          acc += w[i] * img.at(std::size_t(ys[i]), std::size_t(xs[i]));
        }
      }
      out.at(r, col) = acc;
    }
  }
  return out;
}

// Rotate by -angle then sum image rows into detector bins.
inline std::vector<double> project2d(const lip::Tensor& img, double angle_deg,
                                     double voxel_width) {
  const lip::Tensor rot = rotate2d(img, -angle_deg);
  const std::size_t n = img.extent(0);
  std::vector<double> bins(n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t x = 0; x < n; ++x) bins[x] += rot.at(r, x) * voxel_width;
  return bins;
}

// Mean over angles of per-angle mean squared projection difference.
inline double lip_loss(const lip::Tensor& x, const lip::Tensor& y,
                       const std::vector<double>& angles, double voxel_width) {
  double acc = 0.0;
  for (double a : angles) {
    const auto px = project2d(x, a, voxel_width);
    const auto py = project2d(y, a, voxel_width);
    double term = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i) term += (px[i] - py[i]) * (px[i] - py[i]);
    acc += term / double(px.size());
  }
  return acc / double(angles.size());
}

inline double linmae(const lip::Tensor& x, const lip::Tensor& y,
                     const std::vector<double>& angles, double voxel_width) {
  double acc = 0.0;
  for (double a : angles) {
    const auto px = project2d(x, a, voxel_width);
    const auto py = project2d(y, a, voxel_width);
    double hi = py[0], lo = py[0], term = 0.0;
    for (double v : py) {
      hi = std::max(hi, v);
      lo = std::min(lo, v);
    }
    for (std::size_t i = 0; i < px.size(); ++i) term += std::fabs(px[i] - py[i]);
    acc += term / (double(px.size()) * (hi - lo));
  }
  return acc / double(angles.size());
}

// Sum over axes of the mean of (| forward diff X| - |forward diff Y|)^2.
inline double gdl(const lip::Tensor& x, const lip::Tensor& y) {
  const std::size_t H = x.extent(0), W = x.extent(1);
  double row_term = 0.0;
  for (std::size_t i = 0; i + 1 < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double gx = std::fabs(x.at(i + 1, j) - x.at(i, j));
      const double gy = std::fabs(y.at(i + 1, j) - y.at(i, j));
      row_term += (gx - gy) * (gx - gy);
    }
  row_term /= double((H - 1) * W);
  double col_term = 0.0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j + 1 < W; ++j) {
      const double gx = std::fabs(x.at(i, j + 1) - x.at(i, j));
      const double gy = std::fabs(y.at(i, j + 1) - y.at(i, j));
      col_term += (gx - gy) * (gx - gy);
    }
  col_term /= double(H * (W - 1));
  return row_term + col_term;
}

// Direct windowed SSIM: per-position weighted statistics, no separable pass.
inline double ssim(const lip::Tensor& x, const lip::Tensor& y) {
  constexpr std::size_t K = 11;
  constexpr double sigma = 1.5, k1 = 0.01, k2 = 0.03;
  double range_hi = y[0], range_lo = y[0];
  for (std::size_t i = 0; i < y.size(); ++i) {
    range_hi = std::max(range_hi, y[i]);
    range_lo = std::min(range_lo, y[i]);
  }
  const double L = range_hi - range_lo;
  double w[K][K], wsum = 0.0;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      const double di = double(i) - 5.0, dj = double(j) - 5.0;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      wsum += w[i][j];
    }
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j) w[i][j] /= wsum;
  const double c1 = (k1 * L) * (k1 * L), c2 = (k2 * L) * (k2 * L);
  const std::size_t H = x.extent(0), W = x.extent(1);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + K <= H; ++y0) {
    for (std::size_t x0 = 0; x0 + K <= W; ++x0) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
          const double xv = x.at(y0 + i, x0 + j), yv = y.at(y0 + i, x0 + j);
          mx += w[i][j] * xv;
          my += w[i][j] * yv;
          mxx += w[i][j] * xv * xv;
          myy += w[i][j] * yv * yv;
          mxy += w[i][j] * xv * yv;
        }
      const double vx = mxx - mx * mx, vy = myy - my * my, vxy = mxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / double(count);
}

}  // namespace oracle
