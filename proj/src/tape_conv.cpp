#include <array>
#include <memory>

#include "lip/tape.hpp"

namespace lip {

namespace {

struct ConvGeom {
  std::size_t rank = 2;  // spatial rank
  std::size_t cin = 0, cout = 0;
  std::array<std::size_t, 3> in{1, 1, 1};      // input spatial extents
  std::array<std::size_t, 3> k{1, 1, 1};       // kernel extents
  std::array<std::size_t, 3> pad{0, 0, 0};     // per-side padding
  std::array<std::size_t, 3> padded{1, 1, 1};  // padded extents
  std::array<std::size_t, 3> out{1, 1, 1};     // output spatial extents
  std::array<std::size_t, 3> stride{1, 1, 1};
};

std::size_t reflect_index(std::ptrdiff_t i, std::size_t extent) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(extent);
  while (i < 0 || i >= n) {
    if (i < 0) i = -1 - i;       // value at distance d outside = distance d inside
    if (i >= n) i = 2 * n - 1 - i;
  }
  return static_cast<std::size_t>(i);
}

ConvGeom make_geom(const Tensor& input, const Tensor& kernels,
                   const std::vector<std::size_t>& stride, Padding padding) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("conv_nd: input must be [C_in, spatial...] of rank 3 or 4, got " +
                     shape_to_string(input.shape()));
  }
  ConvGeom g;
  g.rank = input.rank() - 1;
  if (kernels.rank() != g.rank + 2) {
    throw ShapeError("conv_nd: kernels must be [C_out, C_in, k...], got " +
                     shape_to_string(kernels.shape()));
  }
  g.cin = input.extent(0);
  g.cout = kernels.extent(0);
  if (kernels.extent(1) != g.cin) {
    throw ShapeError("conv_nd: kernel C_in " + std::to_string(kernels.extent(1)) +
                     " does not match input channels " + std::to_string(g.cin));
  }
  if (stride.size() != g.rank) throw ConfigError("conv_nd: stride must have one entry per spatial axis");
  for (std::size_t ax = 0; ax < g.rank; ++ax) {
    g.in[ax] = input.extent(ax + 1);
    g.k[ax] = kernels.extent(ax + 2);
    g.stride[ax] = stride[ax];
    if (g.stride[ax] == 0) throw ConfigError("conv_nd: stride must be positive");
    if (padding == Padding::kSymmetric) {
      if (g.k[ax] % 2 == 0) {
        throw ConfigError("conv_nd: symmetric padding requires odd kernel extents");
      }
      g.pad[ax] = (g.k[ax] - 1) / 2;
    }
    if (g.stride[ax] > 1 && g.in[ax] % g.stride[ax] != 0) {
      throw ConfigError("conv_nd: spatial extent " + std::to_string(g.in[ax]) +
                        " not divisible by stride " + std::to_string(g.stride[ax]));
    }
    g.padded[ax] = g.in[ax] + 2 * g.pad[ax];
    if (g.padded[ax] < g.k[ax]) {
      throw ShapeError("conv_nd: kernel larger than (padded) input along axis " +
                       std::to_string(ax));
    }
    if ((g.padded[ax] - g.k[ax]) % g.stride[ax] != 0) {
      throw ConfigError("conv_nd: geometry not tileable by stride along axis " +
                        std::to_string(ax));
    }
    g.out[ax] = (g.padded[ax] - g.k[ax]) / g.stride[ax] + 1;
  }
  return g;
}

// Symmetric padding of [C, spatial...]; with zero padding this is the identity
// and callers avoid the copy.
Tensor make_padded(const Tensor& input, const ConvGeom& g) {
  Shape ps{g.cin};
  for (std::size_t ax = 0; ax < g.rank; ++ax) ps.push_back(g.padded[ax]);
  Tensor padded(ps);
  if (g.rank == 2) {
    const std::size_t PH = g.padded[0], PW = g.padded[1];
    for (std::size_t c = 0; c < g.cin; ++c) {
      const double* src = input.data() + c * g.in[0] * g.in[1];
      double* dst = padded.data() + c * PH * PW;
      for (std::size_t y = 0; y < PH; ++y) {
        const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(g.pad[0]), g.in[0]);
        for (std::size_t x = 0; x < PW; ++x) {
          const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(g.pad[1]), g.in[1]);
          dst[y * PW + x] = src[sy * g.in[1] + sx];
        }
      }
    }
  } else {
    const std::size_t PD = g.padded[0], PH = g.padded[1], PW = g.padded[2];
    for (std::size_t c = 0; c < g.cin; ++c) {
      const double* src = input.data() + c * g.in[0] * g.in[1] * g.in[2];
      double* dst = padded.data() + c * PD * PH * PW;
      for (std::size_t z = 0; z < PD; ++z) {
        const std::size_t sz = reflect_index(std::ptrdiff_t(z) - std::ptrdiff_t(g.pad[0]), g.in[0]);
        for (std::size_t y = 0; y < PH; ++y) {
          const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(g.pad[1]), g.in[1]);
          for (std::size_t x = 0; x < PW; ++x) {
            const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(g.pad[2]), g.in[2]);
            dst[(z * PH + y) * PW + x] = src[(sz * g.in[1] + sy) * g.in[2] + sx];
          }
        }
      }
    }
  }
  return padded;
}

// Fold gradients of the padded buffer back onto the unpadded image.
void fold_padded(const Tensor& gpad, Tensor& gin, const ConvGeom& g) {
  if (g.rank == 2) {
    const std::size_t PH = g.padded[0], PW = g.padded[1];
    for (std::size_t c = 0; c < g.cin; ++c) {
      const double* src = gpad.data() + c * PH * PW;
      double* dst = gin.data() + c * g.in[0] * g.in[1];
      for (std::size_t y = 0; y < PH; ++y) {
        const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(g.pad[0]), g.in[0]);
        for (std::size_t x = 0; x < PW; ++x) {
          const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(g.pad[1]), g.in[1]);
          dst[sy * g.in[1] + sx] += src[y * PW + x];
        }
      }
    }
  } else {
    const std::size_t PD = g.padded[0], PH = g.padded[1], PW = g.padded[2];
    for (std::size_t c = 0; c < g.cin; ++c) {
      const double* src = gpad.data() + c * PD * PH * PW;
      double* dst = gin.data() + c * g.in[0] * g.in[1] * g.in[2];
      for (std::size_t z = 0; z < PD; ++z) {
        const std::size_t sz = reflect_index(std::ptrdiff_t(z) - std::ptrdiff_t(g.pad[0]), g.in[0]);
        for (std::size_t y = 0; y < PH; ++y) {
          const std::size_t sy = reflect_index(std::ptrdiff_t(y) - std::ptrdiff_t(g.pad[1]), g.in[1]);
          for (std::size_t x = 0; x < PW; ++x) {
            const std::size_t sx = reflect_index(std::ptrdiff_t(x) - std::ptrdiff_t(g.pad[2]), g.in[2]);
            dst[(sz * g.in[1] + sy) * g.in[2] + sx] += src[(z * PH + y) * PW + x];
          }
        }
      }
    }
  }
}

void conv_forward(const Tensor& padded, const Tensor& kernels, Tensor& out, const ConvGeom& g) {
  if (g.rank == 2) {
    const std::size_t PH = g.padded[0], PW = g.padded[1];
    const std::size_t OH = g.out[0], OW = g.out[1];
    const std::size_t KH = g.k[0], KW = g.k[1];
    const std::size_t sy = g.stride[0], sx = g.stride[1];
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* oc = out.data() + co * OH * OW;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = padded.data() + ci * PH * PW;
        const double* kc = kernels.data() + (co * g.cin + ci) * KH * KW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double w = kc[ky * KW + kx];
            if (w == 0.0) continue;
            for (std::size_t y = 0; y < OH; ++y) {
              const double* src = pc + (y * sy + ky) * PW + kx;
              double* dst = oc + y * OW;
              if (sx == 1) {
                for (std::size_t x = 0; x < OW; ++x) dst[x] += w * src[x];
              } else {
                for (std::size_t x = 0; x < OW; ++x) dst[x] += w * src[x * sx];
              }
            }
          }
        }
      }
    }
  } else {
    const std::size_t PD = g.padded[0], PH = g.padded[1], PW = g.padded[2];
    const std::size_t OD = g.out[0], OH = g.out[1], OW = g.out[2];
    const std::size_t KD = g.k[0], KH = g.k[1], KW = g.k[2];
    const std::size_t sz = g.stride[0], sy = g.stride[1], sx = g.stride[2];
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* oc = out.data() + co * OD * OH * OW;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = padded.data() + ci * PD * PH * PW;
        const double* kc = kernels.data() + (co * g.cin + ci) * KD * KH * KW;
        for (std::size_t kz = 0; kz < KD; ++kz) {
          for (std::size_t ky = 0; ky < KH; ++ky) {
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const double w = kc[(kz * KH + ky) * KW + kx];
              if (w == 0.0) continue;
              for (std::size_t z = 0; z < OD; ++z) {
                for (std::size_t y = 0; y < OH; ++y) {
                  const double* src = pc + ((z * sz + kz) * PH + y * sy + ky) * PW + kx;
                  double* dst = oc + (z * OH + y) * OW;
                  for (std::size_t x = 0; x < OW; ++x) dst[x] += w * src[x * sx];
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_kernels(const Tensor& padded, const Tensor& gout, Tensor& gk,
                           const ConvGeom& g) {
  if (g.rank == 2) {
    const std::size_t PH = g.padded[0], PW = g.padded[1];
    const std::size_t OH = g.out[0], OW = g.out[1];
    const std::size_t KH = g.k[0], KW = g.k[1];
    const std::size_t sy = g.stride[0], sx = g.stride[1];
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* goc = gout.data() + co * OH * OW;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = padded.data() + ci * PH * PW;
        double* kc = gk.data() + (co * g.cin + ci) * KH * KW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            double acc = 0.0;
            for (std::size_t y = 0; y < OH; ++y) {
              const double* src = pc + (y * sy + ky) * PW + kx;
              const double* go = goc + y * OW;
              if (sx == 1) {
                for (std::size_t x = 0; x < OW; ++x) acc += go[x] * src[x];
              } else {
                for (std::size_t x = 0; x < OW; ++x) acc += go[x] * src[x * sx];
              }
            }
            kc[ky * KW + kx] += acc;
          }
        }
      }
    }
  } else {
    const std::size_t PD = g.padded[0], PH = g.padded[1], PW = g.padded[2];
    const std::size_t OD = g.out[0], OH = g.out[1], OW = g.out[2];
    const std::size_t KD = g.k[0], KH = g.k[1], KW = g.k[2];
    const std::size_t sz = g.stride[0], sy = g.stride[1], sx = g.stride[2];
    for (std::size_t co = 0; co < g.cout; ++co) {
      const double* goc = gout.data() + co * OD * OH * OW;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const double* pc = padded.data() + ci * PD * PH * PW;
        double* kc = gk.data() + (co * g.cin + ci) * KD * KH * KW;
        for (std::size_t kz = 0; kz < KD; ++kz) {
          for (std::size_t ky = 0; ky < KH; ++ky) {
            for (std::size_t kx = 0; kx < KW; ++kx) {
              double acc = 0.0;
              for (std::size_t z = 0; z < OD; ++z) {
                for (std::size_t y = 0; y < OH; ++y) {
                  const double* src = pc + ((z * sz + kz) * PH + y * sy + ky) * PW + kx;
                  const double* go = goc + (z * OH + y) * OW;
                  for (std::size_t x = 0; x < OW; ++x) acc += go[x] * src[x * sx];
                }
              }
              kc[(kz * KH + ky) * KW + kx] += acc;
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(const Tensor& gout, const Tensor& kernels, Tensor& gpad,
                         const ConvGeom& g) {
  if (g.rank == 2) {
    const std::size_t PH = g.padded[0], PW = g.padded[1];
    const std::size_t OH = g.out[0], OW = g.out[1];
    const std::size_t KH = g.k[0], KW = g.k[1];
    const std::size_t sy = g.stride[0], sx = g.stride[1];
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      double* gp = gpad.data() + ci * PH * PW;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* goc = gout.data() + co * OH * OW;
        const double* kc = kernels.data() + (co * g.cin + ci) * KH * KW;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double w = kc[ky * KW + kx];
            if (w == 0.0) continue;
            for (std::size_t y = 0; y < OH; ++y) {
              double* dst = gp + (y * sy + ky) * PW + kx;
              const double* go = goc + y * OW;
              if (sx == 1) {
                for (std::size_t x = 0; x < OW; ++x) dst[x] += w * go[x];
              } else {
                for (std::size_t x = 0; x < OW; ++x) dst[x * sx] += w * go[x];
              }
            }
          }
        }
      }
    }
  } else {
    const std::size_t PD = g.padded[0], PH = g.padded[1], PW = g.padded[2];
    const std::size_t OD = g.out[0], OH = g.out[1], OW = g.out[2];
    const std::size_t KD = g.k[0], KH = g.k[1], KW = g.k[2];
    const std::size_t sz = g.stride[0], sy = g.stride[1], sx = g.stride[2];
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      double* gp = gpad.data() + ci * PD * PH * PW;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* goc = gout.data() + co * OD * OH * OW;
        const double* kc = kernels.data() + (co * g.cin + ci) * KD * KH * KW;
        for (std::size_t kz = 0; kz < KD; ++kz) {
          for (std::size_t ky = 0; ky < KH; ++ky) {
            for (std::size_t kx = 0; kx < KW; ++kx) {
              const double w = kc[(kz * KH + ky) * KW + kx];
              if (w == 0.0) continue;
              for (std::size_t z = 0; z < OD; ++z) {
                for (std::size_t y = 0; y < OH; ++y) {
                  double* dst = gp + ((z * sz + kz) * PH + y * sy + ky) * PW + kx;
                  const double* go = goc + (z * OH + y) * OW;
                  for (std::size_t x = 0; x < OW; ++x) dst[x * sx] += w * go[x];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var Tape::conv_nd(Var input, Var kernels, const std::vector<std::size_t>& stride,
                  Padding padding) {
  const Tensor& x = value(input);
  const Tensor& k = value(kernels);
  const ConvGeom g = make_geom(x, k, stride, padding);

  const bool needs_pad = g.pad[0] || g.pad[1] || g.pad[2];
  Shape os{g.cout};
  for (std::size_t ax = 0; ax < g.rank; ++ax) os.push_back(g.out[ax]);
  Tensor out(os);
  if (needs_pad) {
    conv_forward(make_padded(x, g), k, out, g);
  } else {
    conv_forward(x, k, out, g);
  }

  bool rg = requires_grad(input) || requires_grad(kernels);
  auto xi = input.id, ki = kernels.id;
  return push(std::move(out), rg, "conv_nd", [xi, ki, g, needs_pad](Tape& t, const Node& self) {
    const Tensor& g_out = self.grad;
    const Tensor& x = t.nodes_[xi].value;
    const Tensor& k = t.nodes_[ki].value;
    if (t.nodes_[ki].requires_grad) {
      // Padding is recomputed rather than saved; it is cheap next to the
      // convolution itself.
      if (needs_pad) {
        conv_backward_kernels(make_padded(x, g), g_out, t.grad_buf(ki), g);
      } else {
        conv_backward_kernels(x, g_out, t.grad_buf(ki), g);
      }
    }
    if (t.nodes_[xi].requires_grad) {
      if (needs_pad) {
        Shape ps{g.cin};
        for (std::size_t ax = 0; ax < g.rank; ++ax) ps.push_back(g.padded[ax]);
        Tensor gpad(ps);
        conv_backward_input(g_out, k, gpad, g);
        fold_padded(gpad, t.grad_buf(xi), g);
      } else {
        conv_backward_input(g_out, k, t.grad_buf(xi), g);
      }
    }
  });
}

}  // namespace lip
