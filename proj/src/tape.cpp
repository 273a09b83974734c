#include "lip/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <utility>

namespace lip {

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw ValueError("tape: invalid node handle");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw ValueError("tape: invalid node handle");
  return nodes_[v.id];
}

Var Tape::push(Tensor value, bool requires_grad, const char* op,
               std::function<void(Tape&, const Node&)> backward_fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.op = op;
  if (requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad_live) return n.grad;
  return Tensor(n.value.shape());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, "leaf", nullptr);
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ValueError("backward: seed node must be scalar, got shape " +
                     shape_to_string(ln.value.shape()));
  }
  for (Node& n : nodes_) {
    n.grad = Tensor();
    n.grad_live = false;
  }
  if (!ln.requires_grad) return;  // no differentiable leaf feeds the loss
  grad_buf(loss.id)[0] = 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.grad_live || !n.backward_fn) continue;
    n.backward_fn(*this, n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise primitives

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Tensor out = value(a) + value(b);
  bool rg = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return push(std::move(out), rg, "add", [ai, bi](Tape& t, const Node& self) {
    if (t.nodes_[ai].requires_grad) t.grad_buf(ai).add_scaled(self.grad, 1.0);
    if (t.nodes_[bi].requires_grad) t.grad_buf(bi).add_scaled(self.grad, 1.0);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Tensor out = value(a) - value(b);
  bool rg = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return push(std::move(out), rg, "sub", [ai, bi](Tape& t, const Node& self) {
    if (t.nodes_[ai].requires_grad) t.grad_buf(ai).add_scaled(self.grad, 1.0);
    if (t.nodes_[bi].requires_grad) t.grad_buf(bi).add_scaled(self.grad, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  return push(std::move(out), rg, "mul", [ai, bi](Tape& t, const Node& self) {
    const Tensor& g = self.grad;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      const Tensor& bv = t.nodes_[bi].value;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      const Tensor& av = t.nodes_[ai].value;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var Tape::scalar_mul(Var a, double s) {
  Tensor out = value(a) * s;
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "scalar_mul", [ai, s](Tape& t, const Node& self) {
    t.grad_buf(ai).add_scaled(self.grad, s);
  });
}

Var Tape::abs(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(av[i]);
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "abs", [ai](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0));
    }
  });
}

Var Tape::square(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "square", [ai](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * 2.0 * av[i];
  });
}

Var Tape::relu(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "relu", [ai](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const Tensor& av = t.nodes_[ai].value;
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var Tape::tanh(Var a) {
  const Tensor& av = value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "tanh", [ai](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const Tensor& y = self.value;
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

// ---------------------------------------------------------------------------
// Structural primitives

Var Tape::reshape(Var a, Shape shape) {
  Tensor out = value(a).reshaped(shape);
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "reshape", [ai](Tape& t, const Node& self) {
    Tensor g = self.grad.reshaped(t.nodes_[ai].value.shape());
    t.grad_buf(ai).add_scaled(g, 1.0);
  });
}

Var Tape::concat(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != bv.rank() || av.rank() == 0) {
    throw ShapeError("concat: rank mismatch " + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  }
  for (std::size_t ax = 1; ax < av.rank(); ++ax) {
    if (av.extent(ax) != bv.extent(ax)) {
      throw ShapeError("concat: trailing extents differ, " + shape_to_string(av.shape()) +
                       " vs " + shape_to_string(bv.shape()));
    }
  }
  Shape os = av.shape();
  os[0] += bv.extent(0);
  Tensor out(os);
  std::copy(av.data(), av.data() + av.size(), out.data());
  std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
  bool rg = requires_grad(a) || requires_grad(b);
  auto ai = a.id, bi = b.id;
  std::size_t na = av.size();
  return push(std::move(out), rg, "concat", [ai, bi, na](Tape& t, const Node& self) {
    const Tensor& g = self.grad;
    if (t.nodes_[ai].requires_grad) {
      Tensor& ga = t.grad_buf(ai);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.nodes_[bi].requires_grad) {
      Tensor& gb = t.grad_buf(bi);
      for (std::size_t i = 0; i < g.size() - na; ++i) gb[i] += g[na + i];
    }
  });
}

Var Tape::upsample_nearest(Var a, std::size_t factor) {
  const std::size_t r = value(a).rank();
  if (r == 0) throw ShapeError("upsample_nearest: expected [C, spatial...]");
  return upsample_nearest(a, std::vector<std::size_t>(r - 1, factor));
}

Var Tape::upsample_nearest(Var a, std::vector<std::size_t> factors) {
  const Tensor& av = value(a);
  if (av.rank() != 3 && av.rank() != 4) {
    throw ShapeError("upsample_nearest: expected [C, spatial...] of rank 3 or 4, got " +
                     shape_to_string(av.shape()));
  }
  if (factors.size() != av.rank() - 1) {
    throw ConfigError("upsample_nearest: one factor per spatial axis required");
  }
  for (std::size_t f : factors) {
    if (f == 0) throw ConfigError("upsample_nearest: factors must be positive");
  }
  Shape os = av.shape();
  for (std::size_t ax = 1; ax < os.size(); ++ax) os[ax] *= factors[ax - 1];
  Tensor out(os);
  const std::size_t C = av.extent(0);
  const std::size_t spatial = av.size() / C;
  // Treat spatial dims generically through coordinate odometers.
  std::vector<std::size_t> in_dims(av.shape().begin() + 1, av.shape().end());
  std::vector<std::size_t> out_dims(os.begin() + 1, os.end());
  const std::size_t out_spatial = out.size() / C;
  const std::size_t r = in_dims.size();
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = av.data() + c * spatial;
    double* dst = out.data() + c * out_spatial;
    std::vector<std::size_t> coord(r, 0);
    for (std::size_t o = 0; o < out_spatial; ++o) {
      std::size_t rem = o, idx = 0;
      for (std::size_t ax = 0; ax < r; ++ax) {
        std::size_t stride = 1;
        for (std::size_t j = ax + 1; j < r; ++j) stride *= out_dims[j];
        coord[ax] = rem / stride;
        rem %= stride;
      }
      for (std::size_t ax = 0; ax < r; ++ax) idx = idx * in_dims[ax] + coord[ax] / factors[ax];
      dst[o] = src[idx];
    }
  }
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "upsample_nearest",
              [ai, factors, in_dims, out_dims, C, spatial](Tape& t, const Node& self) {
                Tensor& ga = t.grad_buf(ai);
                const Tensor& g = self.grad;
                const std::size_t out_spatial = g.size() / C;
                const std::size_t r = in_dims.size();
                for (std::size_t c = 0; c < C; ++c) {
                  const double* gsrc = g.data() + c * out_spatial;
                  double* gdst = ga.data() + c * spatial;
                  for (std::size_t o = 0; o < out_spatial; ++o) {
                    std::size_t rem = o, idx = 0;
                    for (std::size_t ax = 0; ax < r; ++ax) {
                      std::size_t stride = 1;
                      for (std::size_t j = ax + 1; j < r; ++j) stride *= out_dims[j];
                      std::size_t cc = rem / stride;
                      rem %= stride;
                      idx = idx * in_dims[ax] + cc / factors[ax];
                    }
                    gdst[idx] += gsrc[o];
                  }
                }
              });
}

Var Tape::reduce(Var a, ReduceOp op, std::vector<std::size_t> axes) {
  const Tensor& av = value(a);
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes) {
    if (ax >= av.rank()) throw ShapeError("reduce: axis out of range");
  }
  std::vector<bool> reduced(av.rank(), false);
  for (std::size_t ax : axes) reduced[ax] = true;
  Shape os;
  std::size_t count = 1;
  for (std::size_t ax = 0; ax < av.rank(); ++ax) {
    if (reduced[ax]) {
      count *= av.extent(ax);
    } else {
      os.push_back(av.extent(ax));
    }
  }
  // Per-axis contribution of an input coordinate to the output linear index
  // (zero for reduced axes).
  std::vector<std::size_t> out_stride(av.rank(), 0);
  {
    std::size_t s = 1;
    for (std::size_t ax = av.rank(); ax-- > 0;) {
      if (!reduced[ax]) {
        out_stride[ax] = s;
        s *= av.extent(ax);
      }
    }
  }
  Tensor out(os);
  const std::size_t r = av.rank();
  std::vector<std::size_t> coord(r, 0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    std::size_t oi = 0;
    for (std::size_t ax = 0; ax < r; ++ax) oi += coord[ax] * out_stride[ax];
    out[oi] += av[i];
    for (std::size_t ax = r; ax-- > 0;) {
      if (++coord[ax] < av.extent(ax)) break;
      coord[ax] = 0;
    }
  }
  if (op == ReduceOp::kMean) out.scale(1.0 / double(count));
  auto ai = a.id;
  double w = op == ReduceOp::kMean ? 1.0 / double(count) : 1.0;
  return push(std::move(out), requires_grad(a), "reduce",
              [ai, out_stride, w](Tape& t, const Node& self) {
                Tensor& ga = t.grad_buf(ai);
                const Tensor& g = self.grad;
                const Tensor& av = t.nodes_[ai].value;
                const std::size_t r = av.rank();
                std::vector<std::size_t> coord(r, 0);
                for (std::size_t i = 0; i < av.size(); ++i) {
                  std::size_t oi = 0;
                  for (std::size_t ax = 0; ax < r; ++ax) oi += coord[ax] * out_stride[ax];
                  ga[i] += w * g[oi];
                  for (std::size_t ax = r; ax-- > 0;) {
                    if (++coord[ax] < av.extent(ax)) break;
                    coord[ax] = 0;
                  }
                }
              });
}

Var Tape::reduce_sum(Var a) {
  double s = value(a).sum();
  auto ai = a.id;
  return push(Tensor::scalar(s), requires_grad(a), "reduce_sum", [ai](Tape& t, const Node& self) {
    t.grad_buf(ai).add_scaled(Tensor(t.nodes_[ai].value.shape(), self.grad[0]), 1.0);
  });
}

Var Tape::reduce_mean(Var a) {
  const Tensor& av = value(a);
  double m = av.mean();
  double w = 1.0 / double(av.size());
  auto ai = a.id;
  return push(Tensor::scalar(m), requires_grad(a), "reduce_mean", [ai, w](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const double s = self.grad[0] * w;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
  });
}

Var Tape::spatial_gradient(Var a, std::size_t axis) {
  const Tensor& av = value(a);
  if (axis >= av.rank()) throw ShapeError("spatial_gradient: axis out of range");
  if (av.extent(axis) < 2) {
    throw ShapeError("spatial_gradient: extent along axis must be >= 2, got shape " +
                     shape_to_string(av.shape()));
  }
  Shape os = av.shape();
  os[axis] -= 1;
  Tensor out(os);
  const std::size_t r = av.rank();
  std::size_t axis_stride = 1;
  for (std::size_t ax = axis + 1; ax < r; ++ax) axis_stride *= av.extent(ax);
  // Iterate output coordinates; input index shares the coordinate layout.
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t ax = r - 1; ax-- > 0;) in_stride[ax] = in_stride[ax + 1] * av.extent(ax + 1);
  std::vector<std::size_t> coord(r, 0);
  for (std::size_t o = 0; o < out.size(); ++o) {
    std::size_t ii = 0;
    for (std::size_t ax = 0; ax < r; ++ax) ii += coord[ax] * in_stride[ax];
    out[o] = av[ii + axis_stride] - av[ii];
    for (std::size_t ax = r; ax-- > 0;) {
      if (++coord[ax] < os[ax]) break;
      coord[ax] = 0;
    }
  }
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), "spatial_gradient",
              [ai, in_stride, axis_stride](Tape& t, const Node& self) {
                Tensor& ga = t.grad_buf(ai);
                const Tensor& g = self.grad;
                const Shape& os = self.value.shape();
                const std::size_t r = os.size();
                std::vector<std::size_t> coord(r, 0);
                for (std::size_t o = 0; o < g.size(); ++o) {
                  std::size_t ii = 0;
                  for (std::size_t ax = 0; ax < r; ++ax) ii += coord[ax] * in_stride[ax];
                  ga[ii + axis_stride] += g[o];
                  ga[ii] -= g[o];
                  for (std::size_t ax = r; ax-- > 0;) {
                    if (++coord[ax] < os[ax]) break;
                    coord[ax] = 0;
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Batch normalization and dropout

Var Tape::batch_norm(Var input, Var scale, Var shift, Mode mode, Tensor* running_mean,
                     Tensor* running_var, const BatchNormOpts& opts) {
  const Tensor& x = value(input);
  if (x.rank() < 2) throw ShapeError("batch_norm: input must be [C, spatial...]");
  const std::size_t C = x.extent(0);
  const std::size_t m = x.size() / C;
  const Tensor& gamma = value(scale);
  const Tensor& beta = value(shift);
  if (gamma.size() != C || beta.size() != C) {
    throw ShapeError("batch_norm: scale/shift must have one entry per channel");
  }

  if (mode == Mode::kTrain) {
    if (m < 2) throw ShapeError("batch_norm: need >= 2 elements per channel in train mode");
    std::vector<double> mean(C), inv(C), var(C);
    Tensor xhat(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = x.data() + c * m;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += xc[i];
      mu /= double(m);
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double d = xc[i] - mu;
        v += d * d;
      }
      v /= double(m);
      mean[c] = mu;
      var[c] = v;
      inv[c] = 1.0 / std::sqrt(v + opts.eps);
      double* hc = xhat.data() + c * m;
      for (std::size_t i = 0; i < m; ++i) hc[i] = (xc[i] - mu) * inv[c];
    }
    if (running_mean && running_var) {
      if (running_mean->size() != C || running_var->size() != C) {
        throw ShapeError("batch_norm: running stats must have one entry per channel");
      }
      for (std::size_t c = 0; c < C; ++c) {
        (*running_mean)[c] = opts.momentum * (*running_mean)[c] + (1.0 - opts.momentum) * mean[c];
        (*running_var)[c] = opts.momentum * (*running_var)[c] + (1.0 - opts.momentum) * var[c];
      }
    }
    Tensor out(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const double* hc = xhat.data() + c * m;
      double* oc = out.data() + c * m;
      for (std::size_t i = 0; i < m; ++i) oc[i] = gamma[c] * hc[i] + beta[c];
    }
    bool rg = requires_grad(input) || requires_grad(scale) || requires_grad(shift);
    auto xi = input.id, gi = scale.id, bi = shift.id;
    auto xhat_saved = std::make_shared<Tensor>(std::move(xhat));
    return push(std::move(out), rg, "batch_norm",
                [xi, gi, bi, xhat_saved, inv, C, m](Tape& t, const Node& self) {
                  const Tensor& g = self.grad;
                  const Tensor& gamma = t.nodes_[gi].value;
                  const Tensor& xhat = *xhat_saved;
                  for (std::size_t c = 0; c < C; ++c) {
                    const double* gc = g.data() + c * m;
                    const double* hc = xhat.data() + c * m;
                    double sum_g = 0.0, sum_gh = 0.0;
                    for (std::size_t i = 0; i < m; ++i) {
                      sum_g += gc[i];
                      sum_gh += gc[i] * hc[i];
                    }
                    if (t.nodes_[gi].requires_grad) t.grad_buf(gi)[c] += sum_gh;
                    if (t.nodes_[bi].requires_grad) t.grad_buf(bi)[c] += sum_g;
                    if (t.nodes_[xi].requires_grad) {
                      double* gx = t.grad_buf(xi).data() + c * m;
                      const double k = gamma[c] * inv[c] / double(m);
                      for (std::size_t i = 0; i < m; ++i) {
                        gx[i] += k * (double(m) * gc[i] - sum_g - hc[i] * sum_gh);
                      }
                    }
                  }
                });
  }

  // Eval mode: affine transform with the running statistics.
  if (!running_mean || !running_var) {
    throw ConfigError("batch_norm: eval mode requires running statistics");
  }
  if (running_mean->size() != C || running_var->size() != C) {
    throw ShapeError("batch_norm: running stats must have one entry per channel");
  }
  std::vector<double> rinv(C), rmean(C);
  for (std::size_t c = 0; c < C; ++c) {
    rinv[c] = 1.0 / std::sqrt((*running_var)[c] + opts.eps);
    rmean[c] = (*running_mean)[c];
  }
  Tensor out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double* xc = x.data() + c * m;
    double* oc = out.data() + c * m;
    for (std::size_t i = 0; i < m; ++i) oc[i] = gamma[c] * (xc[i] - rmean[c]) * rinv[c] + beta[c];
  }
  bool rg = requires_grad(input) || requires_grad(scale) || requires_grad(shift);
  auto xi = input.id, gi = scale.id, bi = shift.id;
  return push(std::move(out), rg, "batch_norm_eval",
              [xi, gi, bi, rinv, rmean, C, m](Tape& t, const Node& self) {
                const Tensor& g = self.grad;
                const Tensor& gamma = t.nodes_[gi].value;
                const Tensor& x = t.nodes_[xi].value;
                for (std::size_t c = 0; c < C; ++c) {
                  const double* gc = g.data() + c * m;
                  const double* xc = x.data() + c * m;
                  double sum_g = 0.0, sum_gh = 0.0;
                  for (std::size_t i = 0; i < m; ++i) {
                    sum_g += gc[i];
                    sum_gh += gc[i] * (xc[i] - rmean[c]) * rinv[c];
                  }
                  if (t.nodes_[gi].requires_grad) t.grad_buf(gi)[c] += sum_gh;
                  if (t.nodes_[bi].requires_grad) t.grad_buf(bi)[c] += sum_g;
                  if (t.nodes_[xi].requires_grad) {
                    double* gx = t.grad_buf(xi).data() + c * m;
                    const double k = gamma[c] * rinv[c];
                    for (std::size_t i = 0; i < m; ++i) gx[i] += k * gc[i];
                  }
                }
              });
}

Var Tape::dropout(Var a, double rate, Mode mode, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  const Tensor& x = value(a);
  auto ai = a.id;
  if (mode == Mode::kEval) {
    Tensor out = x;
    return push(std::move(out), requires_grad(a), "dropout_eval", [ai](Tape& t, const Node& self) {
      t.grad_buf(ai).add_scaled(self.grad, 1.0);
    });
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mi = uni(rng) < rate ? 0.0 : keep_scale;
    (*mask)[i] = mi;
    out[i] = x[i] * mi;
  }
  return push(std::move(out), requires_grad(a), "dropout", [ai, mask](Tape& t, const Node& self) {
    Tensor& ga = t.grad_buf(ai);
    const Tensor& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

Var Tape::linear_unary(Var a, const char* op, std::function<Tensor(const Tensor&)> forward,
                       std::function<Tensor(const Tensor&)> adjoint) {
  Tensor out = forward(value(a));
  auto ai = a.id;
  return push(std::move(out), requires_grad(a), op,
              [ai, adjoint = std::move(adjoint)](Tape& t, const Node& self) {
                t.grad_buf(ai).add_scaled(adjoint(self.grad), 1.0);
              });
}

}  // namespace lip
