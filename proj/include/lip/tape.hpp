#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lip/tensor.hpp"

namespace lip {

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class Mode { kTrain, kEval };
enum class Padding { kSymmetric, kNone };
enum class ReduceOp { kSum, kMean };

struct BatchNormOpts {
  double eps = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

// Reverse-mode tape over Tensor values. Nodes are appended in evaluation
// order, so the record list is topologically sorted by construction. A tape
// is confined to one thread; independent tapes may run concurrently.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise primitives. Binary ops require identical shapes.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scalar_mul(Var a, double s);
  Var abs(Var a);
  Var square(Var a);
  Var relu(Var a);
  Var tanh(Var a);

  // Structural primitives.
  Var reshape(Var a, Shape shape);
  Var concat(Var a, Var b);                          // along axis 0
  Var upsample_nearest(Var a, std::size_t factor);   // spatial axes of [C, spatial...]
  Var upsample_nearest(Var a, std::vector<std::size_t> factors);  // per spatial axis
  Var reduce(Var a, ReduceOp op, std::vector<std::size_t> axes);
  Var reduce_sum(Var a);   // over all axes, scalar result
  Var reduce_mean(Var a);
  Var spatial_gradient(Var a, std::size_t axis);     // forward difference, extent - 1

  // input [C_in, spatial...], kernels [C_out, C_in, k...]; spatial rank 2 or 3.
  Var conv_nd(Var input, Var kernels, const std::vector<std::size_t>& stride, Padding padding);

  // Per-channel normalization of [C, spatial...]. Train mode normalizes by the
  // batch statistics of the input and, when running stats are supplied,
  // updates them in place with the momentum rule. Eval mode normalizes by the
  // supplied running stats and is an affine map of the input.
  Var batch_norm(Var input, Var scale, Var shift, Mode mode, Tensor* running_mean,
                 Tensor* running_var, const BatchNormOpts& opts = {});

  // Inverted dropout: train mode zeroes with probability `rate` and scales
  // survivors by 1/(1-rate); eval mode is the identity. Deterministic per seed.
  Var dropout(Var a, double rate, Mode mode, std::uint64_t seed);

  // Extension point for linear operators with a known adjoint (the projector
  // registers its rotation and projection through this).
  Var linear_unary(Var a, const char* op, std::function<Tensor(const Tensor&)> forward,
                   std::function<Tensor(const Tensor&)> adjoint);

  // Reverse sweep from a scalar loss node. Populates gradients for every
  // requires_grad node reachable from it; unreachable leaves read as zeros.
  void backward(Var loss);

  const Tensor& value(Var v) const { return node(v).value; }
  Tensor grad(Var v) const;  // zeros if never reached by backward
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    const char* op = "leaf";
    std::function<void(Tape&, const Node&)> backward_fn;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(Tensor value, bool requires_grad, const char* op,
           std::function<void(Tape&, const Node&)> backward_fn);
  // Gradient accumulation buffer for node `id`, allocated as zeros on demand.
  Tensor& grad_buf(std::uint32_t id);

  std::vector<Node> nodes_;
};

}  // namespace lip
