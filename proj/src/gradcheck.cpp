#include "lip/gradcheck.hpp"

#include <cmath>
#include <random>

#include "lip/losses.hpp"
#include "lip/network.hpp"
#include "lip/projector.hpp"
#include "lip/rng.hpp"

namespace lip {

namespace {

double scalar_eval(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
  Tape t;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& x : inputs) vars.push_back(t.constant(x));
  const Tensor& out = t.value(build(t, vars));
  if (out.size() != 1) throw ValueError("gradcheck: graph must produce a scalar");
  return out[0];
}

// |a - f| / max(denom_floor, |a|, |f|). With denom_floor = 1e-3, an error
// bound of 1e-5 on this ratio is exactly "relative error 1e-5 with absolute
// floor 1e-8": gradients below 1e-3 are held to the absolute bound.
double rel_error(double a, double f, double denom_floor) {
  const double scale = std::max(denom_floor, std::max(std::fabs(a), std::fabs(f)));
  return std::fabs(a - f) / scale;
}

}  // namespace

double gradcheck_max_rel(const GraphBuilder& build, const std::vector<Tensor>& inputs,
                         const FdOptions& opts) {
  // Reverse-mode gradients.
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& x : inputs) vars.push_back(t.leaf(x, true));
    Var loss = build(t, vars);
    t.backward(loss);
    for (Var v : vars) analytic.push_back(t.grad(v));
  }
  if (opts.corrupt && !analytic.empty() && analytic[0].size() > 0) {
    analytic[0][0] += 1e-2;
  }

  double max_err = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const std::size_t n = inputs[which].size();
    const std::size_t stride =
        n > opts.max_elements_per_input ? n / opts.max_elements_per_input : 1;
    for (std::size_t j = 0; j < n; j += stride) {
      const double x0 = inputs[which][j];
      const double h = opts.step_scale * std::max(1.0, std::fabs(x0));
      probe[which][j] = x0 + h;
      const double fp = scalar_eval(build, probe);
      probe[which][j] = x0 - h;
      const double fm = scalar_eval(build, probe);
      probe[which][j] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, rel_error(analytic[which][j], fd, opts.floor));
    }
  }
  return max_err;
}

namespace {

// Random tensor with entries bounded away from zero (for abs/relu kinks).
Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng, double lo = 0.25,
                      double hi = 1.25) {
  Tensor t(shape);
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (sign(rng) ? 1.0 : -1.0) * mag(rng);
  return t;
}

// Pair (x, y) with every forward difference and every elementwise difference
// bounded away from zero, so the |.| kinks in the L1 and GDL terms stay clear
// of the finite-difference step.
std::pair<Tensor, Tensor> kink_safe_pair(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> step(0.3, 1.0);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    a[i] = a[i - 1] + step(rng);
    b[i] = b[i - 1] + step(rng);
    c[i] = c[i - 1] + step(rng);
    d[i] = d[i - 1] + step(rng);
  }
  Tensor x(Shape{n, n}), y(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      x.at(i, j) = a[i] + b[j] + jitter(rng);
      y.at(i, j) = x.at(i, j) + 0.6 + c[i] + d[j] + jitter(rng);
    }
  }
  return {x, y};
}

struct SuiteRunner {
  GradCheckOptions options;
  std::mt19937_64 rng;
  std::vector<GradCheckCase> cases;
  bool first = true;

  explicit SuiteRunner(const GradCheckOptions& o) : options(o), rng(mix_seed(o.seed, 0x6C)) {}

  // Scalar readout with distinct weights so every output element contributes
  // a different gradient.
  Var readout(Tape& t, Var z, const Tensor& weights) {
    return t.reduce_sum(t.mul(z, t.constant(weights)));
  }

  Tensor weights_for(const Shape& shape) {
    return Tensor::random_normal(shape, rng, 0.0, 1.0);
  }

  void run_case(const std::string& name, const GraphBuilder& build,
                const std::vector<Tensor>& inputs, double tol,
                std::size_t max_elements = SIZE_MAX) {
    FdOptions fd;
    fd.max_elements_per_input = max_elements;
    fd.corrupt = options.corrupt && first;
    first = false;
    GradCheckCase c;
    c.name = name;
    c.tol = tol;
    c.max_rel_err = gradcheck_max_rel(build, inputs, fd);
    c.pass = c.max_rel_err <= tol;
    cases.push_back(c);
  }
};

}  // namespace

std::vector<GradCheckCase> run_gradcheck(const GradCheckOptions& options) {
  SuiteRunner s(options);
  std::size_t n = std::max<std::size_t>(4, options.size);
  n += n % 2;  // stride-2 cases need even extents
  const double tol = options.tol;
  const Shape sq{n, n};

  // Elementwise primitives under a weighted-sum readout.
  {
    Tensor w = s.weights_for(sq);
    s.run_case("add", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.add(v[0], v[1]), w);
    }, {Tensor::random_normal(sq, s.rng), Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("sub", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.sub(v[0], v[1]), w);
    }, {Tensor::random_normal(sq, s.rng), Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("mul", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.mul(v[0], v[1]), w);
    }, {Tensor::random_normal(sq, s.rng), Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("scalar_mul", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.scalar_mul(v[0], -2.75), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("abs", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.abs(v[0]), w);
    }, {away_from_zero(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("square", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.square(v[0]), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("relu", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.relu(v[0]), w);
    }, {away_from_zero(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    s.run_case("tanh", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.tanh(v[0]), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }

  // Structure.
  {
    Tensor w = s.weights_for(Shape{2 * n, n});
    s.run_case("concat", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.concat(v[0], v[1]), w);
    }, {Tensor::random_normal(sq, s.rng), Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{2, 2 * n, 2 * n});
    s.run_case("upsample_nearest", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.upsample_nearest(v[0], 2), w);
    }, {Tensor::random_normal(Shape{2, n, n}, s.rng)}, tol);
  }
  s.run_case("reduce_sum", [](Tape& t, const std::vector<Var>& v) {
    return t.reduce_sum(t.square(v[0]));
  }, {Tensor::random_normal(sq, s.rng)}, tol);
  s.run_case("reduce_mean", [](Tape& t, const std::vector<Var>& v) {
    return t.reduce_mean(t.square(v[0]));
  }, {Tensor::random_normal(sq, s.rng)}, tol);
  {
    Tensor w = s.weights_for(Shape{n});
    s.run_case("reduce_axis", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.reduce(v[0], ReduceOp::kMean, {0}), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{n - 1, n});
    s.run_case("spatial_gradient", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.spatial_gradient(v[0], 0), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }

  // Convolutions; both the image and the kernels are differentiated.
  {
    Tensor w = s.weights_for(Shape{3, n, n});
    s.run_case("conv2d_symmetric", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.conv_nd(v[0], v[1], {1, 1}, Padding::kSymmetric), w);
    }, {Tensor::random_normal(Shape{2, n, n}, s.rng),
        Tensor::random_normal(Shape{3, 2, 3, 3}, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{3, n / 2, n / 2});
    s.run_case("conv2d_stride2", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.conv_nd(v[0], v[1], {2, 2}, Padding::kNone), w);
    }, {Tensor::random_normal(Shape{2, n, n}, s.rng),
        Tensor::random_normal(Shape{3, 2, 2, 2}, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{2, 4, 4, 4});
    s.run_case("conv3d_symmetric", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.conv_nd(v[0], v[1], {1, 1, 1}, Padding::kSymmetric), w);
    }, {Tensor::random_normal(Shape{2, 4, 4, 4}, s.rng),
        Tensor::random_normal(Shape{2, 2, 3, 3, 3}, s.rng)}, tol);
  }

  // Normalization and dropout.
  {
    Tensor w = s.weights_for(Shape{2, n, n});
    Tensor rm = Tensor::zeros(Shape{2});
    Tensor rv = Tensor::ones(Shape{2});
    s.run_case("batch_norm_train", [&, w, rm, rv](Tape& t, const std::vector<Var>& v) mutable {
      return s.readout(t, t.batch_norm(v[0], v[1], v[2], Mode::kTrain, &rm, &rv), w);
    }, {Tensor::random_normal(Shape{2, n, n}, s.rng),
        Tensor::random_uniform(Shape{2}, s.rng, 0.5, 1.5),
        Tensor::random_normal(Shape{2}, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{2, n, n});
    Tensor rm = Tensor::random_normal(Shape{2}, s.rng, 0.0, 0.3);
    Tensor rv = Tensor::random_uniform(Shape{2}, s.rng, 0.5, 1.5);
    s.run_case("batch_norm_eval", [&, w, rm, rv](Tape& t, const std::vector<Var>& v) mutable {
      return s.readout(t, t.batch_norm(v[0], v[1], v[2], Mode::kEval, &rm, &rv), w);
    }, {Tensor::random_normal(Shape{2, n, n}, s.rng),
        Tensor::random_uniform(Shape{2}, s.rng, 0.5, 1.5),
        Tensor::random_normal(Shape{2}, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(sq);
    const std::uint64_t mask_seed = mix_seed(options.seed, 0xD40);
    s.run_case("dropout_train", [&, w, mask_seed](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, t.dropout(v[0], 0.3, Mode::kTrain, mask_seed), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }

  // Projector primitives at a non-lattice angle.
  {
    Tensor w = s.weights_for(sq);
    s.run_case("rotate", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, rotate_op(t, v[0], 33.7), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }
  {
    Tensor w = s.weights_for(Shape{n});
    s.run_case("project", [&, w](Tape& t, const std::vector<Var>& v) {
      return s.readout(t, project_op(t, v[0], 61.3, 0.4), w);
    }, {Tensor::random_normal(sq, s.rng)}, tol);
  }

  // Losses on an 8x8 kink-safe pair.
  {
    const std::size_t m = 8;
    auto [x, y] = kink_safe_pair(m, s.rng);
    const AngleSet angles = AngleSet::uniform(4);
    s.run_case("l1_loss", [](Tape& t, const std::vector<Var>& v) {
      return l1_loss(t, v[0], v[1]);
    }, {x, y}, tol);
    s.run_case("gdl_loss", [](Tape& t, const std::vector<Var>& v) {
      return gdl_loss(t, v[0], v[1]);
    }, {x, y}, tol);
    s.run_case("lip_loss", [&angles](Tape& t, const std::vector<Var>& v) {
      return lip_loss(t, v[0], v[1], angles);
    }, {x, y}, tol);
    s.run_case("total_loss", [&angles](Tape& t, const std::vector<Var>& v) {
      return total_loss(t, v[0], v[1], LossWeights{1.0, 0.02}, angles);
    }, {x, y}, tol);
  }

  // Tiny network: levels=2, base 4, 16x16 input; a sampled subset of
  // parameters against finite differences of the total training loss.
  {
    UNetConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 4;
    cfg.dropout_rate = 0.15;
    UNetParams params = init_params(cfg, mix_seed(options.seed, 0x0E7));
    const std::size_t extent = 16;
    Tensor input = Tensor::random_uniform(Shape{2, extent, extent}, s.rng, 0.0, 1.0);
    auto [truth, unused] = kink_safe_pair(extent, s.rng);
    (void)unused;
    truth.scale(0.05);  // keep prediction-truth residuals in a natural range
    const AngleSet angles = AngleSet::uniform(4);
    const std::uint64_t drop_seed = mix_seed(options.seed, 0xD41);

    auto loss_value = [&](UNetParams& p) {
      Tape t;
      Var in = t.constant(input);
      UNetForward fw = unet_forward(t, p, in, Mode::kTrain, drop_seed);
      Var pred = t.reshape(fw.output, truth.shape());
      Var loss = total_loss(t, pred, t.constant(truth), LossWeights{1.0, 0.02}, angles);
      return t.value(loss)[0];
    };

    // Analytic gradients once.
    std::vector<std::pair<std::string, Tensor>> grads;
    {
      Tape t;
      Var in = t.constant(input);
      UNetForward fw = unet_forward(t, params, in, Mode::kTrain, drop_seed);
      Var pred = t.reshape(fw.output, truth.shape());
      Var loss = total_loss(t, pred, t.constant(truth), LossWeights{1.0, 0.02}, angles);
      t.backward(loss);
      for (const auto& [name, var] : fw.param_vars) grads.emplace_back(name, t.grad(var));
    }

    // 20 probe positions spread over the parameter list.
    std::vector<Tensor*> tensors;
    for_each_parameter(params, [&](const std::string&, Tensor& t) { tensors.push_back(&t); });
    std::size_t total = 0;
    for (Tensor* t : tensors) total += t->size();
    const std::size_t probes = 20;
    double max_err = 0.0;
    for (std::size_t k = 0; k < probes; ++k) {
      std::size_t flat = (k * total) / probes;
      std::size_t ti = 0;
      while (flat >= tensors[ti]->size()) {
        flat -= tensors[ti]->size();
        ++ti;
      }
      Tensor& target = *tensors[ti];
      const double x0 = target[flat];
      const double h = 1e-6 * std::max(1.0, std::fabs(x0));
      target[flat] = x0 + h;
      const double fp = loss_value(params);
      target[flat] = x0 - h;
      const double fm = loss_value(params);
      target[flat] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, rel_error(grads[ti].second[flat], fd, 1e-3));
    }
    GradCheckCase c;
    c.name = "unet_total_loss";
    c.tol = options.net_tol;
    c.max_rel_err = max_err;
    c.pass = max_err <= c.tol;
    s.cases.push_back(c);
  }

  // Batched variant: two stacked 8x8 items through the depth-axis forward.
  {
    UNetConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 4;
    cfg.dropout_rate = 0.15;
    UNetParams params = init_params(cfg, mix_seed(options.seed, 0x0E8));
    Tensor input = Tensor::random_uniform(Shape{2, 2, 8, 8}, s.rng, 0.0, 1.0);
    Tensor truth = Tensor::random_uniform(Shape{2, 8, 8}, s.rng, 0.0, 0.5);
    const AngleSet angles = AngleSet::uniform(4);
    const std::uint64_t drop_seed = mix_seed(options.seed, 0xD42);

    std::vector<std::pair<std::string, Tensor>> grads;
    {
      Tape t;
      UNetForward fw = unet_forward_batched(t, params, t.constant(input), Mode::kTrain, drop_seed);
      Var pred = t.reshape(fw.output, truth.shape());
      Var l1 = l1_loss(t, pred, t.constant(truth));
      Var gdl = gdl_loss(t, pred, t.constant(truth), {1, 2});
      Var lip = lip_loss(t, pred, t.constant(truth), angles);
      Var total = t.add(t.add(l1, gdl), t.scalar_mul(lip, 0.02));
      t.backward(total);
      for (const auto& [name, var] : fw.param_vars) grads.emplace_back(name, t.grad(var));
    }
    auto eval_scalar = [&](UNetParams& p) {
      Tape t;
      UNetForward fw = unet_forward_batched(t, p, t.constant(input), Mode::kTrain, drop_seed);
      Var pred = t.reshape(fw.output, truth.shape());
      Var l1 = l1_loss(t, pred, t.constant(truth));
      Var gdl = gdl_loss(t, pred, t.constant(truth), {1, 2});
      Var lip = lip_loss(t, pred, t.constant(truth), angles);
      Var total = t.add(t.add(l1, gdl), t.scalar_mul(lip, 0.02));
      return t.value(total)[0];
    };

    std::vector<Tensor*> tensors;
    for_each_parameter(params, [&](const std::string&, Tensor& t) { tensors.push_back(&t); });
    std::size_t total_n = 0;
    for (Tensor* t : tensors) total_n += t->size();
    const std::size_t probes = 20;
    double max_err = 0.0;
    for (std::size_t k = 0; k < probes; ++k) {
      std::size_t flat = (k * total_n) / probes;
      std::size_t ti = 0;
      while (flat >= tensors[ti]->size()) {
        flat -= tensors[ti]->size();
        ++ti;
      }
      Tensor& target = *tensors[ti];
      const double x0 = target[flat];
      const double h = 1e-6 * std::max(1.0, std::fabs(x0));
      target[flat] = x0 + h;
      const double fp = eval_scalar(params);
      target[flat] = x0 - h;
      const double fm = eval_scalar(params);
      target[flat] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, rel_error(grads[ti].second[flat], fd, 1e-3));
    }
    GradCheckCase c;
    c.name = "unet_batched_total_loss";
    c.tol = options.net_tol;
    c.max_rel_err = max_err;
    c.pass = max_err <= c.tol;
    s.cases.push_back(c);
  }

  return s.cases;
}

bool all_pass(const std::vector<GradCheckCase>& cases) {
  for (const auto& c : cases) {
    if (!c.pass) return false;
  }
  return true;
}

}  // namespace lip
