#include "lip/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "lip/rng.hpp"

namespace lip {

void NormalizationConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("NormalizationConfig: sigma must be positive");
  if (!(mu_scale > 0.0)) throw ConfigError("NormalizationConfig: mu_scale must be positive");
}

NormalizedSample normalize_pair(const SamplePair& pair, const NormalizationConfig& cfg) {
  cfg.validate();
  const Tensor& lam = pair.lambda_input.values;
  const Tensor& mu = pair.mu_input.values;
  const Tensor& truth = pair.mu_truth.values;
  require_same_shape(lam, mu, "normalize_pair");
  require_same_shape(lam, truth, "normalize_pair");
  Shape in_shape{2};
  for (std::size_t e : lam.shape()) in_shape.push_back(e);
  NormalizedSample out;
  out.input = Tensor(in_shape);
  const std::size_t n = lam.size();
  for (std::size_t i = 0; i < n; ++i) out.input[i] = std::tanh(lam[i] / cfg.sigma);
  for (std::size_t i = 0; i < n; ++i) out.input[n + i] = mu[i] / cfg.mu_scale;
  out.truth = Tensor(truth.shape());
  for (std::size_t i = 0; i < n; ++i) out.truth[i] = truth[i] / cfg.mu_scale;
  return out;
}

ImageVolume denormalize(const Tensor& pred, const NormalizationConfig& cfg,
                        double voxel_width_cm) {
  cfg.validate();
  Tensor values = pred;
  if (values.rank() >= 3 && values.extent(0) == 1) {
    Shape squeezed(values.shape().begin() + 1, values.shape().end());
    values = values.reshaped(squeezed);
  }
  values.scale(cfg.mu_scale);
  values.clamp_min(0.0);
  return {std::move(values), voxel_width_cm};
}

void TrainConfig::validate() const {
  if (epochs == 0 || patches_per_epoch == 0 || patch_extent == 0 || batch_size == 0) {
    throw ConfigError("TrainConfig: counts must be positive");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("TrainConfig: learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ConfigError("TrainConfig: lr decay must lie in (0, 1]");
  }
  if (angle_count == 0) throw ConfigError("TrainConfig: angle count must be positive");
  weights.validate();
}

PatchSampler::PatchSampler(const std::vector<NormalizedSample>* samples, std::size_t extent,
                           std::uint64_t seed)
    : samples_(samples), extent_(extent), rng_(seed) {
  if (!samples_ || samples_->empty()) throw ConfigError("PatchSampler: empty sample set");
  for (const auto& s : *samples_) {
    for (std::size_t ax = 1; ax < s.input.rank(); ++ax) {
      if (s.input.extent(ax) < extent_) {
        throw ConfigError("PatchSampler: patch extent " + std::to_string(extent_) +
                          " exceeds volume extent " + std::to_string(s.input.extent(ax)));
      }
    }
  }
}

Patch PatchSampler::next() {
  // Rejection rule: patches whose truth is all air get redrawn, capped at 100.
  for (int attempt = 0; attempt <= 100; ++attempt) {
    const std::size_t vol = std::uniform_int_distribution<std::size_t>(
        0, samples_->size() - 1)(rng_);
    const NormalizedSample& s = (*samples_)[vol];
    const std::size_t rank = s.truth.rank();
    std::vector<std::size_t> corner(rank);
    for (std::size_t ax = 0; ax < rank; ++ax) {
      corner[ax] = std::uniform_int_distribution<std::size_t>(
          0, s.truth.extent(ax) - extent_)(rng_);
    }
    Patch p;
    Shape in_shape{2};
    Shape tr_shape;
    for (std::size_t ax = 0; ax < rank; ++ax) {
      in_shape.push_back(extent_);
      tr_shape.push_back(extent_);
    }
    p.input = Tensor(in_shape);
    p.truth = Tensor(tr_shape);
    if (rank == 2) {
      const std::size_t W = s.truth.extent(1);
      const std::size_t plane = s.truth.size();
      for (std::size_t y = 0; y < extent_; ++y) {
        for (std::size_t x = 0; x < extent_; ++x) {
          const std::size_t src = (corner[0] + y) * W + corner[1] + x;
          p.input[y * extent_ + x] = s.input[src];
          p.input[extent_ * extent_ + y * extent_ + x] = s.input[plane + src];
          p.truth[y * extent_ + x] = s.truth[src];
        }
      }
    } else if (rank == 3) {
      const std::size_t H = s.truth.extent(1), W = s.truth.extent(2);
      const std::size_t plane = s.truth.size();
      const std::size_t e2 = extent_ * extent_;
      for (std::size_t z = 0; z < extent_; ++z) {
        for (std::size_t y = 0; y < extent_; ++y) {
          for (std::size_t x = 0; x < extent_; ++x) {
            const std::size_t src =
                ((corner[0] + z) * H + corner[1] + y) * W + corner[2] + x;
            const std::size_t dst = (z * extent_ + y) * extent_ + x;
            p.input[dst] = s.input[src];
            p.input[extent_ * e2 + dst] = s.input[plane + src];
            p.truth[dst] = s.truth[src];
          }
        }
      }
    } else {
      throw ShapeError("PatchSampler: volumes must be 2D or 3D");
    }
    bool all_air = true;
    for (std::size_t i = 0; i < p.truth.size() && all_air; ++i) {
      if (p.truth[i] != 0.0) all_air = false;
    }
    if (!all_air || attempt == 100) return p;
  }
  throw TrainingFault("PatchSampler: unreachable");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state sizes differ");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingFault("adam_step: non-finite gradient at flat index " + std::to_string(i));
    }
  }
  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grads[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows) {
  os << "step,epoch,l1,gdl,lip,total,lr\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.epoch,
                  r.l1, r.gdl, r.lip, r.total, r.lr);
    os << buf;
  }
}

namespace {

struct FlatParams {
  std::vector<std::string> names;
  std::vector<Tensor*> tensors;
  std::size_t total = 0;
};

FlatParams flatten(UNetParams& p) {
  FlatParams f;
  for_each_parameter(p, [&](const std::string& name, Tensor& t) {
    f.names.push_back(name);
    f.tensors.push_back(&t);
    f.total += t.size();
  });
  return f;
}

}  // namespace

TrainResult train_model(const std::vector<SamplePair>& data, const UNetConfig& net_cfg,
                        const TrainConfig& cfg, const NormalizationConfig& norm_cfg,
                        const std::string& out_dir) {
  cfg.validate();
  net_cfg.validate();
  norm_cfg.validate();
  if (data.empty()) throw ConfigError("train_model: dataset is empty");
  if (cfg.patch_extent % net_cfg.downsample_factor() != 0) {
    throw ConfigError("train_model: patch extent must be divisible by the network's factor " +
                      std::to_string(net_cfg.downsample_factor()));
  }

  std::vector<NormalizedSample> normalized;
  normalized.reserve(data.size());
  for (const auto& pair : data) normalized.push_back(normalize_pair(pair, norm_cfg));

  TrainResult result;
  result.params = init_params(net_cfg, cfg.seed);
  FlatParams flat = flatten(result.params);
  AdamState adam(flat.total);
  PatchSampler sampler(&normalized, cfg.patch_extent, mix_seed(cfg.seed, 0x9A7C));
  const AngleSet angles = AngleSet::uniform(cfg.angle_count);
  // The image-domain arm trains with the projection weight forced to zero;
  // its value is still logged for comparability between arms.
  LossWeights train_weights = cfg.weights;
  if (cfg.arm == Arm::kIm) train_weights.lambda2 = 0.0;

  const std::size_t steps_per_epoch = std::max<std::size_t>(1, cfg.patches_per_epoch / cfg.batch_size);
  std::vector<double> grad_accum(flat.total, 0.0);
  std::vector<double> flat_view(flat.total, 0.0);
  std::size_t global_step = 0;
  std::size_t patch_counter = 0;

  const std::filesystem::path dir = out_dir;
  auto write_config_manifest = [&]() {
    std::ofstream os(dir / "config.txt", std::ios::trunc);
    if (!os) throw IoError("train_model: cannot write config manifest in '" + out_dir + "'");
    char buf[64];
    auto num = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    os << "arm = " << (cfg.arm == Arm::kIm ? "im" : "lip") << '\n'
       << "seed = " << cfg.seed << '\n'
       << "epochs = " << cfg.epochs << '\n'
       << "patches_per_epoch = " << cfg.patches_per_epoch << '\n'
       << "patch_extent = " << cfg.patch_extent << '\n'
       << "batch_size = " << cfg.batch_size << '\n'
       << "learning_rate = " << num(cfg.learning_rate) << '\n'
       << "lr_decay = " << num(cfg.lr_decay) << '\n'
       << "lambda1 = " << num(cfg.weights.lambda1) << '\n'
       << "lambda2 = " << num(train_weights.lambda2) << '\n'
       << "angle_count = " << cfg.angle_count << '\n'
       << "spatial_rank = " << net_cfg.spatial_rank << '\n'
       << "levels = " << net_cfg.levels << '\n'
       << "base_channels = " << net_cfg.base_channels << '\n'
       << "kernel_extent = " << net_cfg.kernel_extent << '\n'
       << "dropout_rate = " << num(net_cfg.dropout_rate) << '\n'
       << "sigma = " << num(norm_cfg.sigma) << '\n'
       << "mu_scale = " << num(norm_cfg.mu_scale) << '\n';
  };
  auto write_outputs = [&]() {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(dir);
    write_config_manifest();
    save_checkpoint((dir / "checkpoint.lipt").string(), result.params,
                    {{"arm", cfg.arm == Arm::kIm ? 0.0 : 1.0},
                     {"lambda1", cfg.weights.lambda1},
                     {"lambda2", train_weights.lambda2},
                     {"angle_count", double(cfg.angle_count)},
                     {"sigma", norm_cfg.sigma},
                     {"mu_scale", norm_cfg.mu_scale},
                     {"train_seed", double(cfg.seed)}});
    std::ofstream csv(dir / "loss.csv", std::ios::trunc);
    if (!csv) throw IoError("train_model: cannot write loss CSV in '" + out_dir + "'");
    write_loss_csv(csv, result.rows);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, double(epoch));
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<Patch> batch;
      batch.reserve(cfg.batch_size);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) batch.push_back(sampler.next());

      std::fill(grad_accum.begin(), grad_accum.end(), 0.0);
      LossRow row;
      row.step = global_step;
      row.epoch = epoch;
      row.lr = lr;
      if (net_cfg.spatial_rank == 2) {
        // Batch stacked along a depth axis: 2D kernels act per item while
        // batchnorm statistics pool over the whole batch.
        const std::size_t e = cfg.patch_extent;
        const std::size_t B = cfg.batch_size;
        Tensor input(Shape{net_cfg.in_channels, B, e, e});
        Tensor truth(Shape{B, e, e});
        const std::size_t plane = e * e;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < net_cfg.in_channels; ++c) {
            std::copy(batch[b].input.data() + c * plane, batch[b].input.data() + (c + 1) * plane,
                      input.data() + (c * B + b) * plane);
          }
          std::copy(batch[b].truth.data(), batch[b].truth.data() + plane,
                    truth.data() + b * plane);
        }
        Tape tape;
        UNetForward fw = unet_forward_batched(tape, result.params, tape.constant(input),
                                              Mode::kTrain, mix_seed(cfg.seed, 0xD207 + patch_counter));
        patch_counter += B;
        Var truth_var = tape.constant(truth);
        Var pred = tape.reshape(fw.output, truth.shape());
        Var l1 = l1_loss(tape, pred, truth_var);
        Var gdl = gdl_loss(tape, pred, truth_var, {1, 2});
        Var total = tape.add(l1, tape.scalar_mul(gdl, train_weights.lambda1));
        if (train_weights.lambda2 != 0.0) {
          Var lip = lip_loss(tape, pred, truth_var, angles);
          row.lip = tape.value(lip)[0];
          total = tape.add(total, tape.scalar_mul(lip, train_weights.lambda2));
        } else {
          row.lip = lip_loss_value(tape.value(pred), truth, angles);
        }
        tape.backward(total);
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < fw.param_vars.size(); ++pi) {
          const Tensor g = tape.grad(fw.param_vars[pi].second);
          for (std::size_t i = 0; i < g.size(); ++i) grad_accum[offset + i] += g[i];
          offset += g.size();
        }
        row.l1 = tape.value(l1)[0];
        row.gdl = tape.value(gdl)[0];
        row.total = tape.value(total)[0];
      } else {
        // 3D volumes: per-sample graphs with gradient averaging.
        double l1_sum = 0, gdl_sum = 0, lip_sum = 0, total_sum = 0;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
          Tape tape;
          Var input = tape.constant(batch[b].input);
          Var truth = tape.constant(batch[b].truth);
          UNetForward fw = unet_forward(tape, result.params, input, Mode::kTrain,
                                        mix_seed(cfg.seed, 0xD207 + patch_counter));
          ++patch_counter;
          Var pred = tape.reshape(fw.output, batch[b].truth.shape());
          Var l1 = l1_loss(tape, pred, truth);
          Var gdl = gdl_loss(tape, pred, truth);
          Var total = tape.add(l1, tape.scalar_mul(gdl, train_weights.lambda1));
          double lip_value;
          if (train_weights.lambda2 != 0.0) {
            Var lip = lip_loss(tape, pred, truth, angles);
            lip_value = tape.value(lip)[0];
            total = tape.add(total, tape.scalar_mul(lip, train_weights.lambda2));
          } else {
            lip_value = lip_loss_value(tape.value(pred), batch[b].truth, angles);
          }
          tape.backward(total);
          std::size_t offset = 0;
          for (std::size_t pi = 0; pi < fw.param_vars.size(); ++pi) {
            const Tensor g = tape.grad(fw.param_vars[pi].second);
            for (std::size_t i = 0; i < g.size(); ++i) grad_accum[offset + i] += g[i];
            offset += g.size();
          }
          l1_sum += tape.value(l1)[0];
          gdl_sum += tape.value(gdl)[0];
          lip_sum += lip_value;
          total_sum += tape.value(total)[0];
        }
        const double inv_b = 1.0 / double(cfg.batch_size);
        for (double& g : grad_accum) g *= inv_b;
        row.l1 = l1_sum * inv_b;
        row.gdl = gdl_sum * inv_b;
        row.lip = lip_sum * inv_b;
        row.total = total_sum * inv_b;
      }
      result.rows.push_back(row);
      ++global_step;

      if (!std::isfinite(row.total)) {
        write_outputs();  // last good checkpoint is the previous epoch's
        throw TrainingFault("train_model: loss diverged to " + std::to_string(row.total) +
                            " at step " + std::to_string(row.step));
      }

      // Gather-update-scatter keeps the optimizer a flat-vector operation.
      std::size_t offset = 0;
      for (Tensor* t : flat.tensors) {
        std::copy(t->data(), t->data() + t->size(), flat_view.begin() + std::ptrdiff_t(offset));
        offset += t->size();
      }
      adam_step(flat_view, grad_accum, adam, lr);
      offset = 0;
      for (Tensor* t : flat.tensors) {
        std::copy(flat_view.begin() + std::ptrdiff_t(offset),
                  flat_view.begin() + std::ptrdiff_t(offset + t->size()), t->data());
        offset += t->size();
      }
    }
    write_outputs();
  }
  return result;
}

Tensor stitch_tiles(const Tensor& input, const std::vector<std::size_t>& patch_extent,
                    const std::vector<std::size_t>& stride,
                    const std::function<Tensor(const Tensor&)>& fn) {
  if (input.rank() < 2) throw ShapeError("stitch_tiles: input must be [C, spatial...]");
  const std::size_t rank = input.rank() - 1;
  if (patch_extent.size() != rank || stride.size() != rank) {
    throw ConfigError("stitch_tiles: patch/stride must have one entry per spatial axis");
  }
  std::vector<std::vector<std::size_t>> positions(rank);
  for (std::size_t ax = 0; ax < rank; ++ax) {
    const std::size_t S = input.extent(ax + 1);
    const std::size_t P = patch_extent[ax];
    if (P == 0 || stride[ax] == 0) throw ConfigError("stitch_tiles: zero patch or stride");
    if (stride[ax] > P) throw ConfigError("stitch_tiles: stride must not exceed patch extent");
    if (P > S) {
      throw ConfigError("stitch_tiles: volume extent " + std::to_string(S) +
                        " smaller than patch extent " + std::to_string(P));
    }
    for (std::size_t pos = 0;; pos += stride[ax]) {
      if (pos + P >= S) {
        if (positions[ax].empty() || positions[ax].back() != S - P) positions[ax].push_back(S - P);
        break;
      }
      positions[ax].push_back(pos);
    }
  }

  const std::size_t cin = input.extent(0);
  const std::size_t in_spatial = input.size() / cin;
  Shape patch_shape{cin};
  for (std::size_t ax = 0; ax < rank; ++ax) patch_shape.push_back(patch_extent[ax]);
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t ax = rank - 1; ax-- > 0;) {
    in_stride[ax] = in_stride[ax + 1] * input.extent(ax + 2);
  }
  Tensor sum, count;
  std::size_t cout = 0;

  std::vector<std::size_t> tile_idx(rank, 0);
  bool done = false;
  while (!done) {
    std::vector<std::size_t> corner(rank);
    for (std::size_t ax = 0; ax < rank; ++ax) corner[ax] = positions[ax][tile_idx[ax]];

    // Copy the tile out, run it, and scatter the result back.
    Tensor patch(patch_shape);
    const std::size_t patch_spatial = patch.size() / cin;
    std::vector<std::size_t> coord(rank, 0);
    for (std::size_t o = 0; o < patch_spatial; ++o) {
      std::size_t src = 0;
      for (std::size_t ax = 0; ax < rank; ++ax) src += (corner[ax] + coord[ax]) * in_stride[ax];
      for (std::size_t c = 0; c < cin; ++c) {
        patch[c * patch_spatial + o] = input[c * in_spatial + src];
      }
      for (std::size_t ax = rank; ax-- > 0;) {
        if (++coord[ax] < patch_extent[ax]) break;
        coord[ax] = 0;
      }
    }

    Tensor result = fn(patch);
    if (result.rank() != rank + 1) throw ShapeError("stitch_tiles: fn must keep [C, spatial...]");
    for (std::size_t ax = 0; ax < rank; ++ax) {
      if (result.extent(ax + 1) != patch_extent[ax]) {
        throw ShapeError("stitch_tiles: fn must preserve patch extents");
      }
    }
    if (sum.empty()) {
      cout = result.extent(0);
      Shape out_shape{cout};
      for (std::size_t ax = 0; ax < rank; ++ax) out_shape.push_back(input.extent(ax + 1));
      sum = Tensor(out_shape);
      count = Tensor(out_shape);
    }
    const std::size_t out_spatial = sum.size() / cout;
    std::fill(coord.begin(), coord.end(), 0);
    for (std::size_t o = 0; o < patch_spatial; ++o) {
      std::size_t dst = 0;
      for (std::size_t ax = 0; ax < rank; ++ax) dst += (corner[ax] + coord[ax]) * in_stride[ax];
      for (std::size_t c = 0; c < cout; ++c) {
        sum[c * out_spatial + dst] += result[c * patch_spatial + o];
        count[c * out_spatial + dst] += 1.0;
      }
      for (std::size_t ax = rank; ax-- > 0;) {
        if (++coord[ax] < patch_extent[ax]) break;
        coord[ax] = 0;
      }
    }

    for (std::size_t ax = rank; ax-- > 0;) {
      if (++tile_idx[ax] < positions[ax].size()) break;
      tile_idx[ax] = 0;
      if (ax == 0) done = true;
    }
  }

  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] /= count[i];
  return sum;
}

ImageVolume infer_stitched(UNetParams& params, const SamplePair& pair,
                           const NormalizationConfig& norm_cfg, std::size_t patch_extent,
                           std::size_t stride) {
  NormalizedSample ns = normalize_pair(pair, norm_cfg);
  const std::size_t rank = ns.truth.rank();
  std::vector<std::size_t> extents(rank, patch_extent);
  std::vector<std::size_t> strides(rank, stride);
  Tensor stitched = stitch_tiles(ns.input, extents, strides, [&](const Tensor& patch) {
    Tape tape;
    Var in = tape.constant(patch);
    UNetForward fw = unet_forward(tape, params, in, Mode::kEval);
    return tape.value(fw.output);
  });
  return denormalize(stitched, norm_cfg, pair.mu_truth.voxel_width_cm);
}

}  // namespace lip
