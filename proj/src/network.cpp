#include "lip/network.hpp"

#include <cmath>
#include <random>

#include "lip/container.hpp"
#include "lip/rng.hpp"

namespace lip {

namespace {

struct BlockSpec {
  std::string name;
  std::size_t cin, cout, k, stride;
  Padding pad;
};

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

// Conv/BN blocks in forward-execution order. Encoder levels downsample with
// stride-2 2x2(x2) convolutions; the decoder upsamples with nearest-neighbor
// followed by a full-size convolution, then fuses the skip via concatenation.
std::vector<BlockSpec> layout(const UNetConfig& cfg) {
  std::vector<BlockSpec> specs;
  const std::size_t L = cfg.levels;
  const std::size_t ke = cfg.kernel_extent;
  std::size_t cur = cfg.in_channels;
  for (std::size_t l = 0; l + 1 < L; ++l) {
    const std::size_t c = cfg.channels_at(l);
    specs.push_back({"enc" + std::to_string(l) + "a", cur, c, ke, 1, Padding::kSymmetric});
    specs.push_back({"enc" + std::to_string(l) + "b", c, c, ke, 1, Padding::kSymmetric});
    specs.push_back({"down" + std::to_string(l), c, cfg.channels_at(l + 1), 2, 2, Padding::kNone});
    cur = cfg.channels_at(l + 1);
  }
  const std::size_t cb = cfg.channels_at(L - 1);
  specs.push_back({"bot_a", cur, cb, ke, 1, Padding::kSymmetric});
  specs.push_back({"bot_b", cb, cb, ke, 1, Padding::kSymmetric});
  for (std::size_t l = L - 1; l-- > 0;) {
    const std::size_t c = cfg.channels_at(l);
    specs.push_back({"up" + std::to_string(l), cfg.channels_at(l + 1), c, ke, 1, Padding::kSymmetric});
    specs.push_back({"dec" + std::to_string(l) + "a", 2 * c, c, ke, 1, Padding::kSymmetric});
    specs.push_back({"dec" + std::to_string(l) + "b", c, c, ke, 1, Padding::kSymmetric});
  }
  return specs;
}

Shape kernel_shape(const UNetConfig& cfg, const BlockSpec& s) {
  Shape sh{s.cout, s.cin};
  for (std::size_t ax = 0; ax < cfg.spatial_rank; ++ax) sh.push_back(s.k);
  return sh;
}

Shape out_kernel_shape(const UNetConfig& cfg) {
  Shape sh{cfg.out_channels, cfg.base_channels};
  for (std::size_t ax = 0; ax < cfg.spatial_rank; ++ax) sh.push_back(1);
  return sh;
}

}  // namespace

void UNetConfig::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) throw ConfigError("UNetConfig: spatial_rank must be 2 or 3");
  if (levels == 0) throw ConfigError("UNetConfig: levels must be positive");
  if (base_channels == 0) throw ConfigError("UNetConfig: base_channels must be positive");
  if (kernel_extent == 0 || kernel_extent % 2 == 0) {
    throw ConfigError("UNetConfig: kernel_extent must be odd and positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("UNetConfig: dropout_rate must lie in [0, 1)");
  }
  if (in_channels == 0 || out_channels == 0) {
    throw ConfigError("UNetConfig: channel counts must be positive");
  }
}

UNetParams init_params(const UNetConfig& config, std::uint64_t seed) {
  config.validate();
  UNetParams p;
  p.config = config;
  p.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0x1517));
  for (const BlockSpec& s : layout(config)) {
    ConvBlock b;
    b.name = s.name;
    const double fan_in = double(s.cin) * double(ipow(s.k, config.spatial_rank));
    b.kernel = Tensor::random_normal(kernel_shape(config, s), rng, 0.0, std::sqrt(2.0 / fan_in));
    b.bn_scale = Tensor::ones(Shape{s.cout});
    b.bn_shift = Tensor::zeros(Shape{s.cout});
    b.run_mean = Tensor::zeros(Shape{s.cout});
    b.run_var = Tensor::ones(Shape{s.cout});
    p.blocks.push_back(std::move(b));
  }
  p.out_kernel = Tensor::random_normal(out_kernel_shape(config), rng, 0.0,
                                       std::sqrt(2.0 / double(config.base_channels)));
  return p;
}

std::size_t parameter_count(const UNetConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const BlockSpec& s : layout(config)) {
    n += s.cout * s.cin * ipow(s.k, config.spatial_rank);  // kernel
    n += 2 * s.cout;                                       // bn scale + shift
  }
  n += config.out_channels * config.base_channels;
  return n;
}

void for_each_parameter(UNetParams& p,
                        const std::function<void(const std::string&, Tensor&)>& fn) {
  for (ConvBlock& b : p.blocks) {
    fn(b.name + "/kernel", b.kernel);
    fn(b.name + "/bn_scale", b.bn_scale);
    fn(b.name + "/bn_shift", b.bn_shift);
  }
  fn("out/kernel", p.out_kernel);
}

void for_each_state(UNetParams& p, const std::function<void(const std::string&, Tensor&)>& fn) {
  for (ConvBlock& b : p.blocks) {
    fn(b.name + "/run_mean", b.run_mean);
    fn(b.name + "/run_var", b.run_var);
  }
}

UNetForward unet_forward(Tape& t, UNetParams& p, Var input, Mode mode,
                         std::uint64_t dropout_seed) {
  const UNetConfig& cfg = p.config;
  cfg.validate();
  const Tensor& x = t.value(input);
  if (x.rank() != cfg.spatial_rank + 1 || x.extent(0) != cfg.in_channels) {
    throw ShapeError("unet_forward: expected [" + std::to_string(cfg.in_channels) +
                     ", spatial...] of rank " + std::to_string(cfg.spatial_rank + 1) +
                     ", got " + shape_to_string(x.shape()));
  }
  const std::size_t div = cfg.downsample_factor();
  for (std::size_t ax = 1; ax < x.rank(); ++ax) {
    if (x.extent(ax) % div != 0) {
      throw ShapeError("unet_forward: spatial extents must be divisible by " +
                       std::to_string(div) + ", got " + shape_to_string(x.shape()));
    }
  }

  UNetForward fw;
  const bool train = mode == Mode::kTrain;
  const std::vector<BlockSpec> specs = layout(cfg);
  if (specs.size() != p.blocks.size()) {
    throw ConfigError("unet_forward: parameter block count does not match config");
  }
  std::size_t block_idx = 0;
  auto apply_block = [&](Var h) {
    ConvBlock& b = p.blocks[block_idx];
    const BlockSpec& s = specs[block_idx];
    ++block_idx;
    Var kv = t.leaf(b.kernel, train);
    Var sv = t.leaf(b.bn_scale, train);
    Var bv = t.leaf(b.bn_shift, train);
    fw.param_vars.emplace_back(b.name + "/kernel", kv);
    fw.param_vars.emplace_back(b.name + "/bn_scale", sv);
    fw.param_vars.emplace_back(b.name + "/bn_shift", bv);
    std::vector<std::size_t> stride(cfg.spatial_rank, s.stride);
    Var c = t.conv_nd(h, kv, stride, s.pad);
    Var n = t.batch_norm(c, sv, bv, mode, &b.run_mean, &b.run_var);
    return t.relu(n);
  };

  Var h = input;
  std::vector<Var> skips;
  for (std::size_t l = 0; l + 1 < cfg.levels; ++l) {
    h = apply_block(h);  // enc{l}a
    h = apply_block(h);  // enc{l}b
    skips.push_back(h);
    h = apply_block(h);  // down{l}
  }
  h = apply_block(h);  // bot_a
  h = apply_block(h);  // bot_b
  if (train && cfg.dropout_rate > 0.0) {
    h = t.dropout(h, cfg.dropout_rate, mode, dropout_seed);
  }
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    h = t.upsample_nearest(h, 2);
    h = apply_block(h);  // up{l}
    h = t.concat(h, skips[l]);
    h = apply_block(h);  // dec{l}a
    h = apply_block(h);  // dec{l}b
  }
  Var ok = t.leaf(p.out_kernel, train);
  fw.param_vars.emplace_back("out/kernel", ok);
  std::vector<std::size_t> unit_stride(cfg.spatial_rank, 1);
  fw.output = t.conv_nd(h, ok, unit_stride, Padding::kNone);
  return fw;
}

UNetForward unet_forward_batched(Tape& t, UNetParams& p, Var input, Mode mode,
                                 std::uint64_t dropout_seed) {
  const UNetConfig& cfg = p.config;
  cfg.validate();
  if (cfg.spatial_rank != 2) {
    throw ConfigError("unet_forward_batched: only 2D networks stack a batch axis");
  }
  const Tensor& x = t.value(input);
  if (x.rank() != 4 || x.extent(0) != cfg.in_channels) {
    throw ShapeError("unet_forward_batched: expected [" + std::to_string(cfg.in_channels) +
                     ", batch, H, W], got " + shape_to_string(x.shape()));
  }
  const std::size_t div = cfg.downsample_factor();
  if (x.extent(2) % div != 0 || x.extent(3) % div != 0) {
    throw ShapeError("unet_forward_batched: spatial extents must be divisible by " +
                     std::to_string(div) + ", got " + shape_to_string(x.shape()));
  }

  UNetForward fw;
  const bool train = mode == Mode::kTrain;
  const std::vector<BlockSpec> specs = layout(cfg);
  if (specs.size() != p.blocks.size()) {
    throw ConfigError("unet_forward_batched: parameter block count does not match config");
  }
  std::size_t block_idx = 0;
  auto apply_block = [&](Var h) {
    ConvBlock& b = p.blocks[block_idx];
    const BlockSpec& s = specs[block_idx];
    ++block_idx;
    Var kv = t.leaf(b.kernel, train);
    Var sv = t.leaf(b.bn_scale, train);
    Var bv = t.leaf(b.bn_shift, train);
    fw.param_vars.emplace_back(b.name + "/kernel", kv);
    fw.param_vars.emplace_back(b.name + "/bn_scale", sv);
    fw.param_vars.emplace_back(b.name + "/bn_shift", bv);
    Var k3 = t.reshape(kv, Shape{s.cout, s.cin, 1, s.k, s.k});
    Var c = t.conv_nd(h, k3, {1, s.stride, s.stride}, s.pad);
    Var n = t.batch_norm(c, sv, bv, mode, &b.run_mean, &b.run_var);
    return t.relu(n);
  };

  Var h = input;
  std::vector<Var> skips;
  for (std::size_t l = 0; l + 1 < cfg.levels; ++l) {
    h = apply_block(h);
    h = apply_block(h);
    skips.push_back(h);
    h = apply_block(h);
  }
  h = apply_block(h);
  h = apply_block(h);
  if (train && cfg.dropout_rate > 0.0) {
    h = t.dropout(h, cfg.dropout_rate, mode, dropout_seed);
  }
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    h = t.upsample_nearest(h, std::vector<std::size_t>{1, 2, 2});
    h = apply_block(h);
    h = t.concat(h, skips[l]);
    h = apply_block(h);
    h = apply_block(h);
  }
  Var ok = t.leaf(p.out_kernel, train);
  fw.param_vars.emplace_back("out/kernel", ok);
  Var ok3 = t.reshape(ok, Shape{cfg.out_channels, cfg.base_channels, 1, 1, 1});
  fw.output = t.conv_nd(h, ok3, {1, 1, 1}, Padding::kNone);
  return fw;
}

void save_checkpoint(const std::string& path, UNetParams& p,
                     const std::map<std::string, double>& extra) {
  std::vector<ContainerEntry> entries;
  auto add_scalar = [&](const std::string& name, double v) {
    entries.push_back({name, Tensor::scalar(v), Dtype::kF64});
  };
  add_scalar("config/spatial_rank", double(p.config.spatial_rank));
  add_scalar("config/levels", double(p.config.levels));
  add_scalar("config/base_channels", double(p.config.base_channels));
  add_scalar("config/kernel_extent", double(p.config.kernel_extent));
  add_scalar("config/dropout_rate", p.config.dropout_rate);
  add_scalar("config/in_channels", double(p.config.in_channels));
  add_scalar("config/out_channels", double(p.config.out_channels));
  add_scalar("config/seed", double(p.seed));
  for_each_parameter(p, [&](const std::string& name, Tensor& tsr) {
    entries.push_back({"param/" + name, tsr, Dtype::kF64});
  });
  for_each_state(p, [&](const std::string& name, Tensor& tsr) {
    entries.push_back({"state/" + name, tsr, Dtype::kF64});
  });
  for (const auto& [k, v] : extra) add_scalar("meta/" + k, v);
  write_container(path, entries);
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto entries = read_container(path);
  auto scalar = [&](const std::string& name) { return find_entry(entries, name).tensor[0]; };
  UNetConfig cfg;
  cfg.spatial_rank = std::size_t(scalar("config/spatial_rank"));
  cfg.levels = std::size_t(scalar("config/levels"));
  cfg.base_channels = std::size_t(scalar("config/base_channels"));
  cfg.kernel_extent = std::size_t(scalar("config/kernel_extent"));
  cfg.dropout_rate = scalar("config/dropout_rate");
  cfg.in_channels = std::size_t(scalar("config/in_channels"));
  cfg.out_channels = std::size_t(scalar("config/out_channels"));
  Checkpoint ck;
  ck.params = init_params(cfg, std::uint64_t(scalar("config/seed")));
  for_each_parameter(ck.params, [&](const std::string& name, Tensor& tsr) {
    const Tensor& stored = find_entry(entries, "param/" + name).tensor;
    require_same_shape(tsr, stored, "load_checkpoint");
    tsr = stored;
  });
  for_each_state(ck.params, [&](const std::string& name, Tensor& tsr) {
    const Tensor& stored = find_entry(entries, "state/" + name).tensor;
    require_same_shape(tsr, stored, "load_checkpoint");
    tsr = stored;
  });
  for (const auto& e : entries) {
    if (e.name.rfind("meta/", 0) == 0) ck.extra[e.name.substr(5)] = e.tensor[0];
  }
  return ck;
}

}  // namespace lip
