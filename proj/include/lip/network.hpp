#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lip/tape.hpp"

namespace lip {

struct UNetConfig {
  std::size_t spatial_rank = 2;  // 2 or 3
  std::size_t levels = 3;
  std::size_t base_channels = 16;
  std::size_t kernel_extent = 3;  // odd
  double dropout_rate = 0.15;
  std::size_t in_channels = 2;
  std::size_t out_channels = 1;

  void validate() const;
  // Input spatial extents must be divisible by this.
  std::size_t downsample_factor() const { return std::size_t(1) << (levels - 1); }
  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
};

// One conv + batchnorm unit (ReLU is applied in the forward pass).
struct ConvBlock {
  std::string name;
  Tensor kernel;  // [c_out, c_in, k...]
  Tensor bn_scale, bn_shift;    // trainable, [c_out]
  Tensor run_mean, run_var;     // running statistics, [c_out]
};

struct UNetParams {
  UNetConfig config;
  std::uint64_t seed = 0;
  std::vector<ConvBlock> blocks;  // forward order
  Tensor out_kernel;              // 1x1(x1) projection to out_channels, no BN
};

// He-style fan-in initialization; batchnorm starts as the identity.
// Deterministic per seed.
UNetParams init_params(const UNetConfig& config, std::uint64_t seed);

// Total trainable scalar count; a pure function of the config.
std::size_t parameter_count(const UNetConfig& config);

// Deterministic iteration over trainable tensors (kernels and batchnorm
// affine parameters; running stats are state, not parameters).
void for_each_parameter(UNetParams& params,
                        const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_state(UNetParams& params,
                    const std::function<void(const std::string&, Tensor&)>& fn);

struct UNetForward {
  Var output;  // [out_channels, spatial...]
  std::vector<std::pair<std::string, Var>> param_vars;  // same order as for_each_parameter
};

// Builds the forward graph on `tape`. Train mode updates the running
// batchnorm statistics in `params` and applies bottleneck dropout with the
// given seed; eval mode touches nothing and is deterministic.
UNetForward unet_forward(Tape& tape, UNetParams& params, Var input, Mode mode,
                         std::uint64_t dropout_seed = 0);

// Forward for a whole batch of 2D inputs stacked along a depth axis:
// input [C, B, H, W], output [out_channels, B, H, W]. The 2D kernels act as
// depth-1 3D kernels, so batch items never mix spatially, while batchnorm
// statistics pool over the whole batch. Parameters and checkpoints are
// shared with the unbatched forward; in eval mode the two are bit-identical
// per batch item.
UNetForward unet_forward_batched(Tape& tape, UNetParams& params, Var input, Mode mode,
                                 std::uint64_t dropout_seed = 0);

// Checkpoint container I/O: all parameters, running stats, config, seed and
// caller metadata scalars.
void save_checkpoint(const std::string& path, UNetParams& params,
                     const std::map<std::string, double>& extra = {});
struct Checkpoint {
  UNetParams params;
  std::map<std::string, double> extra;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lip
