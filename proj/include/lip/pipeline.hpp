#pragma once

#include <span>
#include <string>
#include <vector>

#include "lip/losses.hpp"
#include "lip/network.hpp"
#include "lip/phantom.hpp"
#include "lip/volume.hpp"

namespace lip {

struct NormalizationConfig {
  double sigma = 5.0;      // SUV scale inside tanh
  double mu_scale = 0.15;  // 1/cm
  void validate() const;
};

struct NormalizedSample {
  Tensor input;  // [2, spatial...]: channel 0 tanh(lambda/sigma), channel 1 mu/mu_scale
  Tensor truth;  // [spatial...]: mu_truth / mu_scale
};

NormalizedSample normalize_pair(const SamplePair& pair, const NormalizationConfig& cfg);

// pred * mu_scale, clamped at zero. Accepts [spatial...] or a leading
// singleton channel axis.
ImageVolume denormalize(const Tensor& pred, const NormalizationConfig& cfg,
                        double voxel_width_cm);

enum class Arm { kIm, kImLip };

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t patches_per_epoch = 2000;
  std::size_t patch_extent = 32;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double lr_decay = 0.99;  // per-epoch multiplicative decay
  LossWeights weights;
  std::size_t angle_count = 4;
  std::uint64_t seed = 0;
  Arm arm = Arm::kImLip;
  void validate() const;
};

struct Patch {
  Tensor input;  // [2, e, e]
  Tensor truth;  // [e, e]
};

// Uniform random patch corners over the normalized set; all-air truth patches
// (identically zero) are rejected and redrawn, up to 100 retries.
class PatchSampler {
 public:
  PatchSampler(const std::vector<NormalizedSample>* samples, std::size_t extent,
               std::uint64_t seed);
  Patch next();

 private:
  const std::vector<NormalizedSample>* samples_;
  std::size_t extent_;
  std::mt19937_64 rng_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Flat first/second-moment state over a parameter vector.
struct AdamState {
  explicit AdamState(std::size_t n, AdamConfig cfg = {})
      : m(n, 0.0), v(n, 0.0), config(cfg) {}
  std::vector<double> m, v;
  std::size_t t = 0;  // completed steps
  AdamConfig config;
};

// Standard bias-corrected update. Throws TrainingFault on non-finite
// gradients.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr);

struct LossRow {
  std::size_t step = 0;   // global step index
  std::size_t epoch = 0;
  double l1 = 0, gdl = 0, lip = 0, total = 0, lr = 0;
};

struct TrainResult {
  UNetParams params;
  std::vector<LossRow> rows;
};

// Full training loop: per-epoch learning rate lr0 * decay^epoch, per-step
// loss logging, checkpoint at every epoch end. When out_dir is nonempty,
// writes <out_dir>/loss.csv and <out_dir>/checkpoint.lipt. Divergence throws
// TrainingFault and leaves the last epoch checkpoint on disk.
TrainResult train_model(const std::vector<SamplePair>& data, const UNetConfig& net_cfg,
                        const TrainConfig& cfg, const NormalizationConfig& norm_cfg,
                        const std::string& out_dir = "");

void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows);

// Tiles [C, spatial...] with the given patch extents and strides, applies fn
// per tile, and averages overlapping outputs with equal weights. The final
// tile per axis is aligned to the volume boundary.
Tensor stitch_tiles(const Tensor& input, const std::vector<std::size_t>& patch_extent,
                    const std::vector<std::size_t>& stride,
                    const std::function<Tensor(const Tensor&)>& fn);

// Eval-mode patchwise inference of the whole volume; output extents equal
// input extents, denormalized to 1/cm and clamped at zero.
ImageVolume infer_stitched(UNetParams& params, const SamplePair& pair,
                           const NormalizationConfig& norm_cfg, std::size_t patch_extent,
                           std::size_t stride);

}  // namespace lip
