#pragma once

#include <cstdint>
#include <vector>

#include "lip/volume.hpp"

namespace lip {

// Standard 511 keV linear attenuation coefficients (1/cm); configuration
// constants, not asserted physics.
constexpr double kMuSoftTissue = 0.096;
constexpr double kMuLung = 0.03;
constexpr double kMuBone = 0.15;
constexpr double kMuMax = 0.3;

// Superellipse primitive: |u/a|^p + |v/b|^p <= 1 in its local rotated frame.
// Centers and semi-axes are in voxel units relative to the grid center.
struct OrganSpec {
  double center_row = 0.0;
  double center_col = 0.0;
  double semi_row = 1.0;
  double semi_col = 1.0;
  double angle_deg = 0.0;
  double exponent = 2.0;
  double mu = 0.0;        // 1/cm
  double activity = 0.0;  // SUV
};

struct NoiseSpec {
  double mu_noise_std = 0.02;      // stddev of correlated additive noise (1/cm)
  double mu_noise_corr = 2.0;      // correlation length of that noise (voxels)
  double mu_blur_sigma = 1.2;      // resolution loss of the mu input (voxels)
  double lambda_bias_amp = 0.25;   // amplitude of the multiplicative bias field
  double lambda_noise_level = 0.1; // relative signal-dependent lambda noise
};

struct PhantomSpec {
  std::size_t extent = 64;
  double voxel_width_cm = 0.4;
  std::vector<OrganSpec> organs;  // painter's order: later organs overwrite
  NoiseSpec noise;
  std::uint64_t seed = 0;

  void validate() const;
};

// The (lambda input, mu input, mu truth) training unit.
struct SamplePair {
  ImageVolume lambda_input;  // SUV
  ImageVolume mu_input;      // 1/cm
  ImageVolume mu_truth;      // 1/cm
};

struct TruthPair {
  ImageVolume mu_truth;
  ImageVolume lambda_truth;
};

// Rasterizes the organ list with 4x4 supersampled anti-aliasing; air is zero.
TruthPair generate_truth(const PhantomSpec& spec);

// Emulates the degraded inputs: blurred-plus-correlated-noise attenuation and
// bias-field-plus-signal-noise activity, both clamped at zero.
SamplePair degrade(const ImageVolume& mu_truth, const ImageVolume& lambda_truth,
                   const PhantomSpec& spec);

// Randomization ranges for dataset generation. Fractions are relative to the
// inscribed-disk radius of the grid.
struct DatasetRanges {
  std::size_t extent = 64;
  double voxel_width_cm = 0.4;
  double body_semi_lo = 0.55, body_semi_hi = 0.8;
  std::size_t extra_organs_lo = 2, extra_organs_hi = 4;
  NoiseSpec noise;
};

// n randomized body phantoms; (seed, n, ranges) fully determine the result.
std::vector<SamplePair> make_dataset(std::size_t n, const DatasetRanges& ranges,
                                     std::uint64_t seed);

// On-disk dataset: one tensor container per sample (entries lambda_input,
// mu_input, mu_truth, voxel_width) plus a plain-text manifest with one
// "<id> <file> <seed>" record per sample.
void write_sample(const std::string& path, const SamplePair& pair);
SamplePair read_sample(const std::string& path);
void write_dataset(const std::string& dir, const std::vector<SamplePair>& samples,
                   std::uint64_t master_seed);
std::vector<SamplePair> read_dataset(const std::string& dir);

// Gaussian blur with zero padding at the borders; sigma in voxels, shared by
// the degradation model and tests.
Tensor gaussian_blur(const Tensor& image, double sigma);

}  // namespace lip
