#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lip/projector.hpp"
#include "lip/volume.hpp"

namespace lip {

// Image-domain metrics. The reference Y supplies the dynamic range; a
// constant reference makes the normalized metrics undefined (ValueError).
double nmae(const Tensor& x, const Tensor& y);
double mse(const Tensor& x, const Tensor& y);
// 10*log10(L^2 / mse) with L = max(Y) - min(Y); +infinity when mse == 0.
double psnr(const Tensor& x, const Tensor& y);
// Mean local SSIM, Gaussian window of extent 11 with sigma 1.5, K1 = 0.01,
// K2 = 0.03, L = max(Y) - min(Y). A 3D volume is averaged over its slices.
double ssim(const Tensor& x, const Tensor& y);

// Projection-domain metrics.
double linmae(const Tensor& x, const Tensor& y, const AngleSet& angles,
              double voxel_width = 1.0);
// Identical by definition to the projection loss on the same inputs.
double limse(const Tensor& x, const Tensor& y, const AngleSet& angles,
             double voxel_width = 1.0);

struct MetricsRow {
  std::string id;
  double nmae = 0, mse = 0, psnr = 0, ssim = 0, linmae = 0, limse = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  MetricsRow mean;    // id "mean"
  MetricsRow stddev;  // id "std"; sample standard deviation, 0 for a single row
};

MetricsReport evaluate_report(const std::vector<ImageVolume>& pred,
                              const std::vector<ImageVolume>& truth, const AngleSet& angles);

// CSV schema: header id,nmae,mse,psnr,ssim,linmae,limse; one row per volume,
// then mean and std rows. Infinite PSNR serializes as the token `inf`.
void write_metrics_csv(std::ostream& os, const MetricsReport& report);

}  // namespace lip
