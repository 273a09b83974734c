#include "lip/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "lip/losses.hpp"

namespace lip {

namespace {

double reference_range(const Tensor& y, const char* what) {
  const double range = y.max() - y.min();
  if (!(range > 0.0)) {
    throw ValueError(std::string(what) + ": reference image is constant, normalizer undefined");
  }
  return range;
}

constexpr std::size_t kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

std::vector<double> ssim_window_1d() {
  std::vector<double> w(kSsimWindow);
  const double c = (double(kSsimWindow) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = double(i) - c;
    w[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable filtering along rows then columns.
Tensor filter_valid(const Tensor& img, const std::vector<double>& w) {
  const std::size_t H = img.extent(0), W = img.extent(1), K = w.size();
  Tensor rows(Shape{H, W - K + 1});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x + K <= W; ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < K; ++j) acc += w[j] * img.at(y, x + j);
      rows.at(y, x) = acc;
    }
  }
  Tensor out(Shape{H - K + 1, W - K + 1});
  for (std::size_t y = 0; y + K <= H; ++y) {
    for (std::size_t x = 0; x < out.extent(1); ++x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < K; ++j) acc += w[j] * rows.at(y + j, x);
      out.at(y, x) = acc;
    }
  }
  return out;
}

double ssim_slice(const Tensor& x, const Tensor& y, double range) {
  if (x.extent(0) < kSsimWindow || x.extent(1) < kSsimWindow) {
    throw ShapeError("ssim: image smaller than the " + std::to_string(kSsimWindow) +
                     "-pixel window");
  }
  const auto w = ssim_window_1d();
  Tensor xx(x.shape()), yy(x.shape()), xy(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const Tensor mx = filter_valid(x, w);
  const Tensor my = filter_valid(y, w);
  const Tensor mxx = filter_valid(xx, w);
  const Tensor myy = filter_valid(yy, w);
  const Tensor mxy = filter_valid(xy, w);
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double vxy = mxy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * vxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    acc += num / den;
  }
  return acc / double(mx.size());
}

}  // namespace

double nmae(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "nmae");
  const double range = reference_range(y, "nmae");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::fabs(x[i] - y[i]);
  return acc / (double(x.size()) * range);
}

double mse(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  return acc / double(x.size());
}

double psnr(const Tensor& x, const Tensor& y) {
  const double range = reference_range(y, "psnr");
  const double m = mse(x, y);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(range * range / m);
}

double ssim(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "ssim");
  const double range = reference_range(y, "ssim");
  if (x.rank() == 2) return ssim_slice(x, y, range);
  if (x.rank() == 3) {
    const std::size_t D = x.extent(0);
    const Shape slice_shape{x.extent(1), x.extent(2)};
    const std::size_t n = x.extent(1) * x.extent(2);
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      Tensor xs(slice_shape), ys(slice_shape);
      for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[d * n + i];
        ys[i] = y[d * n + i];
      }
      acc += ssim_slice(xs, ys, range);
    }
    return acc / double(D);
  }
  throw ShapeError("ssim: expected a 2D image or 3D volume");
}

double linmae(const Tensor& x, const Tensor& y, const AngleSet& angles, double voxel_width) {
  require_same_shape(x, y, "linmae");
  double acc = 0.0;
  for (double angle : angles.angles()) {
    const Tensor px = project(x, angle, voxel_width).values;
    const Tensor py = project(y, angle, voxel_width).values;
    const double range = py.max() - py.min();
    if (!(range > 0.0)) {
      throw ValueError("linmae: reference projection at angle " + std::to_string(angle) +
                       " is constant, normalizer undefined");
    }
    double term = 0.0;
    for (std::size_t i = 0; i < px.size(); ++i) term += std::fabs(px[i] - py[i]);
    acc += term / (double(px.size()) * range);
  }
  return acc / double(angles.count());
}

double limse(const Tensor& x, const Tensor& y, const AngleSet& angles, double voxel_width) {
  return lip_loss_value(x, y, angles, voxel_width);
}

MetricsReport evaluate_report(const std::vector<ImageVolume>& pred,
                              const std::vector<ImageVolume>& truth, const AngleSet& angles) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw ValueError("evaluate_report: need equal-length nonempty prediction/truth sets");
  }
  MetricsReport report;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    MetricsRow row;
    row.id = std::to_string(i);
    const Tensor& x = pred[i].values;
    const Tensor& y = truth[i].values;
    const double w = truth[i].voxel_width_cm;
    row.nmae = nmae(x, y);
    row.mse = mse(x, y);
    row.psnr = psnr(x, y);
    row.ssim = ssim(x, y);
    row.linmae = linmae(x, y, angles, w);
    row.limse = limse(x, y, angles, w);
    report.rows.push_back(row);
  }

  auto aggregate = [&](auto getter, double& mean_out, double& std_out) {
    const double n = double(report.rows.size());
    bool all_equal = true;
    for (const auto& r : report.rows) {
      if (getter(r) != getter(report.rows.front())) all_equal = false;
    }
    if (all_equal) {
      mean_out = getter(report.rows.front());
      std_out = 0.0;
      return;
    }
    double m = 0.0;
    for (const auto& r : report.rows) m += getter(r);
    m /= n;
    double v = 0.0;
    for (const auto& r : report.rows) v += (getter(r) - m) * (getter(r) - m);
    std_out = report.rows.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
    mean_out = m;
  };
  report.mean.id = "mean";
  report.stddev.id = "std";
  aggregate([](const MetricsRow& r) { return r.nmae; }, report.mean.nmae, report.stddev.nmae);
  aggregate([](const MetricsRow& r) { return r.mse; }, report.mean.mse, report.stddev.mse);
  aggregate([](const MetricsRow& r) { return r.psnr; }, report.mean.psnr, report.stddev.psnr);
  aggregate([](const MetricsRow& r) { return r.ssim; }, report.mean.ssim, report.stddev.ssim);
  aggregate([](const MetricsRow& r) { return r.linmae; }, report.mean.linmae,
            report.stddev.linmae);
  aggregate([](const MetricsRow& r) { return r.limse; }, report.mean.limse, report.stddev.limse);
  return report;
}

void write_metrics_csv(std::ostream& os, const MetricsReport& report) {
  os << "id,nmae,mse,psnr,ssim,linmae,limse\n";
  auto emit = [&os](const MetricsRow& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.id.c_str(),
                  r.nmae, r.mse, r.psnr, r.ssim, r.linmae, r.limse);
    os << buf;
  };
  for (const auto& r : report.rows) emit(r);
  emit(report.mean);
  emit(report.stddev);
}

}  // namespace lip
