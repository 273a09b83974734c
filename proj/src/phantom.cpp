#include "lip/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lip/rng.hpp"

namespace lip {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct OrganFrame {
  double ocy, ocx;  // absolute center in voxel coordinates
  double cos_t, sin_t;
  double inv_a, inv_b;  // 1 / semi axes
  double exponent;
};

OrganFrame frame_for(const OrganSpec& o, double grid_center) {
  const double rad = o.angle_deg * kPi / 180.0;
  return {grid_center + o.center_row, grid_center + o.center_col,
          std::cos(rad),  std::sin(rad),
          1.0 / o.semi_col, 1.0 / o.semi_row,
          o.exponent};
}

bool contains(const OrganFrame& f, double y, double x) {
  const double dy = y - f.ocy;
  const double dx = x - f.ocx;
  const double u = (dx * f.cos_t + dy * f.sin_t) * f.inv_a;
  const double v = (-dx * f.sin_t + dy * f.cos_t) * f.inv_b;
  if (f.exponent == 2.0) return u * u + v * v <= 1.0;
  return std::pow(std::fabs(u), f.exponent) + std::pow(std::fabs(v), f.exponent) <= 1.0;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[std::size_t(i + radius)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    sum += k[std::size_t(i + radius)];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 2) throw ShapeError("gaussian_blur: expected a 2D image");
  if (sigma <= 0.0) return image;
  const auto k = gaussian_kernel(sigma);
  const int radius = int(k.size() / 2);
  const std::size_t H = image.extent(0), W = image.extent(1);
  Tensor tmp(image.shape()), out(image.shape());
  // rows
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const std::ptrdiff_t xx = std::ptrdiff_t(x) + j;
        if (xx >= 0 && xx < std::ptrdiff_t(W)) acc += k[std::size_t(j + radius)] * image.at(y, std::size_t(xx));
      }
      tmp.at(y, x) = acc;
    }
  }
  // columns
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const std::ptrdiff_t yy = std::ptrdiff_t(y) + j;
        if (yy >= 0 && yy < std::ptrdiff_t(H)) acc += k[std::size_t(j + radius)] * tmp.at(std::size_t(yy), x);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

void PhantomSpec::validate() const {
  if (extent < 8) throw ConfigError("PhantomSpec: extent too small");
  if (voxel_width_cm <= 0.0) throw ConfigError("PhantomSpec: voxel width must be positive");
  const double inscribed = (double(extent) - 1.0) / 2.0;
  for (const OrganSpec& o : organs) {
    if (!(o.mu >= 0.0 && o.mu <= kMuMax)) {
      throw ConfigError("PhantomSpec: organ mu must lie in [0, " + std::to_string(kMuMax) + "]");
    }
    if (o.activity < 0.0) throw ConfigError("PhantomSpec: activity must be >= 0");
    if (o.semi_row <= 0.0 || o.semi_col <= 0.0) {
      throw ConfigError("PhantomSpec: organ semi-axes must be positive");
    }
    const double reach = std::hypot(o.center_row, o.center_col) + std::max(o.semi_row, o.semi_col);
    if (reach > inscribed) {
      throw ConfigError("PhantomSpec: organ support extends outside the inscribed disk");
    }
  }
}

TruthPair generate_truth(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t n = spec.extent;
  const double gc = (double(n) - 1.0) / 2.0;
  std::vector<OrganFrame> frames;
  frames.reserve(spec.organs.size());
  for (const auto& o : spec.organs) frames.push_back(frame_for(o, gc));

  Tensor mu(Shape{n, n}), act(Shape{n, n});
  // 4x4 subsamples per voxel; fractional coverage at organ boundaries.
  static constexpr double kOffsets[4] = {-0.375, -0.125, 0.125, 0.375};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double mu_acc = 0.0, act_acc = 0.0;
      for (double oy : kOffsets) {
        for (double ox : kOffsets) {
          const double py = double(y) + oy;
          const double px = double(x) + ox;
          for (std::size_t i = frames.size(); i-- > 0;) {  // painter: last wins
            if (contains(frames[i], py, px)) {
              mu_acc += spec.organs[i].mu;
              act_acc += spec.organs[i].activity;
              break;
            }
          }
        }
      }
      mu.at(y, x) = mu_acc / 16.0;
      act.at(y, x) = act_acc / 16.0;
    }
  }
  return {{std::move(mu), spec.voxel_width_cm}, {std::move(act), spec.voxel_width_cm}};
}

SamplePair degrade(const ImageVolume& mu_truth, const ImageVolume& lambda_truth,
                   const PhantomSpec& spec) {
  require_same_shape(mu_truth.values, lambda_truth.values, "degrade");
  const NoiseSpec& ns = spec.noise;
  std::mt19937_64 rng(mix_seed(spec.seed, 0xDE67));

  Tensor mu_in = gaussian_blur(mu_truth.values, ns.mu_blur_sigma);
  if (ns.mu_noise_std > 0.0) {
    Tensor noise = Tensor::random_normal(mu_truth.values.shape(), rng);
    noise = gaussian_blur(noise, ns.mu_noise_corr);
    // Rescale the correlated field to the requested standard deviation.
    const double m = noise.mean();
    double var = 0.0;
    for (std::size_t i = 0; i < noise.size(); ++i) var += (noise[i] - m) * (noise[i] - m);
    var /= double(noise.size());
    if (var > 0.0) {
      const double s = ns.mu_noise_std / std::sqrt(var);
      for (std::size_t i = 0; i < noise.size(); ++i) mu_in[i] += (noise[i] - m) * s;
    }
  }
  mu_in.clamp_min(0.0);

  Tensor lam = lambda_truth.values;
  if (ns.lambda_bias_amp > 0.0) {
    const double n = double(spec.extent);
    const double gc = (n - 1.0) / 2.0;
    std::uniform_real_distribution<double> ucenter(-0.25 * n, 0.25 * n);
    std::uniform_real_distribution<double> uwidth(n / 6.0, n / 3.0);
    std::uniform_real_distribution<double> uamp(-ns.lambda_bias_amp, ns.lambda_bias_amp);
    double cy[3], cx[3], w[3], a[3];
    for (int j = 0; j < 3; ++j) {
      cy[j] = gc + ucenter(rng);
      cx[j] = gc + ucenter(rng);
      w[j] = uwidth(rng);
      a[j] = uamp(rng);
    }
    const std::size_t H = lam.extent(0), W = lam.extent(1);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        double field = 1.0;
        for (int j = 0; j < 3; ++j) {
          const double d2 = (double(y) - cy[j]) * (double(y) - cy[j]) +
                            (double(x) - cx[j]) * (double(x) - cx[j]);
          field += a[j] * std::exp(-0.5 * d2 / (w[j] * w[j]));
        }
        lam.at(y, x) *= std::max(field, 0.2);
      }
    }
  }
  if (ns.lambda_noise_level > 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < lam.size(); ++i) {
      lam[i] *= 1.0 + ns.lambda_noise_level * gauss(rng);
    }
  }
  lam.clamp_min(0.0);

  SamplePair pair;
  pair.lambda_input = {std::move(lam), spec.voxel_width_cm};
  pair.mu_input = {std::move(mu_in), spec.voxel_width_cm};
  pair.mu_truth = mu_truth;
  return pair;
}

std::vector<SamplePair> make_dataset(std::size_t n, const DatasetRanges& ranges,
                                     std::uint64_t seed) {
  if (n == 0) throw ConfigError("make_dataset: sample count must be positive");
  std::vector<SamplePair> out;
  out.reserve(n);
  const double R = (double(ranges.extent) - 1.0) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t sample_seed = mix_seed(seed, i);
    std::mt19937_64 rng(mix_seed(sample_seed, 0x6E0));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

    PhantomSpec spec;
    spec.extent = ranges.extent;
    spec.voxel_width_cm = ranges.voxel_width_cm;
    spec.noise = ranges.noise;
    spec.seed = mix_seed(sample_seed, 0xA11);

    // Body: a soft-tissue superellipse filling most of the inscribed disk.
    OrganSpec body;
    body.center_row = in_range(-0.04, 0.04) * R;
    body.center_col = in_range(-0.04, 0.04) * R;
    body.semi_row = in_range(ranges.body_semi_lo, ranges.body_semi_hi) * R;
    body.semi_col = in_range(ranges.body_semi_lo, ranges.body_semi_hi) * R;
    body.angle_deg = in_range(0.0, 180.0);
    body.exponent = in_range(1.8, 2.6);
    body.mu = kMuSoftTissue * in_range(0.95, 1.05);
    body.activity = in_range(0.8, 1.2);
    spec.organs.push_back(body);

    const double body_reach = std::min(body.semi_row, body.semi_col);
    auto place_inside_body = [&](OrganSpec& o) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double margin = body_reach - std::max(o.semi_row, o.semi_col);
        if (margin <= 0.0) break;
        o.center_row = body.center_row + in_range(-0.8, 0.8) * margin;
        o.center_col = body.center_col + in_range(-0.8, 0.8) * margin;
        const double reach = std::hypot(o.center_row, o.center_col) +
                             std::max(o.semi_row, o.semi_col);
        if (reach <= 0.98 * R) return true;
      }
      return false;
    };

    // Cavity-like regions: clearly identifiable in the activity channel (low
    // uptake) but with an attenuation that varies widely across phantoms and
    // sits near the noise floor of the mu channel, so their regional mean
    // attenuation has to be read out of noisy evidence.
    const std::size_t cavities = uni(rng) < 0.6 ? 2 : 1;
    for (std::size_t j = 0; j < cavities; ++j) {
      OrganSpec cavity;
      cavity.semi_row = in_range(0.14, 0.3) * R;
      cavity.semi_col = in_range(0.14, 0.3) * R;
      cavity.angle_deg = in_range(0.0, 180.0);
      cavity.mu = in_range(0.045, 0.09);
      cavity.activity = in_range(0.1, 0.5);
      if (place_inside_body(cavity)) spec.organs.push_back(cavity);
    }

    std::uniform_int_distribution<std::size_t> ucount(ranges.extra_organs_lo,
                                                      ranges.extra_organs_hi);
    const std::size_t extra = ucount(rng);
    for (std::size_t j = 0; j < extra; ++j) {
      OrganSpec o;
      o.semi_row = in_range(0.06, 0.18) * R;
      o.semi_col = in_range(0.06, 0.18) * R;
      o.angle_deg = in_range(0.0, 180.0);
      const double roll = uni(rng);
      if (roll < 0.35) {  // bone
        o.mu = kMuBone * in_range(0.93, 1.05);
        o.activity = in_range(0.4, 1.0);
      } else if (roll < 0.65) {  // lung / air pocket
        o.mu = in_range(0.02, 0.05);
        o.activity = in_range(0.2, 0.8);
      } else {  // hot soft-tissue lesion
        o.mu = in_range(0.098, 0.115);
        o.activity = in_range(3.0, 8.0);
      }
      if (place_inside_body(o)) spec.organs.push_back(o);
    }

    TruthPair truth = generate_truth(spec);
    out.push_back(degrade(truth.mu_truth, truth.lambda_truth, spec));
  }
  return out;
}

}  // namespace lip
