#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lip/metrics.hpp"
#include "lip/pipeline.hpp"

using namespace lip;

namespace {

std::vector<SamplePair> tiny_dataset(std::size_t n, std::uint64_t seed) {
  DatasetRanges ranges;
  ranges.extent = 16;
  return make_dataset(n, ranges, seed);
}

UNetConfig tiny_net() {
  UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  return cfg;
}

TrainConfig tiny_train() {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.patches_per_epoch = 10;
  cfg.patch_extent = 8;
  cfg.batch_size = 1;
  cfg.seed = 3;
  return cfg;
}

bool params_equal(UNetParams& a, UNetParams& b) {
  bool same = true;
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    if (!(a.blocks[i].kernel == b.blocks[i].kernel)) same = false;
    if (!(a.blocks[i].bn_scale == b.blocks[i].bn_scale)) same = false;
    if (!(a.blocks[i].bn_shift == b.blocks[i].bn_shift)) same = false;
    if (!(a.blocks[i].run_mean == b.blocks[i].run_mean)) same = false;
    if (!(a.blocks[i].run_var == b.blocks[i].run_var)) same = false;
  }
  return same && a.out_kernel == b.out_kernel;
}

}  // namespace

TEST_CASE("normalize: paper constants and channel layout") {
  SamplePair pair;
  pair.lambda_input = {Tensor::from({0.0, 5.0, 10.0, 2.5}).reshaped(Shape{2, 2}), 0.4};
  pair.mu_input = {Tensor::from({0.15, 0.075, 0.0, 0.3}).reshaped(Shape{2, 2}), 0.4};
  pair.mu_truth = {Tensor::from({0.15, 0.0, 0.096, 0.3}).reshaped(Shape{2, 2}), 0.4};
  NormalizationConfig cfg;  // sigma 5, mu_scale 0.15
  const NormalizedSample ns = normalize_pair(pair, cfg);
  REQUIRE(ns.input.shape() == Shape{2, 2, 2});
  CHECK(ns.input[0] == 0.0);                                      // tanh(0)
  CHECK(ns.input[1] == doctest::Approx(0.76159).epsilon(1e-4));   // tanh(1)
  CHECK(ns.input[1] == std::tanh(1.0));
  CHECK(ns.input[4] == 1.0);  // mu = 0.15 / 0.15
  CHECK(ns.input[5] == 0.5);
  CHECK(ns.truth[0] == 1.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(ns.input[i] >= 0.0);
    CHECK(ns.input[i] < 1.0);
  }
  CHECK_THROWS_AS(normalize_pair(pair, NormalizationConfig{0.0, 0.15}), ConfigError);
}

TEST_CASE("denormalize: inverse scaling, clamping, round trip") {
  NormalizationConfig cfg;
  const ImageVolume a = denormalize(Tensor::from({1.0}).reshaped(Shape{1, 1}), cfg, 0.4);
  CHECK(a.values[0] == doctest::Approx(0.15).epsilon(1e-15));
  const ImageVolume b = denormalize(Tensor::from({-0.1}).reshaped(Shape{1, 1}), cfg, 0.4);
  CHECK(b.values[0] == 0.0);
  // leading singleton channel axis is squeezed
  const ImageVolume c = denormalize(Tensor(Shape{1, 4, 4}, 0.5), cfg, 0.4);
  CHECK(c.values.shape() == Shape{4, 4});

  std::mt19937_64 rng(9);
  SamplePair pair;
  pair.mu_truth = {Tensor::random_uniform(Shape{8, 8}, rng, 0.0, 0.3), 0.4};
  pair.mu_input = pair.mu_truth;
  pair.lambda_input = {Tensor::random_uniform(Shape{8, 8}, rng, 0.0, 8.0), 0.4};
  const NormalizedSample ns = normalize_pair(pair, cfg);
  const ImageVolume back = denormalize(ns.truth, cfg, 0.4);
  for (std::size_t i = 0; i < back.values.size(); ++i) {
    CHECK(back.values[i] == doctest::Approx(pair.mu_truth.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("patch sampler: degenerate full-volume patch and determinism") {
  const auto data = tiny_dataset(2, 1);
  NormalizationConfig norm;
  std::vector<NormalizedSample> ns;
  for (const auto& pair : data) ns.push_back(normalize_pair(pair, norm));

  PatchSampler full(&ns, 16, 5);
  const Patch p = full.next();
  CHECK(p.input.shape() == Shape{2, 16, 16});
  CHECK(p.truth.shape() == Shape{16, 16});
  bool matched = false;
  for (const auto& s : ns) {
    if (p.truth == s.truth) matched = true;
  }
  CHECK(matched);

  PatchSampler a(&ns, 8, 7), b(&ns, 8, 7), c(&ns, 8, 8);
  bool all_same = true, any_diff = false;
  for (int i = 0; i < 20; ++i) {
    const Patch pa = a.next(), pb = b.next(), pc = c.next();
    if (!(pa.input == pb.input)) all_same = false;
    if (!(pa.input == pc.input)) any_diff = true;
  }
  CHECK(all_same);
  CHECK(any_diff);
  CHECK_THROWS_AS(PatchSampler(&ns, 32, 1), ConfigError);
}

TEST_CASE("patch sampler: rejection rule yields nonzero truth content") {
  const auto data = tiny_dataset(3, 11);
  NormalizationConfig norm;
  std::vector<NormalizedSample> ns;
  for (const auto& pair : data) ns.push_back(normalize_pair(pair, norm));
  PatchSampler sampler(&ns, 8, 13);
  for (int i = 0; i < 500; ++i) {
    const Patch p = sampler.next();
    bool nonzero = false;
    for (std::size_t j = 0; j < p.truth.size(); ++j) {
      if (p.truth[j] != 0.0) nonzero = true;
    }
    CHECK(nonzero);  // bodies cover the grid center, so air-only draws get rejected
  }
}

TEST_CASE("adam: zero gradients are a fixed point") {
  std::vector<double> params{1.0, -2.0, 3.0};
  std::vector<double> grads{0.0, 0.0, 0.0};
  AdamState state(3);
  adam_step(params, grads, state, 0.1);
  CHECK(params == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: first-step moments match the hand computation") {
  std::vector<double> params{0.5};
  std::vector<double> grads{2.0};
  AdamState state(1);
  adam_step(params, grads, state, 0.01);
  CHECK(state.m[0] == doctest::Approx((1.0 - 0.9) * 2.0).epsilon(1e-15));
  CHECK(state.v[0] == doctest::Approx((1.0 - 0.999) * 4.0).epsilon(1e-15));
  // bias-corrected step: mhat = g, vhat = g^2 -> update ~ lr * sign(g)
  CHECK(params[0] == doctest::Approx(0.5 - 0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: drives a scalar quadratic toward zero") {
  std::vector<double> w{1.0};
  AdamState state(1);
  for (int step = 0; step < 200; ++step) {
    std::vector<double> g{2.0 * w[0]};
    adam_step(w, g, state, 0.1);
  }
  CHECK(std::fabs(w[0]) < 1e-2);
}

TEST_CASE("adam: non-finite gradients raise a training fault") {
  std::vector<double> params{1.0};
  std::vector<double> grads{std::nan("")};
  AdamState state(1);
  CHECK_THROWS_AS(adam_step(params, grads, state, 0.1), TrainingFault);
}

TEST_CASE("train: smoke run emits checkpoint and per-step rows") {
  const auto data = tiny_dataset(2, 21);
  const auto dir = std::filesystem::temp_directory_path() / "lip_train_smoke";
  std::filesystem::remove_all(dir);
  TrainResult result = train_model(data, tiny_net(), tiny_train(), NormalizationConfig{},
                                   dir.string());
  CHECK(result.rows.size() == 10);
  CHECK(std::filesystem::exists(dir / "checkpoint.lipt"));
  std::ifstream csv(dir / "loss.csv");
  REQUIRE(csv.good());
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,epoch,l1,gdl,lip,total,lr");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 10);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train: reproducible and arm-equivalent at zero projection weight") {
  const auto data = tiny_dataset(2, 22);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 2;

  TrainResult a = train_model(data, tiny_net(), cfg, NormalizationConfig{});
  TrainResult b = train_model(data, tiny_net(), cfg, NormalizationConfig{});
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].total == b.rows[i].total);
  }
  CHECK(params_equal(a.params, b.params));

  TrainConfig im = cfg;
  im.arm = Arm::kIm;
  TrainConfig lip0 = cfg;
  lip0.arm = Arm::kImLip;
  lip0.weights.lambda2 = 0.0;
  TrainResult ra = train_model(data, tiny_net(), im, NormalizationConfig{});
  TrainResult rb = train_model(data, tiny_net(), lip0, NormalizationConfig{});
  REQUIRE(ra.rows.size() == rb.rows.size());
  for (std::size_t i = 0; i < ra.rows.size(); ++i) {
    CHECK(ra.rows[i].l1 == rb.rows[i].l1);
    CHECK(ra.rows[i].gdl == rb.rows[i].gdl);
    CHECK(ra.rows[i].lip == rb.rows[i].lip);
    CHECK(ra.rows[i].total == rb.rows[i].total);
  }
  CHECK(params_equal(ra.params, rb.params));
}

TEST_CASE("train: learning rate schedule is exactly lr0 * decay^epoch") {
  const auto data = tiny_dataset(1, 23);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 4;
  cfg.patches_per_epoch = 2;
  TrainResult r = train_model(data, tiny_net(), cfg, NormalizationConfig{});
  for (const LossRow& row : r.rows) {
    CHECK(row.lr == cfg.learning_rate * std::pow(cfg.lr_decay, double(row.epoch)));
  }
  CHECK(r.rows.front().lr == cfg.learning_rate);
}

TEST_CASE("train: one step changes at least 99% of the parameters") {
  const auto data = tiny_dataset(2, 24);
  TrainConfig cfg = tiny_train();
  cfg.epochs = 1;
  cfg.patches_per_epoch = 1;
  cfg.batch_size = 1;
  UNetConfig net = tiny_net();
  UNetParams before = init_params(net, cfg.seed);
  TrainResult r = train_model(data, net, cfg, NormalizationConfig{});
  std::size_t changed = 0, total = 0;
  std::vector<Tensor*> pa, pb;
  for_each_parameter(before, [&](const std::string&, Tensor& t) { pa.push_back(&t); });
  for_each_parameter(r.params, [&](const std::string&, Tensor& t) { pb.push_back(&t); });
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i]->size(); ++j) {
      ++total;
      if ((*pa[i])[j] != (*pb[i])[j]) ++changed;
    }
  }
  CHECK(double(changed) >= 0.99 * double(total));
}

TEST_CASE("train: config validation") {
  const auto data = tiny_dataset(1, 25);
  TrainConfig cfg = tiny_train();
  cfg.lr_decay = 1.5;
  CHECK_THROWS_AS(train_model(data, tiny_net(), cfg, NormalizationConfig{}), ConfigError);
  cfg = tiny_train();
  CHECK_THROWS_AS(train_model({}, tiny_net(), cfg, NormalizationConfig{}), ConfigError);
  cfg = tiny_train();
  cfg.patch_extent = 9;  // not divisible by the network factor 2
  CHECK_THROWS_AS(train_model(data, tiny_net(), cfg, NormalizationConfig{}), ConfigError);
}

TEST_CASE("stitch: identity function reproduces the input exactly") {
  std::mt19937_64 rng(31);
  Tensor vol = Tensor::random_uniform(Shape{2, 64, 64}, rng, 0.0, 1.0);
  const Tensor out = stitch_tiles(vol, {32, 32}, {16, 16}, [](const Tensor& p) { return p; });
  CHECK(out == vol);  // overlap counts are powers of two here
}

TEST_CASE("stitch: odd geometry stays within rounding of the identity") {
  std::mt19937_64 rng(32);
  Tensor vol = Tensor::random_uniform(Shape{1, 70, 70}, rng, 0.0, 1.0);
  const Tensor out = stitch_tiles(vol, {32, 32}, {16, 16}, [](const Tensor& p) { return p; });
  REQUIRE(out.shape() == vol.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i] == doctest::Approx(vol[i]).epsilon(1e-12));
  }
}

TEST_CASE("stitch: single full-volume tile is one function call") {
  std::mt19937_64 rng(33);
  Tensor vol = Tensor::random_uniform(Shape{1, 16, 16}, rng, 0.0, 1.0);
  int calls = 0;
  const Tensor out = stitch_tiles(vol, {16, 16}, {16, 16}, [&](const Tensor& p) {
    ++calls;
    return p;
  });
  CHECK(calls == 1);
  CHECK(out == vol);
}

TEST_CASE("stitch: validation errors") {
  Tensor vol(Shape{1, 16, 16});
  auto id = [](const Tensor& p) { return p; };
  CHECK_THROWS_AS(stitch_tiles(vol, {32, 32}, {16, 16}, id), ConfigError);  // patch > volume
  CHECK_THROWS_AS(stitch_tiles(vol, {8, 8}, {16, 16}, id), ConfigError);    // stride > patch
}

TEST_CASE("infer_stitched: output extents equal input extents, clamped physical units") {
  const auto data = tiny_dataset(1, 41);
  UNetConfig net = tiny_net();
  UNetParams params = init_params(net, 5);
  NormalizationConfig norm;
  const ImageVolume pred = infer_stitched(params, data[0], norm, 8, 4);
  CHECK(pred.values.shape() == data[0].mu_truth.values.shape());
  CHECK(pred.values.min() >= 0.0);
  CHECK(pred.voxel_width_cm == data[0].mu_truth.voxel_width_cm);
}
