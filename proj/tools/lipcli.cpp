// Command-line driver: phantom generation, two-arm training, evaluation,
// sinogram dumps and gradient verification. Exit codes: 0 success, 1 usage or
// configuration error, 2 runtime fault.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lip/config_file.hpp"
#include "lip/container.hpp"
#include "lip/gradcheck.hpp"
#include "lip/metrics.hpp"
#include "lip/pgm.hpp"
#include "lip/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lip;

namespace {

struct TrainSettings {
  UNetConfig net;
  TrainConfig train;
  NormalizationConfig norm;
};

// Flat key/value config mirroring TrainConfig, UNetConfig and the
// normalization constants. Unknown keys are rejected with their line number.
TrainSettings load_train_settings(const std::string& path) {
  TrainSettings s;
  if (path.empty()) return s;
  KeyValueFile kv = KeyValueFile::parse_file(path);
  kv.get("epochs", s.train.epochs);
  kv.get("patches_per_epoch", s.train.patches_per_epoch);
  kv.get("patch_extent", s.train.patch_extent);
  kv.get("batch_size", s.train.batch_size);
  kv.get("learning_rate", s.train.learning_rate);
  kv.get("lr_decay", s.train.lr_decay);
  kv.get("lambda1", s.train.weights.lambda1);
  kv.get("lambda2", s.train.weights.lambda2);
  kv.get("angle_count", s.train.angle_count);
  kv.get("seed", s.train.seed);
  std::string arm;
  kv.get("arm", arm);
  if (!arm.empty()) {
    if (arm == "im") {
      s.train.arm = Arm::kIm;
    } else if (arm == "lip") {
      s.train.arm = Arm::kImLip;
    } else {
      throw ConfigError(path + ": key 'arm' must be 'im' or 'lip', got '" + arm + "'");
    }
  }
  kv.get("spatial_rank", s.net.spatial_rank);
  kv.get("levels", s.net.levels);
  kv.get("base_channels", s.net.base_channels);
  kv.get("kernel_extent", s.net.kernel_extent);
  kv.get("dropout_rate", s.net.dropout_rate);
  kv.get("sigma", s.norm.sigma);
  kv.get("mu_scale", s.norm.mu_scale);
  kv.finish();
  return s;
}

DatasetRanges load_ranges(const std::string& path) {
  DatasetRanges r;
  if (path.empty()) return r;
  KeyValueFile kv = KeyValueFile::parse_file(path);
  kv.get("extent", r.extent);
  kv.get("voxel_width_cm", r.voxel_width_cm);
  kv.get("body_semi_lo", r.body_semi_lo);
  kv.get("body_semi_hi", r.body_semi_hi);
  kv.get("extra_organs_lo", r.extra_organs_lo);
  kv.get("extra_organs_hi", r.extra_organs_hi);
  kv.get("mu_noise_std", r.noise.mu_noise_std);
  kv.get("mu_noise_corr", r.noise.mu_noise_corr);
  kv.get("mu_blur_sigma", r.noise.mu_blur_sigma);
  kv.get("lambda_bias_amp", r.noise.lambda_bias_amp);
  kv.get("lambda_noise_level", r.noise.lambda_noise_level);
  kv.finish();
  return r;
}

int cmd_gen_data(std::size_t n, const std::string& out, std::uint64_t seed,
                 const std::string& ranges_path) {
  const DatasetRanges ranges = load_ranges(ranges_path);
  const auto samples = make_dataset(n, ranges, seed);
  write_dataset(out, samples, seed);
  std::printf("wrote %zu samples to %s\n", samples.size(), out.c_str());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& arm, const std::string& config,
              const std::string& out) {
  TrainSettings s = load_train_settings(config);
  if (!arm.empty()) {
    if (arm == "im") {
      s.train.arm = Arm::kIm;
    } else if (arm == "lip") {
      s.train.arm = Arm::kImLip;
    } else {
      throw ConfigError("--arm must be 'im' or 'lip', got '" + arm + "'");
    }
  }
  const auto data = read_dataset(data_dir);
  TrainResult result = train_model(data, s.net, s.train, s.norm, out);
  std::printf("trained %zu steps; checkpoint at %s/checkpoint.lipt\n", result.rows.size(),
              out.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             std::size_t angle_count, const std::string& out, bool truth_as_pred,
             bool dump_pgm, std::size_t patch, std::size_t stride) {
  const auto data = read_dataset(data_dir);
  fs::create_directories(out);

  NormalizationConfig norm;
  UNetParams params;
  if (!truth_as_pred) {
    Checkpoint ck = load_checkpoint(checkpoint_path);
    params = std::move(ck.params);
    if (ck.extra.count("sigma")) norm.sigma = ck.extra.at("sigma");
    if (ck.extra.count("mu_scale")) norm.mu_scale = ck.extra.at("mu_scale");
  }

  std::vector<ImageVolume> preds, truths;
  for (std::size_t i = 0; i < data.size(); ++i) {
    truths.push_back(data[i].mu_truth);
    if (truth_as_pred) {
      preds.push_back(data[i].mu_truth);
    } else {
      const std::size_t extent = data[i].mu_truth.values.extent(0);
      const std::size_t p = patch == 0 ? extent : patch;
      const std::size_t st = stride == 0 ? p : stride;
      preds.push_back(infer_stitched(params, data[i], norm, p, st));
    }
    if (dump_pgm) {
      char name[64];
      std::snprintf(name, sizeof name, "truth_%04zu.pgm", i);
      write_pgm((fs::path(out) / name).string(), truths.back().values);
      std::snprintf(name, sizeof name, "pred_%04zu.pgm", i);
      write_pgm((fs::path(out) / name).string(), preds.back().values);
      std::snprintf(name, sizeof name, "diff_%04zu.pgm", i);
      write_pgm((fs::path(out) / name).string(),
                preds.back().values - truths.back().values);
    }
  }

  const AngleSet angles = AngleSet::uniform(angle_count);
  const MetricsReport report = evaluate_report(preds, truths, angles);
  std::ofstream csv(fs::path(out) / "metrics.csv", std::ios::trunc);
  if (!csv) throw IoError("eval: cannot write metrics CSV in '" + out + "'");
  write_metrics_csv(csv, report);
  std::printf("mean nmae %.6g  linmae %.6g  limse %.6g (%zu volumes)\n", report.mean.nmae,
              report.mean.linmae, report.mean.limse, report.rows.size());
  return 0;
}

int cmd_project(const std::string& image_path, std::size_t angle_count, const std::string& out) {
  const auto entries = read_container(image_path);
  const Tensor& image = has_entry(entries, "image") ? find_entry(entries, "image").tensor
                        : has_entry(entries, "mu_truth") ? find_entry(entries, "mu_truth").tensor
                                                         : entries.front().tensor;
  double width = 1.0;
  if (has_entry(entries, "voxel_width")) width = find_entry(entries, "voxel_width").tensor[0];

  const AngleSet angles = AngleSet::uniform(angle_count);
  fs::create_directories(out);
  Tensor sinogram(Shape{angles.count(), image.extent(image.rank() - 1)});
  for (std::size_t k = 0; k < angles.count(); ++k) {
    const Projection p = project(image, angles.angles()[k], width);
    if (p.values.rank() != 1) throw ShapeError("project: CLI sinogram dump expects 2D images");
    for (std::size_t i = 0; i < p.values.size(); ++i) sinogram.at(k, i) = p.values[i];
  }
  std::ofstream csv(fs::path(out) / "sinogram.csv", std::ios::trunc);
  if (!csv) throw IoError("project: cannot write CSV in '" + out + "'");
  char buf[64];
  for (std::size_t k = 0; k < sinogram.extent(0); ++k) {
    for (std::size_t i = 0; i < sinogram.extent(1); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", sinogram.at(k, i));
      csv << buf << (i + 1 == sinogram.extent(1) ? '\n' : ',');
    }
  }
  write_pgm((fs::path(out) / "sinogram.pgm").string(), sinogram);
  std::printf("wrote %zux%zu sinogram to %s\n", sinogram.extent(0), sinogram.extent(1),
              out.c_str());
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t size, bool corrupt) {
  GradCheckOptions options;
  options.seed = seed;
  options.size = size;
  options.corrupt = corrupt;
  const auto cases = run_gradcheck(options);
  double worst = 0.0;
  for (const auto& c : cases) {
    std::printf("%-22s max rel err %.3e  tol %.0e  %s\n", c.name.c_str(), c.max_rel_err, c.tol,
                c.pass ? "ok" : "FAIL");
    worst = std::max(worst, c.max_rel_err);
  }
  std::printf("worst %.3e over %zu checks\n", worst, cases.size());
  if (!all_pass(cases)) {
    std::fprintf(stderr, "gradcheck: failures listed above\n");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"line-integral projection loss toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  std::size_t gen_n = 1;
  std::string gen_out = "dataset";
  std::uint64_t gen_seed = 0;
  std::string gen_ranges;
  gen->add_option("--n", gen_n, "number of samples")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--spec-ranges", gen_ranges, "key/value file of randomization ranges");

  auto* train = app.add_subcommand("train", "train one arm on a dataset");
  std::string train_data, train_arm, train_config, train_out = "run";
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--arm", train_arm, "im | lip (overrides config)");
  train->add_option("--config", train_config, "key/value settings file");
  train->add_option("--out", train_out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string eval_ckpt, eval_data, eval_out = "eval";
  std::size_t eval_angles = 4, eval_patch = 0, eval_stride = 0;
  bool eval_truth_as_pred = false, eval_dump_pgm = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--angles", eval_angles, "projection angle count");
  eval->add_option("--out", eval_out, "output directory")->required();
  eval->add_option("--patch", eval_patch, "stitched-inference patch extent (0 = whole volume)");
  eval->add_option("--stride", eval_stride, "stitched-inference stride (0 = patch extent)");
  eval->add_flag("--truth-as-pred", eval_truth_as_pred,
                 "bypass the network and score the truth against itself");
  eval->add_flag("--dump-pgm", eval_dump_pgm, "write truth/prediction/difference PGMs");

  auto* proj = app.add_subcommand("project", "dump a sinogram of an image container");
  std::string proj_image, proj_out = "sinogram";
  std::size_t proj_angles = 4;
  proj->add_option("--image", proj_image, "tensor container with an image entry")->required();
  proj->add_option("--angles", proj_angles, "projection angle count");
  proj->add_option("--out", proj_out, "output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suite");
  std::uint64_t gc_seed = 1;
  std::size_t gc_size = 6;
  bool gc_corrupt = false;
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--size", gc_size, "base input extent");
  gc->add_flag("--corrupt", gc_corrupt, "test hook: corrupt one gradient to verify detection");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_n, gen_out, gen_seed, gen_ranges);
    if (train->parsed()) return cmd_train(train_data, train_arm, train_config, train_out);
    if (eval->parsed()) {
      if (!eval_truth_as_pred && eval_ckpt.empty()) {
        throw ConfigError("eval: --checkpoint is required unless --truth-as-pred is set");
      }
      return cmd_eval(eval_ckpt, eval_data, eval_angles, eval_out, eval_truth_as_pred,
                      eval_dump_pgm, eval_patch, eval_stride);
    }
    if (proj->parsed()) return cmd_project(proj_image, proj_angles, proj_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_size, gc_corrupt);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
