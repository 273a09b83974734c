#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lip/container.hpp"
#include "lip/phantom.hpp"
#include "lip/rng.hpp"

namespace lip {

void write_sample(const std::string& path, const SamplePair& pair) {
  write_container(path, {{"lambda_input", pair.lambda_input.values, Dtype::kF64},
                         {"mu_input", pair.mu_input.values, Dtype::kF64},
                         {"mu_truth", pair.mu_truth.values, Dtype::kF64},
                         {"voxel_width", Tensor::scalar(pair.mu_truth.voxel_width_cm),
                          Dtype::kF64}});
}

SamplePair read_sample(const std::string& path) {
  const auto entries = read_container(path);
  const double w = find_entry(entries, "voxel_width").tensor[0];
  SamplePair pair;
  pair.lambda_input = {find_entry(entries, "lambda_input").tensor, w};
  pair.mu_input = {find_entry(entries, "mu_input").tensor, w};
  pair.mu_truth = {find_entry(entries, "mu_truth").tensor, w};
  return pair;
}

void write_dataset(const std::string& dir, const std::vector<SamplePair>& samples,
                   std::uint64_t master_seed) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(std::filesystem::path(dir) / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("write_dataset: cannot write manifest in '" + dir + "'");
  char name[64];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "sample_%04zu.lipt", i);
    write_sample((std::filesystem::path(dir) / name).string(), samples[i]);
    manifest << i << ' ' << name << ' ' << mix_seed(master_seed, i) << '\n';
  }
  if (!manifest) throw IoError("write_dataset: manifest write failed in '" + dir + "'");
}

std::vector<SamplePair> read_dataset(const std::string& dir) {
  const auto manifest_path = std::filesystem::path(dir) / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("read_dataset: cannot open '" + manifest_path.string() + "'");
  std::vector<SamplePair> samples;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t id = 0;
    std::string file;
    std::uint64_t seed = 0;
    if (!(row >> id >> file >> seed)) {
      throw IoError("read_dataset: malformed manifest record '" + line + "'");
    }
    samples.push_back(read_sample((std::filesystem::path(dir) / file).string()));
  }
  if (samples.empty()) throw IoError("read_dataset: manifest lists no samples");
  return samples;
}

}  // namespace lip
