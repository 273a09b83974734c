#include "lip/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace lip {

namespace {

constexpr char kMagic[4] = {'L', 'I', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("container: truncated while reading " + what);
  return v;
}

}  // namespace

void write_container(const std::string& path, const std::vector<ContainerEntry>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("container: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  os.put(char(kVersion));
  if (entries.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw IoError("container: too many entries");
  }
  write_u32(os, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    write_u32(os, std::uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    os.put(char(e.dtype));
    const Shape& s = e.tensor.shape();
    write_u32(os, std::uint32_t(s.size()));
    for (std::size_t ext : s) write_u32(os, std::uint32_t(ext));
    if (e.dtype == Dtype::kF64) {
      os.write(reinterpret_cast<const char*>(e.tensor.data()),
               std::streamsize(e.tensor.size() * sizeof(double)));
    } else {
      std::vector<float> buf(e.tensor.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = float(e.tensor[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               std::streamsize(buf.size() * sizeof(float)));
    }
  }
  if (!os) throw IoError("container: write to '" + path + "' failed");
}

std::vector<ContainerEntry> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("container: cannot open '" + path + "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("container: '" + path + "' is not a LIPT file (bad magic)");
  }
  const int version = is.get();
  if (version != kVersion) {
    throw IoError("container: '" + path + "' has unsupported version " +
                  std::to_string(version));
  }
  const std::uint32_t count = read_u32(is, "entry count");
  std::vector<ContainerEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ContainerEntry e;
    const std::uint32_t name_len = read_u32(is, "name length");
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const int dtype = is.get();
    if (!is) throw IoError("container: truncated entry header in '" + path + "'");
    if (dtype != int(Dtype::kF64) && dtype != int(Dtype::kF32)) {
      throw IoError("container: unknown dtype code " + std::to_string(dtype));
    }
    e.dtype = Dtype(dtype);
    const std::uint32_t rank = read_u32(is, "rank");
    Shape shape(rank);
    for (auto& ext : shape) ext = read_u32(is, "extent");
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    if (e.dtype == Dtype::kF64) {
      is.read(reinterpret_cast<char*>(data.data()), std::streamsize(n * sizeof(double)));
    } else {
      std::vector<float> buf(n);
      is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * sizeof(float)));
      for (std::size_t j = 0; j < n; ++j) data[j] = double(buf[j]);
    }
    if (!is) throw IoError("container: truncated payload in '" + path + "'");
    e.tensor = Tensor(std::move(shape), std::move(data));
    entries.push_back(std::move(e));
  }
  return entries;
}

const ContainerEntry& find_entry(const std::vector<ContainerEntry>& entries,
                                 const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw IoError("container: missing entry '" + name + "'");
}

bool has_entry(const std::vector<ContainerEntry>& entries, const std::string& name) {
  for (const auto& e : entries) {
    if (e.name == name) return true;
  }
  return false;
}

}  // namespace lip
