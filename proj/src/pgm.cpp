#include "lip/pgm.hpp"

#include <cmath>
#include <fstream>

namespace lip {

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm: expected a 2D image");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("write_pgm: cannot open '" + path + "'");
  const std::size_t H = image.extent(0), W = image.extent(1);
  os << "P5\n" << W << ' ' << H << "\n255\n";
  const double lo = image.min();
  const double range = image.max() - lo;
  std::vector<unsigned char> row(W);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double v = range > 0.0 ? (image.at(y, x) - lo) / range : 0.0;
      row[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(W));
  }
  if (!os) throw IoError("write_pgm: write to '" + path + "' failed");
}

}  // namespace lip
