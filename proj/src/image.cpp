#include "unite/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "unite/errors.hpp"

namespace unite {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void write_pnm(const std::filesystem::path& path, const Heatmap& map, bool color) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << (color ? "P6\n" : "P5\n") << map.width << ' ' << map.height << "\n255\n";
  for (double v : map.values) {
    if (color) {
      const auto rgb = yellow_blue(v);
      out.write(reinterpret_cast<const char*>(rgb.data()), 3);
    } else {
      const auto g = to_byte(v);
      out.write(reinterpret_cast<const char*>(&g), 1);
    }
  }
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace

std::array<std::uint8_t, 3> yellow_blue(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return {to_byte(1.0 - v), to_byte(1.0 - v), to_byte(v)};
}

void write_ppm(const std::filesystem::path& path, const Heatmap& map) { write_pnm(path, map, true); }
void write_pgm(const std::filesystem::path& path, const Heatmap& map) { write_pnm(path, map, false); }

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  Image img;
  in >> magic >> img.width >> img.height >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || !in) throw ParseError(path.string() + ": not a P5/P6 image", 0);
  in.get();
  img.channels = magic == "P6" ? 3 : 1;
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw ParseError(path.string() + ": truncated pixel data", static_cast<std::uint64_t>(in.gcount()));
  return img;
}

}  // namespace unite
