#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "unite/model.hpp"

namespace unite {

/// Linear yellow (255,255,0) at 0 to blue (0,0,255) at 1.
std::array<std::uint8_t, 3> yellow_blue(double value);

/// Binary PPM (P6) through yellow_blue.
void write_ppm(const std::filesystem::path& path, const Heatmap& map);
/// Binary PGM (P5), 0 black to 1 white.
void write_pgm(const std::filesystem::path& path, const Heatmap& map);

struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads back P5/P6 files written above.
Image read_pnm(const std::filesystem::path& path);

}  // namespace unite
