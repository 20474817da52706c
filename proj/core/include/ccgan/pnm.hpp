#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ccgan {

/// 8-bit raster with 1 (PGM/P5) or 3 (PPM/P6) interleaved channels.
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, channels interleaved
};

/// Writes binary PGM (1 channel) or PPM (3 channels): "P5\n<w> <h>\n255\n" + bytes.
void write_pnm(const std::filesystem::path& path, const Raster& raster);
Raster read_pnm(const std::filesystem::path& path);

}  // namespace ccgan
