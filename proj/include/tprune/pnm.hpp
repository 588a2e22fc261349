#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tprune {

// 8-bit binary portable graymap (P5, 1 channel) or pixmap (P6, 3 channels).
struct Pixmap {
  int width = 0;
  int height = 0;
  int channels = 1;
  int maxval = 255;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

// Errors name the file: kFormat for malformed headers or short pixel data,
// kUnsupportedDepth for maxval > 255.
Pixmap read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Pixmap& image);

}  // namespace tprune
