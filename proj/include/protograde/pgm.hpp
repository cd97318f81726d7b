#pragma once

// Binary 8-bit greyscale PGM ("P5", maxval 255).

#include <cstdint>
#include <filesystem>
#include <vector>

namespace protograde::pgm {

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Throws DataError on missing files or malformed headers.
Image read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Image& image);

/// Pixel values scaled to [0, 1].
std::vector<double> normalized(const Image& image);
/// Values clamped to [0, 1] and quantised to 0..255.
Image from_unit(std::size_t height, std::size_t width, const std::vector<double>& values);

}  // namespace protograde::pgm
