#include "protograde/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "protograde/errors.hpp"

namespace protograde::pgm {
namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string token(const std::vector<char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string t;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t += bytes[pos++];
  return t;
}

std::size_t header_number(const std::vector<char>& bytes, std::size_t& pos, const std::filesystem::path& path,
                          const char* what) {
  const std::string t = token(bytes, pos);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw DataError(path.string() + ": bad PGM " + what + " '" + t + "'");
  return std::stoul(t);
}

}  // namespace

Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (token(bytes, pos) != "P5") throw DataError(path.string() + ": not a binary PGM (expected magic P5)");
  Image img;
  img.width = header_number(bytes, pos, path, "width");
  img.height = header_number(bytes, pos, path, "height");
  const std::size_t maxval = header_number(bytes, pos, path, "maxval");
  if (img.width == 0 || img.height == 0) throw DataError(path.string() + ": PGM has a zero dimension");
  if (maxval != 255) throw DataError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = img.width * img.height;
  if (bytes.size() < pos + n) throw DataError(path.string() + ": PGM raster is truncated");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

void write(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.height * image.width) throw ShapeError("PGM pixel count does not match dims");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<double> normalized(const Image& image) {
  std::vector<double> v(image.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = image.pixels[i] / 255.0;
  return v;
}

Image from_unit(std::size_t height, std::size_t width, const std::vector<double>& values) {
  if (values.size() != height * width) throw ShapeError("value count does not match image dims");
  Image img{height, width, std::vector<std::uint8_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
  return img;
}

}  // namespace protograde::pgm
