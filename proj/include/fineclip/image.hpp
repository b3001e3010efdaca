#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fineclip/error.hpp"

namespace fineclip {

/// Planar C×H×W image with values in [0, 1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  bool operator==(const Image&) const = default;
};

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  while (true) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (ch == ' ' || ch == '\n' || ch == '\r' || ch == '\t') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  std::size_t v = 0;
  if (!(in >> v)) throw ConfigError("malformed PNM header in " + path);
  return v;
}

inline std::uint8_t quantize(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

}  // namespace detail

/// Writes P6 (3 channels) or P5 (1 channel) with 8-bit samples.
inline void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw ConfigError("PNM output needs 1 or 3 channels, got " + std::to_string(img.channels));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<std::uint8_t> buf(img.pixels.size());
  std::size_t i = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) buf[i++] = detail::quantize(img.at(c, y, x));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6" && magic != "P5") throw ConfigError("unsupported image format in " + path);
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t w = detail::read_pnm_int(in, path);
  const std::size_t h = detail::read_pnm_int(in, path);
  const std::size_t maxval = detail::read_pnm_int(in, path);
  if (maxval != 255) throw ConfigError("only 8-bit PNM supported: " + path);
  in.get();
  std::vector<std::uint8_t> buf(channels * w * h);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw ConfigError("truncated image data in " + path);
  }
  Image img(channels, h, w);
  std::size_t i = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c) img.at(c, y, x) = buf[i++] / 255.0;
  return img;
}

}  // namespace fineclip
