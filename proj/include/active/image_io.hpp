#pragma once

// 8-bit PNG through libpng's simplified API, and the raw float64 grid format:
//   "DPTH" | u32 height | u32 width | u32 channels (0 means 1) | f64 data
// All little-endian, row-major, channels interleaved.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/checkpoint.hpp"
#include "active/image.hpp"

namespace active {

inline std::uint8_t quantize8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels only");
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize8(img.pixels[i]);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, tmp.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("writing " + path.string() + " failed: " + msg);
  }
  std::filesystem::rename(tmp, path);
}

inline void write_mask_png(const std::filesystem::path& path, const Mask& mask, int height, int width) {
  Image img(height, width, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 1.0 : 0.0;
  write_png(path, img);
}

/// Reads a PNG converted to `channels` (1 = gray, 3 = RGB) with values in [0,1].
inline Image read_png(const std::filesystem::path& path, int channels = 3) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(static_cast<int>(image.height), static_cast<int>(image.width), channels);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

inline Mask read_mask_png(const std::filesystem::path& path) {
  const Image img = read_png(path, 1);
  Mask m(img.pixels.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.pixels[i] > 0.5 ? 1 : 0;
  return m;
}

/// Raw float64 grid with the 16-byte "DPTH" header.
inline void write_raw(const std::filesystem::path& path, const Image& img) {
  io::atomic_write(path, [&](std::ostream& os) {
    os.write("DPTH", 4);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(img.height));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(img.width));
    io::put<std::uint32_t>(os, img.channels == 1 ? 0u : static_cast<std::uint32_t>(img.channels));
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
  });
}

inline Image read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open raw file " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DPTH", 4) != 0) throw std::runtime_error(path.string() + " is not a DPTH raw file");
  const auto h = io::get<std::uint32_t>(is);
  const auto w = io::get<std::uint32_t>(is);
  const auto c = io::get<std::uint32_t>(is);
  Image img(static_cast<int>(h), static_cast<int>(w), c == 0 ? 1 : static_cast<int>(c));
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
  if (!is) throw std::runtime_error("truncated raw file " + path.string());
  return img;
}

}  // namespace active
