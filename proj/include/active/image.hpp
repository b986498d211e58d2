#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/tensor.hpp"

namespace active {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<double, 3>;

/// Dense row-major H x W x C image with values nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int r, int c, int ch) {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  double at(int r, int c, int ch) const {
    return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  bool same_extent(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  Tensor to_tensor(bool requires_grad = false) const {
    return Tensor({static_cast<std::size_t>(height), static_cast<std::size_t>(width),
                   static_cast<std::size_t>(channels)},
                  pixels, requires_grad);
  }
  /// Accepts [H,W,C] or [1,H,W,C].
  static Image from_tensor(const Tensor& t) {
    const auto& s = t.shape();
    std::size_t off = 0;
    if (s.size() == 4 && s[0] == 1) off = 1;
    else if (s.size() != 3) throw ShapeError("Image::from_tensor: unsupported shape " + shape_string(s));
    Image img(static_cast<int>(s[off]), static_cast<int>(s[off + 1]), static_cast<int>(s[off + 2]));
    img.pixels.assign(t.data().begin(), t.data().end());
    return img;
  }
};

/// Binary per-pixel mask, row-major.
using Mask = std::vector<std::uint8_t>;

/// Axis-aligned pixel rectangle (x_min, y_min, x_max, y_max); max is exclusive.
struct Box {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool operator==(const Box&) const = default;
};

/// Tight bounding box of the set pixels, or an invalid box when empty.
inline Box mask_bbox(const Mask& mask, int height, int width) {
  int r0 = height, r1 = -1, c0 = width, c1 = -1;
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (mask[static_cast<std::size_t>(r) * width + c]) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return Box{};
  return Box{static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 + 1),
             static_cast<double>(r1 + 1)};
}

/// Independent RNG stream for (seed, a, b, c); used so every sample draws from
/// its own generator regardless of evaluation order.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                                   std::uint64_t c = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace active
