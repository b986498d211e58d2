#pragma once

// Random output augmentation (scale, translate, brightness, contrast on the
// composited image) and projection-augmentation sampling.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "active/geometry.hpp"
#include "active/image.hpp"
#include "active/tensor.hpp"

namespace active {

struct DigitalTransformSet {
  double brightness_delta = 0.25;  ///< b in [-delta, delta], additive
  double contrast_min = 0.75, contrast_max = 1.5;
  double scale_min = 0.25, scale_max = 1.0;

  void validate() const {
    if (brightness_delta < 0.0) throw std::invalid_argument("brightness range must be non-negative");
    if (!(contrast_min > 0.0) || contrast_max < contrast_min) throw std::invalid_argument("bad contrast range");
    if (!(scale_min > 0.0) || scale_max < scale_min) throw std::invalid_argument("bad ROA scale range");
    if (scale_max > 1.0) throw std::invalid_argument("ROA scale above 1 would exceed the canvas");
  }
};

/// One drawn ROA transform; enough to replay it on images, masks and boxes.
struct RoaRecord {
  int canvas_h = 0, canvas_w = 0;
  int scaled_h = 0, scaled_w = 0;
  int offset_y = 0, offset_x = 0;
  double contrast = 1.0;
  double brightness = 0.0;

  static RoaRecord identity(int h, int w) { return {h, w, h, w, 0, 0, 1.0, 0.0}; }

  int source_row(int r) const {
    return std::min(static_cast<int>(std::floor((r - offset_y + 0.5) * canvas_h / scaled_h)), canvas_h - 1);
  }
  int source_col(int c) const {
    return std::min(static_cast<int>(std::floor((c - offset_x + 0.5) * canvas_w / scaled_w)), canvas_w - 1);
  }
  bool inside(int r, int c) const {
    return r >= offset_y && r < offset_y + scaled_h && c >= offset_x && c < offset_x + scaled_w;
  }

  /// Flat source pixel per output pixel, -1 on the canvas fill.
  std::vector<std::int64_t> source_map() const {
    std::vector<std::int64_t> src(static_cast<std::size_t>(canvas_h) * canvas_w, -1);
    for (int r = 0; r < canvas_h; ++r)
      for (int c = 0; c < canvas_w; ++c)
        if (inside(r, c))
          src[static_cast<std::size_t>(r) * canvas_w + c] =
              static_cast<std::int64_t>(source_row(r)) * canvas_w + source_col(c);
    return src;
  }
};

inline constexpr double kCanvasFill = 0.5;

inline RoaRecord sample_roa(const DigitalTransformSet& td, int height, int width, std::mt19937_64& rng) {
  td.validate();
  RoaRecord rec;
  rec.canvas_h = height;
  rec.canvas_w = width;
  const double s = td.scale_min == td.scale_max ? td.scale_min : uniform(rng, td.scale_min, td.scale_max);
  rec.scaled_h = std::clamp(static_cast<int>(std::lround(height * s)), 1, height);
  rec.scaled_w = std::clamp(static_cast<int>(std::lround(width * s)), 1, width);
  rec.offset_y = std::uniform_int_distribution<int>(0, height - rec.scaled_h)(rng);
  rec.offset_x = std::uniform_int_distribution<int>(0, width - rec.scaled_w)(rng);
  rec.contrast = td.contrast_min == td.contrast_max ? td.contrast_min : uniform(rng, td.contrast_min, td.contrast_max);
  rec.brightness = td.brightness_delta > 0.0 ? uniform(rng, -td.brightness_delta, td.brightness_delta) : 0.0;
  return rec;
}

/// Replays a recorded transform on image [H,W,C]:
/// nearest resize onto a gray canvas, then clamp(c*x + 0.5*(1-c) + b, 0, 1).
inline Tensor apply_roa(const Tensor& image, const RoaRecord& rec) {
  if (image.rank() != 3 || static_cast<int>(image.dim(0)) != rec.canvas_h || static_cast<int>(image.dim(1)) != rec.canvas_w)
    throw ShapeError("roa: image " + shape_string(image.shape()) + " does not match the recorded canvas");
  if (rec.scaled_h > rec.canvas_h || rec.scaled_w > rec.canvas_w)
    throw std::invalid_argument("roa: scaled image exceeds the canvas");
  const bool geometric = rec.scaled_h != rec.canvas_h || rec.scaled_w != rec.canvas_w || rec.offset_x || rec.offset_y;
  Tensor x = geometric ? gather_pixels(image, rec.source_map(), image.dim(0), image.dim(1), kCanvasFill) : image;
  if (rec.contrast != 1.0 || rec.brightness != 0.0)
    x = clamp(add(mul(x, rec.contrast), 0.5 * (1.0 - rec.contrast) + rec.brightness), 0.0, 1.0);
  return x;
}

struct RoaResult {
  Tensor image;
  RoaRecord record;
};

inline RoaResult roa(const Tensor& image, const DigitalTransformSet& td, std::mt19937_64& rng) {
  const auto rec = sample_roa(td, static_cast<int>(image.dim(0)), static_cast<int>(image.dim(1)), rng);
  return {apply_roa(image, rec), rec};
}

/// Replays the geometric part of a transform on a binary mask (fill 0).
inline Mask apply_roa(const Mask& mask, const RoaRecord& rec) {
  if (mask.size() != static_cast<std::size_t>(rec.canvas_h) * rec.canvas_w)
    throw std::invalid_argument("roa: mask does not match the recorded canvas");
  const auto src = rec.source_map();
  Mask out(src.size(), 0);
  for (std::size_t p = 0; p < src.size(); ++p) out[p] = src[p] >= 0 && mask[static_cast<std::size_t>(src[p])];
  return out;
}

/// Box of the pixels whose source lies inside `box` (pixel-aligned boxes map
/// exactly onto the resampled mask's bounding box).
inline Box transform_box(const Box& box, const RoaRecord& rec) {
  const int c0 = static_cast<int>(std::ceil(box.x_min)), c1 = static_cast<int>(std::ceil(box.x_max)) - 1;
  const int r0 = static_cast<int>(std::ceil(box.y_min)), r1 = static_cast<int>(std::ceil(box.y_max)) - 1;
  int x0 = rec.canvas_w, x1 = -1, y0 = rec.canvas_h, y1 = -1;
  for (int c = rec.offset_x; c < rec.offset_x + rec.scaled_w; ++c) {
    const int s = rec.source_col(c);
    if (s >= c0 && s <= c1) {
      x0 = std::min(x0, c);
      x1 = std::max(x1, c);
    }
  }
  for (int r = rec.offset_y; r < rec.offset_y + rec.scaled_h; ++r) {
    const int s = rec.source_row(r);
    if (s >= r0 && s <= r1) {
      y0 = std::min(y0, r);
      y1 = std::max(y1, r);
    }
  }
  if (x1 < 0 || y1 < 0) return Box{};
  return Box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)};
}

/// Shift range is in tile periods; scale factor is 1 + s with s in
/// [-scale_delta, scale_delta].
struct ProjectionAugRanges {
  double shift = 0.5;
  double scale_delta = 0.25;
};

inline ProjectionAugmentation sample_projection_aug(std::mt19937_64& rng, const ProjectionAugRanges& ranges = {}) {
  ProjectionAugmentation aug;
  for (auto& s : aug.shift) s = ranges.shift > 0.0 ? uniform(rng, -ranges.shift, ranges.shift) : 0.0;
  aug.scale = 1.0 + (ranges.scale_delta > 0.0 ? uniform(rng, -ranges.scale_delta, ranges.scale_delta) : 0.0);
  return aug;
}

}  // namespace active
