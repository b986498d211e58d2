#pragma once

// Attack objective terms. All losses are scalar Tensors so they share one
// graph with the texture.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/detector.hpp"
#include "active/image.hpp"
#include "active/tensor.hpp"

namespace active {

/// Upper clamp for f_log's argument; the log loss diverges at 1.
inline constexpr double kLogLossEps = 1e-6;

/// -log(1 - n) with n clamped to [0, 1 - eps].
inline double f_log(double n) { return -std::log(1.0 - std::clamp(n, 0.0, 1.0 - kLogLossEps)); }

inline Tensor f_log(const Tensor& n) { return neg(log(1.0 - clamp(n, 0.0, 1.0 - kLogLossEps))); }

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.25;
  double gamma = 0.25;
  double iou_threshold = 0.5;

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw std::invalid_argument("loss weights must be non-negative");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) throw std::invalid_argument("IoU threshold must lie in (0,1)");
  }
};

/// 0/1 validity of each cell's box for one image: IoU with gt above t.
inline std::vector<double> valid_box_mask(const DetectorOutput& out, std::size_t image, const Box& gt, double t) {
  std::vector<double> valid(out.cells, 0.0);
  const auto b = out.boxes.data();
  for (std::size_t k = 0; k < out.cells; ++k) {
    const std::size_t i = (image * out.cells + k) * 4;
    valid[k] = iou(Box{b[i], b[i + 1], b[i + 2], b[i + 3]}, gt) > t ? 1.0 : 0.0;
  }
  return valid;
}

/// Per-cell detection scores h_d = max_y h_c * h_o for one image, zeroed for
/// boxes whose IoU with gt does not exceed t. Returns a [cells] tensor.
inline Tensor valid_detection_scores(const DetectorOutput& out, std::size_t image, const Box& gt, double t) {
  if (out.cells == 0) throw std::invalid_argument("stealth loss: empty detection list");
  const Tensor conf = slice(out.class_conf, 0, image, image + 1);
  const Tensor obj = reshape(slice(out.objectness, 0, image, image + 1), {out.cells});
  const Tensor class_max = reshape(max(conf, {2}), {out.cells});
  return mul(mul(class_max, obj), Tensor({out.cells}, valid_box_mask(out, image, gt, t)));
}

/// f_log of the largest valid detection score in image `image`.
inline Tensor stealth_loss(const DetectorOutput& out, std::size_t image, const Box& gt, double t) {
  return f_log(max(valid_detection_scores(out, image, gt, t)));
}

/// Log-penalised differences between each texel and its lower and right
/// neighbours over rows 0..H-2 and columns 0..W-2, f_log per channel, scaled
/// by 1/((H-1)(W-1)). Texture is [H,W,C].
inline Tensor smooth_loss(const Tensor& texture) {
  if (texture.rank() != 3 || texture.dim(0) < 2 || texture.dim(1) < 2)
    throw std::invalid_argument("smooth_loss: texture must be [H,W,C] with H,W >= 2, got " +
                                shape_string(texture.shape()));
  const std::size_t H = texture.dim(0), W = texture.dim(1);
  const Tensor top = slice(texture, 0, 0, H - 1);
  const Tensor bottom = slice(texture, 0, 1, H);
  const Tensor center = slice(top, 1, 0, W - 1);
  const Tensor below = slice(bottom, 1, 0, W - 1);
  const Tensor right = slice(top, 1, 1, W);
  const Tensor vertical = f_log(abs(sub(center, below)));
  const Tensor horizontal = f_log(abs(sub(center, right)));
  return mul(sum(add(vertical, horizontal)), 1.0 / static_cast<double>((H - 1) * (W - 1)));
}

struct DominantColorSet {
  std::vector<Rgb> colors;
  std::string source;

  void validate() const {
    if (colors.empty()) throw std::invalid_argument("dominant color set is empty");
    for (const auto& c : colors)
      for (double v : c)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dominant colors must lie in [0,1]");
  }
};

/// k lines of "r g b".
inline void write_colors(const std::filesystem::path& path, const DominantColorSet& set) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write color file " + path.string());
  os.precision(17);
  for (const auto& c : set.colors) os << c[0] << ' ' << c[1] << ' ' << c[2] << '\n';
}

inline DominantColorSet read_colors(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read color file " + path.string());
  DominantColorSet set;
  set.source = path.string();
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Rgb c{};
    if (!(ls >> c[0] >> c[1] >> c[2])) throw std::runtime_error("malformed color line '" + line + "' in " + path.string());
    set.colors.push_back(c);
  }
  set.validate();
  return set;
}

namespace detail {

inline double sq_dist(const Rgb& a, const Rgb& b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

}  // namespace detail

/// Within-cluster sum of squared distances for the given centroids.
inline double kmeans_sse(const std::vector<Rgb>& pixels, const std::vector<Rgb>& centroids) {
  double sse = 0.0;
  for (const auto& p : pixels) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centroids) best = std::min(best, detail::sq_dist(p, c));
    sse += best;
  }
  return sse;
}

/// Lloyd's k-means with k-means++ seeding over RGB pixels. Stops when no
/// centroid moves by 1e-6 or after 100 iterations. Centroids come back sorted
/// by cluster size, largest first.
inline std::vector<Rgb> kmeans(const std::vector<Rgb>& pixels, int k, std::uint64_t seed = 0) {
  if (pixels.empty()) throw std::invalid_argument("k-means: empty pixel set");
  if (k < 1 || static_cast<std::size_t>(k) > pixels.size())
    throw std::invalid_argument("k-means: k must be in [1, pixel count]");
  std::mt19937_64 rng(seed);
  std::vector<Rgb> centroids;
  centroids.push_back(pixels[std::uniform_int_distribution<std::size_t>(0, pixels.size() - 1)(rng)]);
  std::vector<double> d2(pixels.size(), std::numeric_limits<double>::infinity());
  while (centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(pixels[i], centroids.back()));
      total += d2[i];
    }
    if (total <= 0.0) {
      // Fewer distinct colours than k: duplicate the last centroid.
      centroids.push_back(centroids.back());
      continue;
    }
    double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = pixels.size() - 1;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      target -= d2[i];
      if (target < 0.0) {
        pick = i;
        break;
      }
    }
    centroids.push_back(pixels[pick]);
  }

  std::vector<std::size_t> assign(pixels.size(), 0), counts(centroids.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = detail::sq_dist(pixels[i], centroids[c]);
        if (d < best) {
          best = d;
          assign[i] = c;
        }
      }
    }
    // Means are accumulated as offsets from each cluster's first member, so a
    // cluster of identical pixels lands on that colour exactly.
    std::vector<Rgb> sums(centroids.size(), Rgb{0, 0, 0});
    std::vector<std::size_t> first(centroids.size(), pixels.size());
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const std::size_t c = assign[i];
      if (first[c] == pixels.size()) first[c] = i;
      for (int ch = 0; ch < 3; ++ch) sums[c][ch] += pixels[i][ch] - pixels[first[c]][ch];
      ++counts[c];
    }
    double moved = 0.0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      Rgb next;
      for (int ch = 0; ch < 3; ++ch)
        next[ch] = pixels[first[c]][ch] + sums[c][ch] / static_cast<double>(counts[c]);
      moved = std::max(moved, std::sqrt(detail::sq_dist(next, centroids[c])));
      centroids[c] = next;
    }
    if (moved < 1e-6) break;
  }
  std::vector<std::size_t> order(centroids.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  std::vector<Rgb> sorted;
  for (auto i : order) sorted.push_back(centroids[i]);
  return sorted;
}

/// Dominant colours of the background pixels pooled across images. When masks
/// are given, pixels with mask != 0 (the object) are skipped.
inline DominantColorSet extract_dominant_colors(const std::vector<Image>& backgrounds, int k,
                                                const std::vector<Mask>* object_masks = nullptr,
                                                std::uint64_t seed = 0) {
  std::vector<Rgb> pixels;
  for (std::size_t i = 0; i < backgrounds.size(); ++i) {
    const auto& img = backgrounds[i];
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
      if (object_masks && (*object_masks)[i][p]) continue;
      pixels.push_back({img.pixels[p * 3], img.pixels[p * 3 + 1], img.pixels[p * 3 + 2]});
    }
  }
  DominantColorSet set;
  set.colors = kmeans(pixels, k, seed);
  set.source = "backgrounds:" + std::to_string(backgrounds.size());
  return set;
}

/// Normalised RGB distance (Euclidean / sqrt(3)) from each texel of [H,W,3]
/// to each palette colour; result [H,W,k].
inline Tensor palette_distance(const Tensor& texture, const DominantColorSet& palette) {
  if (texture.rank() != 3 || texture.dim(2) != 3)
    throw ShapeError("palette_distance: texture must be [H,W,3], got " + shape_string(texture.shape()));
  palette.validate();
  const std::size_t n = texture.dim(0) * texture.dim(1), K = palette.colors.size();
  const auto t = texture.data();
  const double inv = 1.0 / std::sqrt(3.0);
  std::vector<double> out(n * K);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const Rgb px{t[i * 3], t[i * 3 + 1], t[i * 3 + 2]};
      out[i * K + k] = std::sqrt(detail::sq_dist(px, palette.colors[k])) * inv;
    }
  return detail::make_result({texture.dim(0), texture.dim(1), K}, std::move(out), {texture},
                             [colors = palette.colors, K, inv](detail::Node& self) {
                               auto& pt = detail::parent(self, 0);
                               pt.ensure_grad();
                               const std::size_t n = pt.data.size() / 3;
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const double d = self.data[i * K + k];
                                   if (d <= 0.0) continue;  // zero subgradient at a palette colour
                                   const double g = self.grad[i * K + k] * inv * inv / d;
                                   for (int c = 0; c < 3; ++c) pt.grad[i * 3 + c] += g * (pt.data[i * 3 + c] - colors[k][c]);
                                 }
                             });
}

/// Mean over texels of f_log(distance to the nearest palette colour).
inline Tensor camouflage_loss(const Tensor& texture, const DominantColorSet& palette) {
  return mean(f_log(min(palette_distance(texture, palette), {2})));
}

inline Tensor total_loss(const Tensor& attack, const Tensor& smooth, const Tensor& camouflage, const LossWeights& w) {
  return add(add(mul(attack, w.alpha), mul(smooth, w.beta)), mul(camouflage, w.gamma));
}

}  // namespace active
