#pragma once

// Shared test helpers: a central-difference gradient oracle and tiny scenes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "active/geometry.hpp"
#include "active/image.hpp"
#include "active/scenegen.hpp"
#include "active/tensor.hpp"

namespace active::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  double max_abs_grad = 0.0;
};

/// Compares the reverse-mode gradient of scalar f at x0 with central
/// differences on up to `max_coords` coordinates (all when 0). The error per
/// coordinate is |g - fd| / max(|g|, |fd|, 1e-3 * max|g|), so coordinates whose
/// true gradient is negligible next to the largest one are judged on an
/// absolute scale instead of blowing up the ratio.
inline GradCheck gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x0,
                           std::size_t max_coords = 0, std::uint64_t seed = 0, double step = 1e-5) {
  const std::vector<double> base(x0.data().begin(), x0.data().end());
  Tensor x(x0.shape(), base, true);
  f(x).backward();
  const std::vector<double> g(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> coords(base.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords && coords.size() > max_coords) {
    auto rng = make_stream(seed, 0x9c);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }
  GradCheck out;
  for (double v : g) out.max_abs_grad = std::max(out.max_abs_grad, std::fabs(v));
  const double floor = std::max(1e-3 * out.max_abs_grad, 1e-300);
  for (std::size_t i : coords) {
    auto eval = [&](double delta) {
      std::vector<double> d = base;
      d[i] += delta;
      return f(Tensor(x0.shape(), std::move(d))).item();
    };
    const double fd = (eval(step) - eval(-step)) / (2.0 * step);
    const double denom = std::max({std::fabs(g[i]), std::fabs(fd), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::fabs(g[i] - fd) / denom);
    ++out.checked;
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  auto rng = make_stream(seed, 0x7a);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

/// One scene of `kind` at `size` x `size`, drawn from stream (seed, index).
inline SceneSample tiny_scene(PrimitiveKind kind, int size, std::uint64_t seed, std::uint64_t index = 0) {
  SceneOptions opt;
  opt.image_size = size;
  CameraPoseSet poses;
  poses.distances = {{6.0, 9.0}};
  for (std::uint64_t attempt = 0;; ++attempt) {
    const auto spec = draw_scene(PrimitiveObject::standard(kind), poses, opt, seed, index + (attempt << 32));
    try {
      return render_scene(spec, opt, opt.base_color);
    } catch (const std::runtime_error&) {
      if (attempt > 50) throw;
    }
  }
}

}  // namespace active::testing
