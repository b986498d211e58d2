#pragma once

// Camera math and triplanar texture projection from depth images.
//
// Conventions: right-handed frames, the camera looks down +z with image
// columns (u) to the right and rows (v) downwards. Pixel (u,v) back-projects
// along ((u-cx)/fx, (v-cy)/fy, 1) scaled by its z-depth.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/image.hpp"
#include "active/tensor.hpp"

namespace active {

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  return {a[0] / n, a[1] / n, a[2] / n};
}

struct CameraParams {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  /// Camera-to-world rigid transform, row-major 4x4.
  std::array<double, 16> extrinsics{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  int width = 0;
  int height = 0;

  std::array<double, 9> intrinsics() const { return {fx, 0, cx, 0, fy, cy, 0, 0, 1}; }
  Vec3 position() const { return {extrinsics[3], extrinsics[7], extrinsics[11]}; }

  Vec3 to_world(const Vec3& p) const {
    const auto& e = extrinsics;
    return {e[0] * p[0] + e[1] * p[1] + e[2] * p[2] + e[3],
            e[4] * p[0] + e[5] * p[1] + e[6] * p[2] + e[7],
            e[8] * p[0] + e[9] * p[1] + e[10] * p[2] + e[11]};
  }
  Vec3 rotate_to_world(const Vec3& d) const {
    const auto& e = extrinsics;
    return {e[0] * d[0] + e[1] * d[1] + e[2] * d[2], e[4] * d[0] + e[5] * d[1] + e[6] * d[2],
            e[8] * d[0] + e[9] * d[1] + e[10] * d[2]};
  }

  /// Throws if focal lengths are non-positive or the rotation is not proper.
  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera focal lengths must be positive");
    const auto& e = extrinsics;
    const double r[3][3] = {{e[0], e[1], e[2]}, {e[4], e[5], e[6]}, {e[8], e[9], e[10]}};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += r[k][i] * r[k][j];
        if (std::fabs(s - (i == j ? 1.0 : 0.0)) > 1e-9)
          throw std::invalid_argument("camera rotation is not orthonormal");
      }
    const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                       r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                       r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if (std::fabs(det - 1.0) > 1e-9) throw std::invalid_argument("camera rotation has determinant != +1");
  }

  /// Camera at `eye` looking at `target`; `up` fixes the roll (image rows go
  /// against it).
  static CameraParams look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                              int width, int height) {
    const Vec3 z = normalized(target - eye);
    const Vec3 x = normalized(cross(z, up));
    const Vec3 y = cross(z, x);
    CameraParams cam;
    cam.fx = cam.fy = focal;
    cam.cx = (width - 1) / 2.0;
    cam.cy = (height - 1) / 2.0;
    cam.width = width;
    cam.height = height;
    cam.extrinsics = {x[0], y[0], z[0], eye[0], x[1], y[1], z[1], eye[1],
                      x[2], y[2], z[2], eye[2], 0,    0,    0,    1};
    return cam;
  }
};

/// Metric z-depth per pixel plus the object mask.
struct DepthImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  Mask mask;

  void validate() const {
    const std::size_t n = static_cast<std::size_t>(height) * width;
    if (values.size() != n || mask.size() != n) throw std::invalid_argument("depth image size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] && !(std::isfinite(values[i]) && values[i] > 0.0)) {
        throw std::invalid_argument("masked-in depth at pixel " + std::to_string(i) +
                                    " is not finite and positive");
      }
    }
  }
};

enum class Axis : std::uint8_t { x = 0, y = 1, z = 2, none = 255 };

struct SurfaceGeometry {
  int height = 0;
  int width = 0;
  std::vector<Vec3> world;    ///< x_SWC; zero where masked out
  std::vector<Vec3> normals;  ///< x_SN; unit, camera-facing
  Mask mask;                  ///< object mask minus degenerate pixels
  std::vector<Axis> axis;     ///< dominant normal axis per pixel
  int degenerate_pixels = 0;  ///< pixels dropped for lack of a tangent frame
};

/// Shift is in units of one tile period; scale multiplies the period.
struct ProjectionAugmentation {
  Vec3 shift{0.0, 0.0, 0.0};
  double scale = 1.0;
};

/// Back-projects masked-in pixels to world coordinates.
inline std::vector<Vec3> backproject(const DepthImage& depth, const CameraParams& cam) {
  depth.validate();
  std::vector<Vec3> world(depth.values.size(), Vec3{0.0, 0.0, 0.0});
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * depth.width + u;
      if (!depth.mask[i]) continue;
      const double d = depth.values[i];
      const Vec3 local{(u - cam.cx) / cam.fx * d, (v - cam.cy) / cam.fy * d, d};
      world[i] = cam.to_world(local);
    }
  return world;
}

/// Normals from world-coordinate tangents (length-weighted central differences,
/// one-sided at mask borders), flipped to face the camera. Pixels without a usable tangent
/// pair are dropped from `mask` and counted in the return value.
inline int surface_normals(const std::vector<Vec3>& world, Mask& mask, int height, int width,
                           const Vec3& camera_position, std::vector<Vec3>& normals) {
  normals.assign(world.size(), Vec3{0.0, 0.0, 0.0});
  const Mask in = mask;
  auto inside = [&](int v, int u) {
    return v >= 0 && u >= 0 && v < height && u < width && in[static_cast<std::size_t>(v) * width + u];
  };
  auto at = [&](int v, int u) -> const Vec3& { return world[static_cast<std::size_t>(v) * width + u]; };
  auto tangent = [&](int v, int u, int dv, int du, Vec3& t) {
    const bool fwd = inside(v + dv, u + du), bwd = inside(v - dv, u - du);
    if (fwd && bwd) {
      // Chords weighted by the opposite chord's length: on a curve with
      // unequal steps this stays tangent at the centre pixel, where a plain
      // central difference is tangent at the arc midpoint instead.
      const Vec3 a = at(v + dv, u + du) - at(v, u), b = at(v, u) - at(v - dv, u - du);
      const double la = norm(a), lb = norm(b);
      if (la > 0.0 && lb > 0.0) t = a * (lb / la) + b * (la / lb);
      else t = a + b;
    } else if (fwd) t = at(v + dv, u + du) - at(v, u);
    else if (bwd) t = at(v, u) - at(v - dv, u - du);
    else return false;
    return true;
  };
  int degenerate = 0;
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * width + u;
      if (!in[i]) continue;
      Vec3 tu, tv;
      const bool ok = tangent(v, u, 0, 1, tu) && tangent(v, u, 1, 0, tv);
      const Vec3 n = ok ? cross(tu, tv) : Vec3{0.0, 0.0, 0.0};
      const double len = norm(n);
      if (!ok || len < 1e-12) {
        mask[i] = 0;
        ++degenerate;
        continue;
      }
      Vec3 unit = n * (1.0 / len);
      if (dot(unit, world[i] - camera_position) > 0.0) unit = unit * -1.0;
      normals[i] = unit;
    }
  return degenerate;
}

/// Largest-|component| axis, ties resolved x before y before z.
inline Axis dominant_axis(const Vec3& n) {
  const double ax = std::fabs(n[0]), ay = std::fabs(n[1]), az = std::fabs(n[2]);
  if (ax >= ay && ax >= az) return Axis::x;
  if (ay >= az) return Axis::y;
  return Axis::z;
}

struct TriplanarMasks {
  Mask x, y, z;
};

inline TriplanarMasks triplanar_masks(const std::vector<Vec3>& normals, const Mask& mask) {
  TriplanarMasks m{Mask(mask.size(), 0), Mask(mask.size(), 0), Mask(mask.size(), 0)};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    switch (dominant_axis(normals[i])) {
      case Axis::x: m.x[i] = 1; break;
      case Axis::y: m.y[i] = 1; break;
      default: m.z[i] = 1; break;
    }
  }
  return m;
}

inline SurfaceGeometry surface_geometry(const DepthImage& depth, const CameraParams& cam) {
  cam.validate();
  SurfaceGeometry g;
  g.height = depth.height;
  g.width = depth.width;
  g.world = backproject(depth, cam);
  g.mask = depth.mask;
  g.degenerate_pixels = surface_normals(g.world, g.mask, g.height, g.width, cam.position(), g.normals);
  g.axis.assign(g.mask.size(), Axis::none);
  for (std::size_t i = 0; i < g.mask.size(); ++i)
    if (g.mask[i]) g.axis[i] = dominant_axis(g.normals[i]);
  return g;
}

/// Non-negative fractional part, always in [0,1).
inline double floor_mod1(double x) {
  const double r = x - std::floor(x);
  return r >= 1.0 ? 0.0 : r;
}

inline std::int32_t texel_index(double coord01, std::size_t extent) {
  const auto i = static_cast<std::int64_t>(std::floor(coord01 * static_cast<double>(extent)));
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(i, 0, static_cast<std::int64_t>(extent) - 1));
}

/// The two world axes that become (column, row) texture coordinates when
/// projecting along `axis`.
inline std::array<int, 2> projection_plane(Axis axis) {
  switch (axis) {
    case Axis::x: return {1, 2};
    case Axis::y: return {0, 2};
    default: return {0, 1};
  }
}

/// Texel lookups for all three projection axes plus per-axis selection masks
/// ([H,W,C] constant tensors). Everything here is fixed per view and
/// augmentation; only the texture values carry gradients.
struct TriplanarPlan {
  std::array<UvIndexMap, 3> uv;
  std::array<Tensor, 3> selection;
};

inline TriplanarPlan triplanar_plan(const SurfaceGeometry& geo, const ProjectionAugmentation& aug,
                                    double tile_period, std::size_t tex_h, std::size_t tex_w,
                                    std::size_t channels = 3) {
  if (!(tile_period > 0.0)) throw std::invalid_argument("tile_period must be positive");
  if (!(aug.scale > 0.0)) throw std::invalid_argument("projection scale must be positive");
  const std::size_t H = static_cast<std::size_t>(geo.height), W = static_cast<std::size_t>(geo.width);
  const std::size_t n = H * W;
  const double period = tile_period * aug.scale;
  // The shift is reduced modulo one period up front so whole-period shifts
  // leave every coordinate bit-identical.
  Vec3 offset;
  for (int k = 0; k < 3; ++k) offset[k] = floor_mod1(aug.shift[k] / aug.scale);
  TriplanarPlan plan;
  std::array<std::vector<double>, 3> sel;
  for (int a = 0; a < 3; ++a) {
    plan.uv[a] = UvIndexMap{H, W, std::vector<std::int32_t>(n, 0), std::vector<std::int32_t>(n, 0)};
    sel[a].assign(n * channels, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!geo.mask[i]) continue;
    Vec3 rsc;
    for (int k = 0; k < 3; ++k) rsc[k] = floor_mod1(geo.world[i][k] / period + offset[k]);
    for (int a = 0; a < 3; ++a) {
      const auto plane = projection_plane(static_cast<Axis>(a));
      plan.uv[a].cols[i] = texel_index(rsc[plane[0]], tex_w);
      plan.uv[a].rows[i] = texel_index(rsc[plane[1]], tex_h);
    }
    const int chosen = static_cast<int>(geo.axis[i]);
    for (std::size_t c = 0; c < channels; ++c) sel[chosen][i * channels + c] = 1.0;
  }
  for (int a = 0; a < 3; ++a) plan.selection[a] = Tensor({H, W, channels}, std::move(sel[a]));
  return plan;
}

/// eta_p = sum over axes of gather(eta, uv_axis) * mask_axis.
inline Tensor triplanar_project(const Tensor& texture, const TriplanarPlan& plan) {
  Tensor out;
  for (int a = 0; a < 3; ++a) {
    Tensor part = mul(gather_nearest(texture, plan.uv[a]), plan.selection[a]);
    out = out.defined() ? add(out, part) : part;
  }
  return out;
}

inline Tensor triplanar_project(const Tensor& texture, const DepthImage& depth,
                                const CameraParams& cam, const ProjectionAugmentation& aug,
                                double tile_period) {
  const auto geo = surface_geometry(depth, cam);
  return triplanar_project(
      texture, triplanar_plan(geo, aug, tile_period, texture.dim(0), texture.dim(1), texture.dim(2)));
}

}  // namespace active
