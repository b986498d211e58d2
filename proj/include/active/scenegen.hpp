#pragma once

// Synthetic scenes of single parametric primitives rendered by ray casting
// with Lambertian + ambient shading. Stand-in for a game-engine data export:
// every sample carries the reference render, object mask, depth, camera and
// the background with the object cut out.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "active/geometry.hpp"
#include "active/image.hpp"

namespace active {

enum class PrimitiveKind { sphere = 0, box = 1, capsule = 2 };

inline const char* to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::capsule: return "capsule";
  }
  return "unknown";
}

inline PrimitiveKind parse_kind(const std::string& s) {
  if (s == "sphere") return PrimitiveKind::sphere;
  if (s == "box") return PrimitiveKind::box;
  if (s == "capsule") return PrimitiveKind::capsule;
  throw std::invalid_argument("unknown primitive kind '" + s + "'");
}

/// Full extents in meters: sphere uses size[0] as diameter; a capsule lies
/// along its local x axis with length size[0] and diameter size[1].
struct PrimitiveObject {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 position{0.0, 0.0, 0.0};
  double yaw = 0.0;  ///< radians about world +z
  Vec3 size{2.0, 2.0, 2.0};

  void validate() const {
    for (double s : size)
      if (!(s > 0.0)) throw std::invalid_argument("primitive size components must be positive");
  }

  static PrimitiveObject standard(PrimitiveKind kind) {
    switch (kind) {
      case PrimitiveKind::sphere: return {kind, {0, 0, 1.0}, 0.0, {2.0, 2.0, 2.0}};
      case PrimitiveKind::box: return {kind, {0, 0, 0.8}, 0.0, {3.2, 1.8, 1.6}};
      case PrimitiveKind::capsule: return {kind, {0, 0, 0.8}, 0.0, {3.4, 1.6, 1.6}};
    }
    return {};
  }
};

struct RayHit {
  double distance = 0.0;  ///< along the unit ray direction
  Vec3 normal{0, 0, 0};   ///< world-space outward unit normal
};

namespace detail {

inline Vec3 rotate_z(const Vec3& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

inline std::optional<double> sphere_hit(const Vec3& o, const Vec3& d, double r) {
  const double b = dot(o, d);
  const double c = dot(o, o) - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t > 0.0) return t;
  return std::nullopt;
}

}  // namespace detail

/// Intersects a world ray (unit direction) with the primitive.
inline std::optional<RayHit> intersect(const PrimitiveObject& obj, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = detail::rotate_z(origin - obj.position, -obj.yaw);
  const Vec3 d = detail::rotate_z(dir, -obj.yaw);
  Vec3 n_local{0, 0, 0};
  double t = 0.0;
  switch (obj.kind) {
    case PrimitiveKind::sphere: {
      const double r = obj.size[0] / 2.0;
      auto hit = detail::sphere_hit(o, d, r);
      if (!hit) return std::nullopt;
      t = *hit;
      n_local = (o + d * t) * (1.0 / r);
      break;
    }
    case PrimitiveKind::box: {
      double t_near = -INFINITY, t_far = INFINITY;
      int near_axis = -1;
      double near_sign = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double half = obj.size[k] / 2.0;
        if (std::fabs(d[k]) < 1e-300) {
          if (o[k] < -half || o[k] > half) return std::nullopt;
          continue;
        }
        double t1 = (-half - o[k]) / d[k], t2 = (half - o[k]) / d[k];
        double sign = -1.0;
        if (t1 > t2) {
          std::swap(t1, t2);
          sign = 1.0;
        }
        if (t1 > t_near) {
          t_near = t1;
          near_axis = k;
          near_sign = sign;
        }
        t_far = std::min(t_far, t2);
      }
      if (near_axis < 0 || t_near > t_far || t_near <= 0.0) return std::nullopt;
      t = t_near;
      n_local[near_axis] = near_sign;
      break;
    }
    case PrimitiveKind::capsule: {
      const double r = obj.size[1] / 2.0;
      const double h = std::max(0.0, obj.size[0] / 2.0 - r);
      const Vec3 pa{-h, 0, 0}, pb{h, 0, 0};
      const Vec3 ba = pb - pa, oa = o - pa;
      const double baba = dot(ba, ba), bard = dot(ba, d), baoa = dot(ba, oa);
      const double rdoa = dot(d, oa), oaoa = dot(oa, oa);
      std::optional<double> hit;
      if (baba > 0.0) {
        const double a = baba - bard * bard;
        const double b = baba * rdoa - baoa * bard;
        const double c = baba * oaoa - baoa * baoa - r * r * baba;
        const double disc = b * b - a * c;
        if (disc >= 0.0 && a > 0.0) {
          const double tc = (-b - std::sqrt(disc)) / a;
          const double y = baoa + tc * bard;
          if (y > 0.0 && y < baba && tc > 0.0) hit = tc;
        }
      }
      if (!hit) {
        // Caps: take the nearest of the two end spheres.
        for (const Vec3& cap : {pa, pb}) {
          auto th = detail::sphere_hit(o - cap, d, r);
          if (th && (!hit || *th < *hit)) hit = th;
        }
      }
      if (!hit) return std::nullopt;
      t = *hit;
      const Vec3 p = o + d * t;
      const Vec3 q{std::clamp(p[0], -h, h), 0.0, 0.0};
      n_local = normalized(p - q);
      break;
    }
  }
  return RayHit{t, detail::rotate_z(n_local, obj.yaw)};
}

enum class BackgroundStyle { flat = 0, gradient = 1, checkerboard = 2 };

struct Background {
  BackgroundStyle style = BackgroundStyle::flat;
  Rgb primary{0.4, 0.5, 0.6};
  Rgb secondary{0.7, 0.7, 0.6};
  int checker_size = 8;

  Rgb at(int row, int col, int height) const {
    switch (style) {
      case BackgroundStyle::flat: return primary;
      case BackgroundStyle::gradient: {
        const double t = height > 1 ? static_cast<double>(row) / (height - 1) : 0.0;
        return {primary[0] + t * (secondary[0] - primary[0]), primary[1] + t * (secondary[1] - primary[1]),
                primary[2] + t * (secondary[2] - primary[2])};
      }
      case BackgroundStyle::checkerboard:
        return ((row / checker_size + col / checker_size) % 2 == 0) ? primary : secondary;
    }
    return primary;
  }
};

/// Camera placement relative to the object: distance in meters, pitch
/// (elevation) and rotation (azimuth) in degrees.
struct CameraPose {
  double distance = 10.0;
  double pitch = 15.0;
  double rotation = 0.0;
};

struct Range {
  double lo = 0.0, hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

/// Camera transformation set; each draw picks one range per list uniformly
/// and then a uniform value inside it.
struct CameraPoseSet {
  std::vector<Range> distances{{5.0, 15.0}};
  std::vector<Range> pitches{{0.0, 45.0}};
  std::vector<Range> rotations{{0.0, 360.0}};

  void validate() const {
    if (distances.empty() || pitches.empty() || rotations.empty())
      throw std::invalid_argument("camera pose set has an empty range list");
    for (const auto& r : distances)
      if (!(r.lo > 0.0) || r.hi < r.lo) throw std::invalid_argument("distance ranges must be positive and ordered");
    for (const auto* list : {&pitches, &rotations})
      for (const auto& r : *list)
        if (r.hi < r.lo) throw std::invalid_argument("angle range is reversed");
  }

  bool contains(const CameraPose& p) const {
    auto in = [](const std::vector<Range>& rs, double v) {
      return std::any_of(rs.begin(), rs.end(), [v](const Range& r) { return r.contains(v); });
    };
    return in(distances, p.distance) && in(pitches, p.pitch) && in(rotations, p.rotation);
  }

  CameraPose sample(std::mt19937_64& rng) const {
    auto draw = [&](const std::vector<Range>& rs) {
      const auto& r = rs[std::uniform_int_distribution<std::size_t>(0, rs.size() - 1)(rng)];
      return r.lo == r.hi ? r.lo : uniform(rng, r.lo, r.hi);
    };
    CameraPose p;
    p.distance = draw(distances);
    p.pitch = draw(pitches);
    p.rotation = draw(rotations);
    return p;
  }
};

struct SceneOptions {
  int image_size = 64;
  double focal_scale = 1.25;  ///< focal length = focal_scale * image_size pixels
  double ambient = 0.2;
  double target_jitter = 0.3;    ///< meters; look-at point offset
  double position_jitter = 2.0;  ///< meters; horizontal object placement range
  Rgb base_color{128.0 / 255.0, 128.0 / 255.0, 128.0 / 255.0};
};

struct SceneSample {
  Image x_ref;
  Mask x_m;
  DepthImage x_d;
  CameraParams cam;
  Image x_bg;
  Image x_ref_m;
  std::vector<double> shading;  ///< max(0, n.l) per pixel, 0 off-object
  double ambient = 0.2;
  Rgb base_color{};
  PrimitiveKind kind = PrimitiveKind::sphere;
  CameraPose pose;
  Box gt_box;  ///< tight box of x_m

  int height() const { return x_ref.height; }
  int width() const { return x_ref.width; }
  int class_id() const { return static_cast<int>(kind); }
};

inline Vec3 camera_eye(const Vec3& target, const CameraPose& pose) {
  const double p = pose.pitch * std::numbers::pi / 180.0;
  const double r = pose.rotation * std::numbers::pi / 180.0;
  return target + Vec3{std::cos(p) * std::cos(r), std::cos(p) * std::sin(r), std::sin(p)} * pose.distance;
}

inline CameraParams camera_for_pose(const Vec3& target, const CameraPose& pose, const SceneOptions& opt) {
  return CameraParams::look_at(camera_eye(target, pose), target, {0.0, 0.0, 1.0},
                               opt.focal_scale * opt.image_size, opt.image_size, opt.image_size);
}

/// Ray-casts one primitive. `light_dir` points from the surface toward the light.
inline SceneSample render_sample(const PrimitiveObject& obj, const CameraParams& cam, const Rgb& base_color,
                                 const Vec3& light_dir, const Background& background, double ambient = 0.2) {
  obj.validate();
  cam.validate();
  const int H = cam.height, W = cam.width;
  const std::size_t n = static_cast<std::size_t>(H) * W;
  const Vec3 light = normalized(light_dir);
  const Vec3 eye = cam.position();

  SceneSample s;
  s.cam = cam;
  s.kind = obj.kind;
  s.ambient = ambient;
  s.base_color = base_color;
  s.x_ref = Image(H, W, 3);
  s.x_bg = Image(H, W, 3);
  s.x_ref_m = Image(H, W, 3);
  s.x_m.assign(n, 0);
  s.shading.assign(n, 0.0);
  s.x_d = DepthImage{H, W, std::vector<double>(n, 0.0), Mask(n, 0)};

  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * W + u;
      const Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
      const double dir_len = norm(dir_cam);
      const Vec3 dir = normalized(cam.rotate_to_world(dir_cam));
      const auto hit = intersect(obj, eye, dir);
      if (hit) {
        s.x_m[i] = 1;
        s.x_d.mask[i] = 1;
        s.x_d.values[i] = hit->distance / dir_len;
        const double shade = std::max(0.0, dot(hit->normal, light));
        s.shading[i] = shade;
        for (int c = 0; c < 3; ++c) {
          const double value = std::clamp(base_color[c] * (shade + ambient), 0.0, 1.0);
          s.x_ref.at(v, u, c) = value;
          s.x_ref_m.at(v, u, c) = value;
        }
      } else {
        const Rgb bg = background.at(v, u, H);
        for (int c = 0; c < 3; ++c) {
          s.x_ref.at(v, u, c) = bg[c];
          s.x_bg.at(v, u, c) = bg[c];
        }
      }
    }
  s.gt_box = mask_bbox(s.x_m, H, W);
  if (!s.gt_box.valid()) throw std::runtime_error("object is entirely outside the camera frame");
  return s;
}

/// Re-renders the object with projected texture eta_p ([H,W,3]) under the
/// sample's own shading and composites over x_bg.
inline Image render_ground_truth(const SceneSample& s, const Image& eta_p) {
  if (eta_p.height != s.height() || eta_p.width != s.width() || eta_p.channels != 3)
    throw std::invalid_argument("render_ground_truth: projected texture extent mismatch");
  Image out = s.x_bg;
  for (int v = 0; v < s.height(); ++v)
    for (int u = 0; u < s.width(); ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * s.width() + u;
      if (!s.x_m[i]) continue;
      const double k = s.shading[i] + s.ambient;
      for (int c = 0; c < 3; ++c) out.at(v, u, c) = std::clamp(eta_p.at(v, u, c) * k, 0.0, 1.0) + s.x_bg.at(v, u, c);
    }
  return out;
}

/// A flat colour painted onto the object pixels only.
inline Image flat_projection(const SceneSample& s, const Rgb& color) {
  Image out(s.height(), s.width(), 3);
  for (std::size_t i = 0; i < s.x_m.size(); ++i)
    if (s.x_m[i])
      for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = color[c];
  return out;
}

/// The eight RGB-cube corners plus mid gray.
inline std::vector<Rgb> boundary_colors() {
  const double g = 128.0 / 255.0;
  return {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 0}, {0, 1, 1}, {1, 1, 1}, {0, 0, 0}, {g, g, g}};
}

inline Rgb random_color(std::mt19937_64& rng) {
  return {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
}

inline Background random_background(std::mt19937_64& rng) {
  Background bg;
  bg.style = static_cast<BackgroundStyle>(std::uniform_int_distribution<int>(0, 2)(rng));
  auto muted = [&] {
    // Keep backgrounds away from the object gray so silhouettes stay visible.
    Rgb c = random_color(rng);
    for (auto& v : c) v = 0.15 + 0.7 * v;
    return c;
  };
  bg.primary = muted();
  bg.secondary = muted();
  bg.checker_size = std::uniform_int_distribution<int>(4, 12)(rng);
  return bg;
}

/// Everything needed to reproduce one scene.
struct SceneSpec {
  PrimitiveObject object;
  CameraPose pose;
  Vec3 target{0, 0, 0};
  Vec3 light_dir{0, 0, 1};
  Background background;
};

/// Draws scene `index` of a set from its own RNG stream. Retries poses that
/// put the object out of frame.
inline SceneSpec draw_scene(const PrimitiveObject& base, const CameraPoseSet& poses, const SceneOptions& opt,
                            std::uint64_t seed, std::uint64_t index) {
  auto rng = make_stream(seed, index, 0x5ce7e);
  SceneSpec spec;
  spec.object = base;
  spec.object.position[0] += uniform(rng, -opt.position_jitter, opt.position_jitter);
  spec.object.position[1] += uniform(rng, -opt.position_jitter, opt.position_jitter);
  spec.object.yaw = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  spec.pose = poses.sample(rng);
  spec.target = spec.object.position + Vec3{uniform(rng, -opt.target_jitter, opt.target_jitter),
                                            uniform(rng, -opt.target_jitter, opt.target_jitter),
                                            uniform(rng, -opt.target_jitter, opt.target_jitter) * 0.5};
  const double az = spec.pose.rotation * std::numbers::pi / 180.0 + uniform(rng, -1.2, 1.2);
  const double el = uniform(rng, 0.35, 1.2);
  spec.light_dir = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  spec.background = random_background(rng);
  return spec;
}

inline SceneSample render_scene(const SceneSpec& spec, const SceneOptions& opt, const Rgb& color) {
  auto s = render_sample(spec.object, camera_for_pose(spec.target, spec.pose, opt), color, spec.light_dir,
                         spec.background, opt.ambient);
  s.pose = spec.pose;
  return s;
}

struct DatasetRecord {
  std::size_t scene = 0;  ///< index into Dataset::scenes
  Rgb color{};
  Image ground_truth;
};

struct Dataset {
  std::vector<SceneSpec> specs;
  std::vector<SceneSample> scenes;
  std::vector<DatasetRecord> records;
};

/// `poses_per_object` scenes per object, each paired with every colour.
/// Deterministic in `seed`; scene i uses stream (seed, i).
inline Dataset generate_dataset(const CameraPoseSet& pose_set, const std::vector<PrimitiveObject>& objects,
                                const std::vector<Rgb>& colors, int poses_per_object, std::uint64_t seed,
                                const SceneOptions& opt = {}) {
  pose_set.validate();
  Dataset ds;
  std::uint64_t index = 0;
  for (const auto& obj : objects)
    for (int p = 0; p < poses_per_object; ++p) {
      SceneSpec spec;
      SceneSample sample;
      for (int attempt = 0;; ++attempt) {
        spec = draw_scene(obj, pose_set, opt, seed, index + (static_cast<std::uint64_t>(attempt) << 32));
        try {
          sample = render_scene(spec, opt, opt.base_color);
          break;
        } catch (const std::runtime_error&) {
          if (attempt > 50) throw;
        }
      }
      ds.specs.push_back(spec);
      ds.scenes.push_back(std::move(sample));
      ++index;
    }
  for (std::size_t s = 0; s < ds.scenes.size(); ++s)
    for (const auto& c : colors)
      ds.records.push_back({s, c, render_ground_truth(ds.scenes[s], flat_projection(ds.scenes[s], c))});
  return ds;
}

}  // namespace active
