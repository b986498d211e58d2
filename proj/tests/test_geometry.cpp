#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "active/geometry.hpp"
#include "active/scenegen.hpp"
#include "support.hpp"

using namespace active;

namespace {

CameraParams pinhole(double f, double cx, double cy, int w, int h) {
  CameraParams cam;
  cam.fx = cam.fy = f;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = w;
  cam.height = h;
  return cam;
}

DepthImage full_depth(int h, int w, const std::function<double(int, int)>& depth) {
  DepthImage d{h, w, std::vector<double>(static_cast<std::size_t>(h) * w), Mask(static_cast<std::size_t>(h) * w, 1)};
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) d.values[static_cast<std::size_t>(v) * w + u] = depth(v, u);
  return d;
}

double angle_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(dot(normalized(a), normalized(b)), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

SceneSample view_of(const PrimitiveObject& obj, const CameraPose& pose, int size = 64) {
  SceneOptions opt;
  opt.image_size = size;
  const auto cam = camera_for_pose(obj.position, pose, opt);
  return render_sample(obj, cam, opt.base_color, {0, 0, 1}, Background{});
}

}  // namespace

TEST(Backproject, PrincipalRayPixel) {
  const auto depth = full_depth(1, 1, [](int, int) { return 5.0; });
  const auto world = backproject(depth, pinhole(1, 0, 0, 1, 1));
  EXPECT_EQ(world[0], (Vec3{0, 0, 5}));
}

TEST(Backproject, TranslationIsAdditive) {
  auto cam = pinhole(1, 0, 0, 1, 1);
  cam.extrinsics[3] = 1;
  cam.extrinsics[7] = 2;
  cam.extrinsics[11] = 3;
  const auto world = backproject(full_depth(1, 1, [](int, int) { return 5.0; }), cam);
  EXPECT_EQ(world[0], (Vec3{1, 2, 8}));
}

TEST(Backproject, MatchesRayScalingOracle) {
  // A world point X seen by a look-at camera must come back from its own depth.
  const auto cam = CameraParams::look_at({4, -3, 2}, {0, 0, 0.5}, {0, 0, 1}, 20.0, 4, 4);
  auto rng = make_stream(11);
  DepthImage depth{4, 4, std::vector<double>(16), Mask(16, 1)};
  std::vector<Vec3> expected(16);
  const Vec3 eye = cam.position();
  for (int v = 0; v < 4; ++v)
    for (int u = 0; u < 4; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * 4 + u;
      const double d = uniform(rng, 1.0, 9.0);
      depth.values[i] = d;
      // Ray through the pixel in world space, scaled so its optical-axis component is d.
      const Vec3 ray = cam.rotate_to_world({(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0});
      expected[i] = eye + ray * d;
    }
  const auto world = backproject(depth, cam);
  for (std::size_t i = 0; i < 16; ++i)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(world[i][k], expected[i][k], 1e-12);
}

TEST(Backproject, RejectsNonPositiveMaskedDepth) {
  auto depth = full_depth(2, 2, [](int, int) { return 1.0; });
  depth.values[3] = 0.0;
  EXPECT_THROW(backproject(depth, pinhole(1, 0, 0, 2, 2)), std::invalid_argument);
  depth.mask[3] = 0;
  EXPECT_NO_THROW(backproject(depth, pinhole(1, 0, 0, 2, 2)));
}

TEST(Camera, ValidateRejectsBadRotationAndFocal) {
  auto cam = pinhole(1, 0, 0, 1, 1);
  EXPECT_NO_THROW(cam.validate());
  cam.extrinsics[0] = -1;  // reflection
  EXPECT_THROW(cam.validate(), std::invalid_argument);
  cam = pinhole(0, 0, 0, 1, 1);
  EXPECT_THROW(cam.validate(), std::invalid_argument);
}

TEST(Normals, FrontoParallelPlaneFacesCamera) {
  const auto geo = surface_geometry(full_depth(6, 6, [](int, int) { return 4.0; }), pinhole(8, 2.5, 2.5, 6, 6));
  EXPECT_EQ(geo.degenerate_pixels, 0);
  for (std::size_t i = 0; i < geo.normals.size(); ++i) {
    EXPECT_NEAR(geo.normals[i][0], 0.0, 1e-12);
    EXPECT_NEAR(geo.normals[i][1], 0.0, 1e-12);
    EXPECT_NEAR(geo.normals[i][2], -1.0, 1e-12);
    EXPECT_EQ(geo.axis[i], Axis::z);
  }
}

TEST(Normals, PlaneTiltedAboutY) {
  // Plane z = x + 5: along the ray x = (u - cx) d / f, so d = 5 / (1 - (u - cx) / f).
  const double f = 10.0, c = 3.5;
  const auto geo = surface_geometry(full_depth(8, 8, [&](int, int u) { return 5.0 / (1.0 - (u - c) / f); }),
                                    pinhole(f, c, c, 8, 8));
  const double h = std::sqrt(2.0) / 2.0;
  for (std::size_t i = 0; i < geo.normals.size(); ++i) {
    EXPECT_NEAR(geo.normals[i][0], h, 1e-9);
    EXPECT_NEAR(geo.normals[i][1], 0.0, 1e-9);
    EXPECT_NEAR(geo.normals[i][2], -h, 1e-9);
  }
}

TEST(Normals, SphereWithinTwoDegreesOfAnalytic) {
  const auto obj = PrimitiveObject::standard(PrimitiveKind::sphere);
  for (double pitch : {0.0, 20.0, 40.0}) {
    const auto s = view_of(obj, {6.0, pitch, 30.0});
    const auto geo = surface_geometry(s.x_d, s.cam);
    int checked = 0;
    for (int v = 1; v + 1 < geo.height; ++v)
      for (int u = 1; u + 1 < geo.width; ++u) {
        const std::size_t i = static_cast<std::size_t>(v) * geo.width + u;
        const auto W = static_cast<std::size_t>(geo.width);
        // Central differences need both neighbours on the surface in each direction.
        if (!geo.mask[i] || !geo.mask[i - 1] || !geo.mask[i + 1] || !geo.mask[i - W] || !geo.mask[i + W]) continue;
        EXPECT_LT(angle_deg(geo.normals[i], geo.world[i] - obj.position), 2.0) << "pixel " << v << "," << u;
        ++checked;
      }
    EXPECT_GT(checked, 100);
  }
}

TEST(Normals, AxisAlignedBoxFacesGetTheirFaceAxis) {
  const auto obj = PrimitiveObject::standard(PrimitiveKind::box);
  const auto s = view_of(obj, {7.0, 30.0, 45.0});
  const auto geo = surface_geometry(s.x_d, s.cam);
  const auto W = static_cast<std::size_t>(geo.width);
  // Oracle: the face normal reported by the ray caster for every pixel.
  std::vector<Axis> face(geo.mask.size(), Axis::none);
  std::vector<Vec3> true_normal(geo.mask.size());
  for (int v = 0; v < geo.height; ++v)
    for (int u = 0; u < geo.width; ++u) {
      const Vec3 dir = normalized(s.cam.rotate_to_world({(u - s.cam.cx) / s.cam.fx, (v - s.cam.cy) / s.cam.fy, 1.0}));
      if (const auto hit = intersect(obj, s.cam.position(), dir)) {
        face[static_cast<std::size_t>(v) * W + u] = dominant_axis(hit->normal);
        true_normal[static_cast<std::size_t>(v) * W + u] = hit->normal;
      }
    }
  int faces[3] = {0, 0, 0}, interior = 0, agree = 0, on = 0;
  for (int v = 1; v + 1 < geo.height; ++v)
    for (int u = 1; u + 1 < geo.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * W + u;
      if (!geo.mask[i]) continue;
      ++on;
      agree += geo.axis[i] == face[i];
      bool inside_face = true;
      for (std::size_t j : {i - 1, i + 1, i - W, i + W}) inside_face = inside_face && face[j] == face[i];
      if (!inside_face) continue;
      ++interior;
      EXPECT_EQ(geo.axis[i], face[i]) << "pixel " << v << "," << u;
      EXPECT_LT(angle_deg(geo.normals[i], true_normal[i]), 1e-6);
      ++faces[static_cast<int>(face[i])];
    }
  // From this viewpoint the +x, +y and +z faces are all visible.
  EXPECT_GT(faces[0], 10);
  EXPECT_GT(faces[1], 10);
  EXPECT_GT(faces[2], 10);
  // Pixels straddling a face edge may pick the neighbouring face's axis.
  EXPECT_GT(agree, 0.9 * on);
}

TEST(Normals, IsolatedPixelIsDroppedAndCounted) {
  auto depth = full_depth(3, 3, [](int, int) { return 2.0; });
  depth.mask = {0, 0, 0, 0, 1, 0, 0, 0, 0};
  const auto geo = surface_geometry(depth, pinhole(1, 1, 1, 3, 3));
  EXPECT_EQ(geo.degenerate_pixels, 1);
  EXPECT_EQ(geo.mask[4], 0);
  EXPECT_EQ(geo.axis[4], Axis::none);
}

TEST(TriplanarMasks, DominantAxisAndTieBreak) {
  EXPECT_EQ(dominant_axis({0, 0, -1}), Axis::z);
  const double h = 1.0 / std::sqrt(2.0);
  EXPECT_EQ(dominant_axis({h, h, 0}), Axis::x);
  EXPECT_EQ(dominant_axis({0, -h, h}), Axis::y);
  EXPECT_EQ(dominant_axis({0.5, 0.5, 0.5}), Axis::x);
  const auto m = triplanar_masks({{0, 0, -1}, {h, h, 0}, {0, 1, 0}, {0, 0, 0}}, {1, 1, 1, 0});
  EXPECT_EQ(m.z, (Mask{1, 0, 0, 0}));
  EXPECT_EQ(m.x, (Mask{0, 1, 0, 0}));
  EXPECT_EQ(m.y, (Mask{0, 0, 1, 0}));
}

TEST(TriplanarProject, ConstantTextureFillsMaskOnly) {
  const auto s = active::testing::tiny_scene(PrimitiveKind::box, 32, 3);
  const Tensor red({4, 4, 3}, [] {
    std::vector<double> v(48, 0.0);
    for (std::size_t i = 0; i < 48; i += 3) v[i] = 1.0;
    return v;
  }());
  const auto geo = surface_geometry(s.x_d, s.cam);
  const Tensor eta_p = triplanar_project(red, triplanar_plan(geo, {}, 1.0, 4, 4));
  for (std::size_t i = 0; i < geo.mask.size(); ++i) {
    const double expect_r = geo.mask[i] ? 1.0 : 0.0;
    EXPECT_EQ(eta_p[i * 3], expect_r);
    EXPECT_EQ(eta_p[i * 3 + 1], 0.0);
    EXPECT_EQ(eta_p[i * 3 + 2], 0.0);
  }
}

TEST(TriplanarProject, PlaneWithPeriodEqualToExtentReproducesTexture) {
  // Pixel (v, u) centres land at world ((u + 0.5) / 8, (v + 0.5) / 8, 2): the
  // plane spans exactly one unit period, so texel (v, u) lands on pixel (v, u).
  const auto depth = full_depth(8, 8, [](int, int) { return 2.0; });
  const auto cam = pinhole(16.0, -0.5, -0.5, 8, 8);
  const Tensor eta = active::testing::random_tensor({8, 8, 3}, 5, 0.0, 1.0);
  const Tensor eta_p = triplanar_project(eta, depth, cam, {}, 1.0);
  ASSERT_EQ(eta_p.shape(), eta.shape());
  for (std::size_t i = 0; i < eta.size(); ++i) EXPECT_EQ(eta_p[i], eta[i]);
}

TEST(TriplanarProject, CoarserTextureIsNearestResampled) {
  const auto depth = full_depth(8, 8, [](int, int) { return 2.0; });
  const auto cam = pinhole(16.0, -0.5, -0.5, 8, 8);
  const Tensor eta = active::testing::random_tensor({4, 4, 3}, 6, 0.0, 1.0);
  const Tensor eta_p = triplanar_project(eta, depth, cam, {}, 1.0);
  for (std::size_t v = 0; v < 8; ++v)
    for (std::size_t u = 0; u < 8; ++u)
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(eta_p[(v * 8 + u) * 3 + c], eta[((v / 2) * 4 + u / 2) * 3 + c]);
}

TEST(TriplanarProject, WholePeriodShiftIsBitIdentical) {
  const Tensor eta = active::testing::random_tensor({16, 16, 3}, 7, 0.0, 1.0);
  for (auto kind : {PrimitiveKind::sphere, PrimitiveKind::box, PrimitiveKind::capsule}) {
    const auto s = active::testing::tiny_scene(kind, 48, 9);
    ProjectionAugmentation shifted;
    shifted.shift = {1.0, -2.0, 1.0};
    const Tensor a = triplanar_project(eta, s.x_d, s.cam, {}, 0.5);
    const Tensor b = triplanar_project(eta, s.x_d, s.cam, shifted, 0.5);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
    EXPECT_EQ(diff, 0u) << to_string(kind);
  }
}

TEST(TriplanarProject, SelectionMasksPartitionTheObject) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto s = active::testing::tiny_scene(static_cast<PrimitiveKind>(seed % 3), 32, seed);
    const auto geo = surface_geometry(s.x_d, s.cam);
    const auto plan = triplanar_plan(geo, {}, 2.0, 8, 8);
    for (std::size_t i = 0; i < geo.mask.size(); ++i) {
      double total = 0.0;
      for (int a = 0; a < 3; ++a) total += plan.selection[a][i * 3];
      EXPECT_EQ(total, geo.mask[i] ? 1.0 : 0.0);
    }
  }
}

TEST(TriplanarProject, GradientReachesOnlyVisibleTexels) {
  const auto s = active::testing::tiny_scene(PrimitiveKind::sphere, 32, 4);
  const auto geo = surface_geometry(s.x_d, s.cam);
  const auto plan = triplanar_plan(geo, {}, 2.0, 8, 8);
  Tensor eta = Tensor::full({8, 8, 3}, 0.5, true);
  sum(triplanar_project(eta, plan)).backward();
  double total = 0.0;
  for (double g : eta.grad()) total += g;
  std::size_t on = 0;
  for (auto m : geo.mask) on += m;
  EXPECT_EQ(total, 3.0 * static_cast<double>(on));
}

TEST(TriplanarProject, RejectsNonPositivePeriodOrScale) {
  const auto s = active::testing::tiny_scene(PrimitiveKind::sphere, 16, 1);
  const auto geo = surface_geometry(s.x_d, s.cam);
  EXPECT_THROW(triplanar_plan(geo, {}, 0.0, 4, 4), std::invalid_argument);
  ProjectionAugmentation bad;
  bad.scale = 0.0;
  EXPECT_THROW(triplanar_plan(geo, bad, 1.0, 4, 4), std::invalid_argument);
}
