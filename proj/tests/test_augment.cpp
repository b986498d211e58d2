#include <gtest/gtest.h>

#include "active/augment.hpp"
#include "active/detector.hpp"
#include "support.hpp"

using namespace active;
using active::testing::gradcheck;
using active::testing::random_tensor;

TEST(Roa, IdentityIsBitExact) {
  const Tensor img = random_tensor({12, 10, 3}, 1, 0, 1);
  const Tensor out = apply_roa(img, RoaRecord::identity(12, 10));
  ASSERT_EQ(out.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(out[i], img[i]);
  DigitalTransformSet none{0.0, 1.0, 1.0, 1.0, 1.0};
  auto rng = make_stream(2);
  const auto r = roa(img, none, rng);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(r.image[i], img[i]);
}

TEST(Roa, BrightnessOnMidGray) {
  auto rec = RoaRecord::identity(4, 4);
  rec.brightness = 0.25;
  const Tensor out = apply_roa(Tensor::full({4, 4, 3}, 0.5), rec);
  for (double v : out.data()) EXPECT_EQ(v, 0.75);
}

TEST(Roa, ContrastPivotsAtMidGrayAndClamps) {
  auto rec = RoaRecord::identity(1, 3);
  rec.contrast = 2.0;
  const Tensor out = apply_roa(Tensor({1, 3, 1}, {0.5, 0.6, 0.9}), rec);
  EXPECT_EQ(out[0], 0.5);
  EXPECT_NEAR(out[1], 0.7, 1e-15);
  EXPECT_EQ(out[2], 1.0);
}

TEST(Roa, HalfScaleSubsamplesOntoGrayCanvas) {
  RoaRecord rec{4, 4, 2, 2, 1, 2, 1.0, 0.0};
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i) / 16.0;
  const Tensor out = apply_roa(Tensor({4, 4, 1}, v), rec);
  // Output (1,2) samples source (1,1); (2,3) samples (3,3).
  EXPECT_EQ(out[1 * 4 + 2], v[1 * 4 + 1]);
  EXPECT_EQ(out[2 * 4 + 3], v[3 * 4 + 3]);
  EXPECT_EQ(out[0], kCanvasFill);
  EXPECT_EQ(out[3 * 4 + 0], kCanvasFill);
}

TEST(Roa, DrawsStayInRangeAndAreDeterministic) {
  const DigitalTransformSet td;
  auto a = make_stream(5), b = make_stream(5);
  for (int i = 0; i < 500; ++i) {
    const auto r = sample_roa(td, 64, 48, a);
    const auto s = sample_roa(td, 64, 48, b);
    EXPECT_EQ(r.offset_x, s.offset_x);
    EXPECT_EQ(r.contrast, s.contrast);
    EXPECT_GE(r.brightness, -td.brightness_delta);
    EXPECT_LE(r.brightness, td.brightness_delta);
    EXPECT_GE(r.contrast, td.contrast_min);
    EXPECT_LE(r.contrast, td.contrast_max);
    EXPECT_GE(r.scaled_h, static_cast<int>(64 * td.scale_min) - 1);
    EXPECT_LE(r.offset_y + r.scaled_h, 64);
    EXPECT_LE(r.offset_x + r.scaled_w, 48);
    EXPECT_GE(r.offset_x, 0);
  }
}

TEST(Roa, InvalidRangesAndCanvasMismatchRejected) {
  DigitalTransformSet td;
  td.scale_max = 1.2;
  EXPECT_THROW(td.validate(), std::invalid_argument);
  td = {};
  td.contrast_min = 0.0;
  EXPECT_THROW(td.validate(), std::invalid_argument);
  td = {};
  td.brightness_delta = -0.1;
  EXPECT_THROW(td.validate(), std::invalid_argument);
  EXPECT_THROW(apply_roa(Tensor::zeros({4, 4, 3}), RoaRecord::identity(5, 4)), ShapeError);
  RoaRecord big = RoaRecord::identity(4, 4);
  big.scaled_h = 5;
  EXPECT_THROW(apply_roa(Tensor::zeros({4, 4, 3}), big), std::invalid_argument);
}

TEST(Roa, MaskFollowsTheImage) {
  // The resampled mask must cover exactly the pixels whose colour came from
  // the object: compare against an image that is 1 on the object, 0 elsewhere.
  DigitalTransformSet td;
  td.brightness_delta = 0.0;
  td.contrast_min = td.contrast_max = 1.0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = active::testing::tiny_scene(static_cast<PrimitiveKind>(seed % 3), 48, seed);
    std::vector<double> indicator(s.x_m.begin(), s.x_m.end());
    auto rng = make_stream(seed, 0x77);
    const auto r = roa(Tensor({48, 48, 1}, indicator), td, rng);
    const Mask moved = apply_roa(s.x_m, r.record);
    for (std::size_t p = 0; p < moved.size(); ++p) EXPECT_EQ(moved[p] != 0, r.image[p] == 1.0);
  }
}

TEST(Roa, TransformedBoxBracketsTheResampledMask) {
  DigitalTransformSet td;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto s = active::testing::tiny_scene(static_cast<PrimitiveKind>(seed % 3), 48, seed);
    auto rng = make_stream(seed, 0x78);
    const auto rec = sample_roa(td, 48, 48, rng);
    const Box exact = mask_bbox(apply_roa(s.x_m, rec), 48, 48);
    const Box approx = transform_box(s.gt_box, rec);
    // Subsampling may skip the outermost mask rows or columns, never add any.
    EXPECT_LE(approx.x_min, exact.x_min);
    EXPECT_LE(approx.y_min, exact.y_min);
    EXPECT_GE(approx.x_max, exact.x_max);
    EXPECT_GE(approx.y_max, exact.y_max);
    EXPECT_GT(iou(approx, exact), 0.7);
  }
  EXPECT_EQ(transform_box(Box{1, 1, 5, 5}, RoaRecord::identity(8, 8)), (Box{1, 1, 5, 5}));
}

TEST(Roa, GradientFlowsThroughResampleAndColorMap) {
  RoaRecord rec{6, 6, 4, 3, 1, 2, 0.8, 0.05};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor img = random_tensor({6, 6, 3}, seed, 0.1, 0.9);
    const Tensor w = random_tensor({6, 6, 3}, seed + 40);
    EXPECT_LT(gradcheck([&](const Tensor& x) { return sum(mul(apply_roa(x, rec), w)); }, img).max_rel_error, 1e-6);
  }
}

TEST(ProjectionAug, DrawsStayInRangeAndAreDeterministic) {
  auto a = make_stream(9), b = make_stream(9);
  const ProjectionAugRanges ranges;
  for (int i = 0; i < 500; ++i) {
    const auto x = sample_projection_aug(a, ranges), y = sample_projection_aug(b, ranges);
    EXPECT_EQ(x.shift, y.shift);
    EXPECT_EQ(x.scale, y.scale);
    for (double s : x.shift) EXPECT_LE(std::fabs(s), ranges.shift);
    EXPECT_GE(x.scale, 0.75);
    EXPECT_LE(x.scale, 1.25);
  }
  auto c = make_stream(1);
  const auto none = sample_projection_aug(c, {0.0, 0.0});
  EXPECT_EQ(none.shift, (Vec3{0, 0, 0}));
  EXPECT_EQ(none.scale, 1.0);
}

TEST(ProjectionAug, IdentityReproducesUnaugmentedProjection) {
  const auto s = active::testing::tiny_scene(PrimitiveKind::capsule, 32, 6);
  const Tensor eta = random_tensor({16, 16, 3}, 3, 0, 1);
  auto rng = make_stream(1);
  const Tensor a = triplanar_project(eta, s.x_d, s.cam, sample_projection_aug(rng, {0.0, 0.0}), 1.0);
  const Tensor b = triplanar_project(eta, s.x_d, s.cam, ProjectionAugmentation{}, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}
