#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "active/losses.hpp"
#include "support.hpp"

using namespace active;
using active::testing::gradcheck;
using active::testing::random_tensor;

namespace {

// A hand-built detector output for one image: each cell has a box, a
// class-confidence row and an objectness value.
DetectorOutput fake_output(const std::vector<Box>& boxes, const std::vector<std::vector<double>>& conf,
                           const std::vector<double>& obj, bool grad = false) {
  const std::size_t C = boxes.size(), Y = conf.front().size();
  std::vector<double> b, c;
  for (const auto& box : boxes) b.insert(b.end(), {box.x_min, box.y_min, box.x_max, box.y_max});
  for (const auto& row : conf) c.insert(c.end(), row.begin(), row.end());
  DetectorOutput out;
  out.boxes = Tensor({1, C, 4}, b);
  out.class_conf = Tensor({1, C, Y}, c, grad);
  out.objectness = Tensor({1, C}, obj, grad);
  out.batch = 1;
  out.cells = C;
  out.classes = Y;
  return out;
}

const Box kGt{0, 0, 10, 10};
const Box kMiss{20, 20, 30, 30};

Tensor constant_rgb(std::size_t n, const Rgb& c) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n * n; ++i) v.insert(v.end(), c.begin(), c.end());
  return Tensor({n, n, 3}, v);
}

}  // namespace

TEST(FLog, KnownValues) {
  EXPECT_EQ(f_log(0.0), 0.0);
  EXPECT_NEAR(f_log(0.5), std::log(2.0), 1e-12);
  EXPECT_NEAR(f_log(1.0), -std::log(1e-6), 1e-9);
  EXPECT_NEAR(f_log(1.0), 13.8155, 1e-4);
  EXPECT_EQ(f_log(Tensor::scalar(0.5)).item(), f_log(0.5));
}

TEST(StealthLoss, NoValidBoxGivesZero) {
  const auto out = fake_output({kMiss, Box{5, 5, 25, 25}}, {{0.9, 0.1}, {0.8, 0.2}}, {0.9, 0.9});
  EXPECT_EQ(stealth_loss(out, 0, kGt, 0.5).item(), 0.0);
}

TEST(StealthLoss, SingleValidBox) {
  const auto out = fake_output({kGt, kMiss}, {{0.8, 0.2}, {0.99, 0.01}}, {0.9, 0.99});
  EXPECT_NEAR(stealth_loss(out, 0, kGt, 0.5).item(), -std::log(1.0 - 0.72), 1e-12);
  EXPECT_NEAR(stealth_loss(out, 0, kGt, 0.5).item(), 1.2730, 1e-4);
}

TEST(StealthLoss, OnlyTheStrongestValidBoxCarriesGradient) {
  auto out = fake_output({kGt, Box{0, 0, 10, 9}}, {{0.5, 0.5}, {0.75, 0.25}}, {0.6, 0.8}, true);
  const Tensor loss = stealth_loss(out, 0, kGt, 0.5);
  EXPECT_NEAR(loss.item(), -std::log(1.0 - 0.6), 1e-12);
  loss.backward();
  EXPECT_EQ(out.objectness.grad()[0], 0.0);
  EXPECT_EQ(out.class_conf.grad()[0], 0.0);
  EXPECT_EQ(out.class_conf.grad()[1], 0.0);
  EXPECT_GT(out.objectness.grad()[1], 0.0);
  EXPECT_GT(out.class_conf.grad()[2], 0.0);
}

TEST(StealthLoss, ThresholdIsStrict) {
  // IoU exactly 0.5 is not above t = 0.5.
  const auto out = fake_output({Box{0, 0, 10, 5}}, {{1.0}}, {0.5});
  EXPECT_EQ(valid_box_mask(out, 0, kGt, 0.5)[0], 0.0);
  EXPECT_EQ(valid_box_mask(out, 0, kGt, 0.49)[0], 1.0);
}

TEST(StealthLoss, EmptyDetectionsRejected) {
  DetectorOutput empty;
  EXPECT_THROW(stealth_loss(empty, 0, kGt, 0.5), std::invalid_argument);
}

TEST(SmoothLoss, ConstantIsZero) {
  EXPECT_EQ(smooth_loss(constant_rgb(8, {0.2, 0.4, 0.9})).item(), 0.0);
}

TEST(SmoothLoss, CheckerboardIsTwoLnTwo) {
  std::vector<double> v(64 * 64);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) v[r * 64 + c] = (r + c) % 2 ? 0.75 : 0.25;
  EXPECT_NEAR(smooth_loss(Tensor({64, 64, 1}, v)).item(), 2.0 * std::log(2.0), 1e-9);
}

TEST(SmoothLoss, RejectsTinyTexture) {
  EXPECT_THROW(smooth_loss(Tensor::zeros({1, 5, 3})), std::exception);
}

TEST(SmoothLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor tex = random_tensor({6, 6, 3}, seed, 0, 1);
    EXPECT_LT(gradcheck([](const Tensor& t) { return smooth_loss(t); }, tex).max_rel_error, 1e-4);
  }
}

TEST(KMeans, SeparableColorsAreRecoveredExactly) {
  const std::vector<Rgb> colors{{0.9, 0.1, 0.1}, {0.1, 0.8, 0.2}, {0.2, 0.2, 0.7}};
  std::vector<Image> bgs;
  for (int i = 0; i < 3; ++i) {
    Image img(4, 4, 3);
    for (std::size_t p = 0; p < 16; ++p)
      for (int c = 0; c < 3; ++c) img.pixels[p * 3 + c] = colors[(p + static_cast<std::size_t>(i)) % 3][c];
    bgs.push_back(img);
  }
  const auto set = extract_dominant_colors(bgs, 3, nullptr, 4);
  ASSERT_EQ(set.colors.size(), 3u);
  for (const auto& want : colors)
    EXPECT_EQ(std::count(set.colors.begin(), set.colors.end(), want), 1);
}

TEST(KMeans, SingleClusterIsTheMean) {
  const Image img = Image::from_tensor(random_tensor({5, 7, 3}, 3, 0, 1));
  Rgb mean{0, 0, 0};
  for (std::size_t p = 0; p < 35; ++p)
    for (int c = 0; c < 3; ++c) mean[c] += img.pixels[p * 3 + c] / 35.0;
  const auto set = extract_dominant_colors({img}, 1);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(set.colors[0][c], mean[c], 1e-12);
}

TEST(KMeans, MaskedPixelsAreSkipped) {
  Image img(2, 2, 3, 0.25);
  for (int c = 0; c < 3; ++c) img.at(0, 0, c) = 1.0;
  const std::vector<Mask> masks{{1, 0, 0, 0}};
  const auto set = extract_dominant_colors({img}, 1, &masks);
  EXPECT_EQ(set.colors[0], (Rgb{0.25, 0.25, 0.25}));
}

TEST(KMeans, FixedSeedIsDeterministicAndNoWorseThanAlternatives) {
  std::vector<Rgb> pixels;
  auto rng = make_stream(8);
  for (int i = 0; i < 400; ++i) pixels.push_back({uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)});
  EXPECT_EQ(kmeans(pixels, 4, 2), kmeans(pixels, 4, 2));
  // A Lloyd fixed point: every centroid is the mean of its assigned pixels.
  const auto c = kmeans(pixels, 4, 2);
  std::vector<Rgb> sums(4, Rgb{0, 0, 0});
  std::vector<int> counts(4, 0);
  for (const auto& p : pixels) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k)
      if (detail::sq_dist(p, c[k]) < detail::sq_dist(p, c[best])) best = k;
    for (int ch = 0; ch < 3; ++ch) sums[best][ch] += p[ch];
    ++counts[best];
  }
  for (std::size_t k = 0; k < 4; ++k)
    for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(c[k][ch], sums[k][ch] / counts[k], 1e-6);
  // Largest cluster first.
  EXPECT_TRUE(std::is_sorted(counts.begin(), counts.end(), std::greater<>()));
}

TEST(KMeans, Errors) {
  EXPECT_THROW(kmeans({}, 1), std::invalid_argument);
  EXPECT_THROW(kmeans({{0, 0, 0}}, 2), std::invalid_argument);
  const std::vector<Mask> all{{1, 1, 1, 1}};
  EXPECT_THROW(extract_dominant_colors({Image(2, 2, 3)}, 1, &all), std::invalid_argument);
}

TEST(ColorFile, RoundTripsExactly) {
  DominantColorSet set;
  set.colors = {{0.1, 0.2, 0.30000000000000004}, {1, 0, 0.5}};
  const auto path = std::filesystem::temp_directory_path() / ("active_colors_" + std::to_string(::getpid()));
  write_colors(path, set);
  const auto back = read_colors(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.colors, set.colors);
}

TEST(CamouflageLoss, ZeroOnPaletteAndMaximalAgainstBlack) {
  DominantColorSet palette;
  palette.colors = {{0.2, 0.3, 0.4}, {0.9, 0.9, 0.1}};
  EXPECT_EQ(camouflage_loss(constant_rgb(4, palette.colors[1]), palette).item(), 0.0);
  palette.colors = {{0, 0, 0}};
  EXPECT_NEAR(camouflage_loss(constant_rgb(4, {1, 1, 1}), palette).item(), -std::log(1e-6), 1e-9);
  EXPECT_NEAR(camouflage_loss(constant_rgb(4, {1, 1, 1}), palette).item(), 13.8155, 1e-4);
}

TEST(CamouflageLoss, UsesNearestPaletteColor) {
  DominantColorSet palette;
  palette.colors = {{0, 0, 0}, {1, 1, 1}};
  // Distance to white is sqrt(3 * 0.04) / sqrt(3) = 0.2.
  EXPECT_NEAR(camouflage_loss(constant_rgb(3, {0.8, 0.8, 0.8}), palette).item(), -std::log(0.8), 1e-12);
}

TEST(CamouflageLoss, GradientMatchesFiniteDifferences) {
  DominantColorSet palette;
  palette.colors = {{0.1, 0.5, 0.2}, {0.7, 0.6, 0.9}, {0.4, 0.4, 0.4}};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor tex = random_tensor({5, 5, 3}, seed, 0, 1);
    EXPECT_LT(gradcheck([&](const Tensor& t) { return camouflage_loss(t, palette); }, tex).max_rel_error, 1e-4);
  }
}

TEST(TotalLoss, WeightedSum) {
  const Tensor a = Tensor::scalar(1.0), s = Tensor::scalar(0.4), c = Tensor::scalar(0.8);
  EXPECT_EQ(total_loss(a, s, c, {1, 0, 0, 0.5}).item(), 1.0);
  EXPECT_EQ(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), {}).item(), 0.0);
  EXPECT_NEAR(total_loss(a, s, c, {1, 0.25, 0.25, 0.5}).item(), 1.3, 1e-15);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW(LossWeights{}.validate());
  EXPECT_THROW((LossWeights{-1, 0, 0, 0.5}.validate()), std::invalid_argument);
  EXPECT_THROW((LossWeights{1, 0, 0, 1.0}.validate()), std::invalid_argument);
}
