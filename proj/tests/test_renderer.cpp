#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "active/checkpoint.hpp"
#include "active/renderer.hpp"
#include "support.hpp"

using namespace active;
using active::testing::gradcheck;
using active::testing::random_tensor;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  return Image::from_tensor(random_tensor({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3}, seed, 0, 1));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("active_test_" + std::to_string(::getpid()) + "_" + name);
}

Dataset tiny_dataset(std::uint64_t seed, const std::vector<Rgb>& colors) {
  SceneOptions opt;
  opt.image_size = 16;
  CameraPoseSet poses;
  poses.distances = {{6, 8}};
  return generate_dataset(poses, {PrimitiveObject::standard(PrimitiveKind::sphere),
                                  PrimitiveObject::standard(PrimitiveKind::box)},
                          colors, 2, seed, opt);
}

}  // namespace

TEST(Ssim, SelfSimilarityIsOne) {
  const auto a = random_image(16, 16, 1);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, ZerosAgainstOnesMatchesConstantImageFormula) {
  const Image zeros(8, 8, 3, 0.0), ones(8, 8, 3, 1.0);
  // Constant windows: sigma terms vanish, leaving C1 / (1 + C1).
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(zeros, ones), c1 / (1.0 + c1), 1e-15);
  EXPECT_LT(ssim(zeros, ones), 0.01);
}

TEST(Ssim, IsSymmetricAndBelowOneForDifferentImages) {
  const auto a = random_image(12, 10, 2), b = random_image(12, 10, 3);
  EXPECT_DOUBLE_EQ(ssim(a, b), ssim(b, a));
  EXPECT_LT(ssim(a, b), 0.5);
}

TEST(Ssim, RejectsTinyOrMismatchedImages) {
  EXPECT_THROW(ssim(Image(7, 16, 3), Image(7, 16, 3)), std::invalid_argument);
  EXPECT_THROW(ssim(Image(8, 8, 3), Image(8, 9, 3)), std::invalid_argument);
}

TEST(Ntr, IdentityHeadsPassTheProjectionThrough) {
  NtrModel m({4, 2});
  m.set_identity_heads();
  const Tensor ref = random_tensor({8, 8, 3}, 4, 0, 1);
  const Tensor eta_p = random_tensor({8, 8, 3}, 5, -0.5, 1.5);
  const Tensor out = m.forward(ref, eta_p);
  ASSERT_EQ(out.shape(), Shape({1, 8, 8, 3}));
  for (std::size_t i = 0; i < eta_p.size(); ++i) EXPECT_EQ(out[i], std::clamp(eta_p[i], 0.0, 1.0));
}

TEST(Ntr, OutputShapeAndRange) {
  NtrModel m({4, 3});
  const Tensor out = m.forward(random_tensor({2, 16, 8, 3}, 6, 0, 1), random_tensor({2, 16, 8, 3}, 7, 0, 1));
  ASSERT_EQ(out.shape(), Shape({2, 16, 8, 3}));
  for (double v : out.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Ntr, ShapeErrors) {
  NtrModel m({4, 3});
  EXPECT_THROW(m.forward(Tensor::zeros({8, 8, 3}), Tensor::zeros({16, 8, 3})), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({12, 8, 3}), Tensor::zeros({12, 8, 3})), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({8, 8}), Tensor::zeros({8, 8})), ShapeError);
}

TEST(Ntr, TransformationMapsIgnoreTheTexture) {
  NtrModel m({4, 8});
  const Tensor ref = random_tensor({8, 8, 3}, 8, 0, 1);
  const auto tf1 = m.encode(ref), tf2 = m.encode(ref);
  EXPECT_TRUE(std::equal(tf1.multiplier.data().begin(), tf1.multiplier.data().end(), tf2.multiplier.data().begin()));
  // forward with two textures equals composing each onto the same maps.
  for (std::uint64_t seed : {9u, 10u}) {
    const Tensor eta_p = random_tensor({8, 8, 3}, seed, 0, 1);
    const Tensor a = m.forward(ref, eta_p), b = NtrModel::compose(eta_p, tf1);
    EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  }
}

TEST(Ntr, ForwardGradientsMatchFiniteDifferences) {
  NtrModel m({2, 4});
  const Tensor ref = random_tensor({8, 8, 3}, 11, 0, 1);
  // Keep the composite away from the clamp bounds so it is smooth at the probe points.
  m.set_identity_heads();
  for (auto& p : m.parameters())
    if (p.name.rfind("tf_", 0) == 0 && p.name.find("kernel") != std::string::npos)
      for (auto& v : p.value.mutable_data()) v = 0.01;
  const Tensor w = random_tensor({1, 8, 8, 3}, 12);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Tensor eta_p = random_tensor({8, 8, 3}, 20 + seed, 0.3, 0.7);
    const auto g = gradcheck([&](const Tensor& e) { return sum(mul(m.forward(ref, e), w)); }, eta_p);
    EXPECT_LT(g.max_rel_error, 1e-6);
    const auto gr = gradcheck([&](const Tensor& r) { return sum(mul(m.forward(r, eta_p), w)); }, ref, 40, seed);
    EXPECT_LT(gr.max_rel_error, 1e-4);
  }
}

TEST(Ntr, CheckpointRoundTripIsBitExact) {
  NtrModel m({4, 13});
  const auto path = temp_path("ntr.actw");
  write_weights(path, m.to_weight_file());
  const NtrModel back = NtrModel::from_weight_file(read_weights(path));
  const Tensor ref = random_tensor({8, 8, 3}, 14, 0, 1), eta = random_tensor({8, 8, 3}, 15, 0, 1);
  const Tensor a = m.forward(ref, eta), b = back.forward(ref, eta);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_EQ(back.parameter_count(), m.parameter_count());
  EXPECT_EQ(back.config().base_width, 4);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsWrongKindTruncationAndGarbage) {
  NtrModel m({2, 1});
  WeightFile wf = m.to_weight_file();
  wf.kind = "detector";
  EXPECT_THROW(NtrModel::from_weight_file(wf), std::runtime_error);

  const auto path = temp_path("trunc.actw");
  write_weights(path, m.to_weight_file());
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  EXPECT_THROW(read_weights(path), std::runtime_error);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "not a weight file";
  }
  EXPECT_THROW(read_weights(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_weights(path), std::runtime_error);
}

TEST(NtrTrain, LossDecreasesAndReportIsFilled) {
  const auto train = tiny_dataset(1, boundary_colors());
  const auto test = tiny_dataset(2, {{0.3, 0.6, 0.2}});
  NtrModel m({4, 5});
  NtrTrainOptions opt;
  opt.epochs = 4;
  opt.batch_size = 6;
  const auto rep = ntr_train(m, train, opt, &test);
  ASSERT_EQ(rep.epoch_loss.size(), 4u);
  EXPECT_LT(rep.epoch_loss.back(), rep.epoch_loss.front());
  EXPECT_EQ(rep.train_records, 36u);
  EXPECT_EQ(rep.test_records, 4u);
  EXPECT_GT(rep.heldout_ssim, 0.0);
  EXPECT_LE(rep.heldout_ssim, 1.0);
  EXPECT_FALSE(std::isnan(rep.baseline_ssim));
}

TEST(NtrTrain, EmptyDatasetRejected) {
  NtrModel m({2, 1});
  EXPECT_THROW(ntr_train(m, Dataset{}, {}), std::invalid_argument);
}
