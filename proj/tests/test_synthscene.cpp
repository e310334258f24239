#include <gtest/gtest.h>

#include "gombf/synthscene.hpp"
#include "test_support.hpp"

namespace gombf {
namespace {

bool same_image(const GrayImage& a, const GrayImage& b) {
  return a.width() == b.width() && a.height() == b.height() && a.pixels() == b.pixels();
}

TEST(ToyModel, DeterministicPerSeed) {
  const auto a = testing::small_toy(5);
  const auto b = testing::small_toy(5);
  const auto c = testing::small_toy(6);
  EXPECT_TRUE(a.model == b.model);
  EXPECT_TRUE(same_matrix(a.identity_sigma, b.identity_sigma));
  EXPECT_FALSE(a.model == c.model);
}

TEST(ToyModel, MeanNeutralShapeIsStoredMean) {
  const auto toy = testing::small_toy(7);
  const Vec s = evaluate_shape(toy.model, toy.model.mean_identity(),
                               Vec::Zero(toy.model.expression_rank()));
  EXPECT_TRUE(s == toy.model.identity_basis().col(0));
}

TEST(ToyModel, BasisNormsOverManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    ToyModelSpec spec;
    spec.vertices = 200;
    spec.identity_rank = 4;
    spec.expression_rank = 3;
    spec.seed = seed;
    const auto toy = make_toy_model(spec);
    const Mat& id = toy.model.identity_basis();
    const double n = spec.vertices;
    for (int j = 1; j <= spec.identity_rank; ++j) {
      EXPECT_NEAR(id.col(j).norm(), std::sqrt(n), 1e-9 * std::sqrt(n));
      for (int k = 1; k < j; ++k) EXPECT_LT(std::abs(id.col(j).dot(id.col(k))), 1e-8 * n);
    }
    const Mat& ex = toy.model.expression_basis();
    for (int j = 0; j < spec.expression_rank; ++j) {
      double peak = 0.0;
      for (int i = 0; i < spec.vertices; ++i) peak = std::max(peak, ex.col(j).segment<3>(3 * i).norm());
      EXPECT_NEAR(peak, spec.expression_scale * spec.face_width, 1e-9);
    }
    for (Eigen::Index i = 0; i < toy.identity_sigma.size(); ++i)
      EXPECT_NEAR(toy.identity_sigma[i],
                  spec.identity_scale * spec.face_width * std::pow(spec.identity_decay, i), 1e-12);
    const auto& iod = toy.model.interocular_pair();
    const Vec3 l = id.col(0).segment<3>(3 * toy.model.landmark_indices()[iod[0]]);
    const Vec3 r = id.col(0).segment<3>(3 * toy.model.landmark_indices()[iod[1]]);
    EXPECT_GT((l - r).norm(), 0.2 * spec.face_width);
  }
}

TEST(ToyModel, LandmarksAreDistinctVertices) {
  const auto toy = testing::small_toy(8);
  auto idx = toy.model.landmark_indices();
  EXPECT_EQ(idx.size(), 66u);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
}

TEST(ToyModel, InfeasibleSpecsAreRejected) {
  ToyModelSpec spec;
  spec.vertices = 50;  // fewer than 66 landmarks
  EXPECT_THROW(make_toy_model(spec), Error);
  spec = {};
  spec.identity_rank = 0;
  EXPECT_THROW(make_toy_model(spec), Error);
  spec = {};
  spec.face_width = -1.0;
  EXPECT_THROW(make_toy_model(spec), Error);
}

class RenderFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    toy = testing::small_toy(9);
    Rng rng(10);
    alpha = sample_identity(toy, rng);
    p = MotionParams(toy.model.motion_layout());
    p.expression().setConstant(0.3);
    p.rotation() << 0.1, 0.05, -0.02;
    p.translation() << 0.0, 0.0, 1000.0;
  }
  ToyModel toy;
  Vec alpha;
  MotionParams p;
  Camera cam = testing::centered_camera();
};

TEST_F(RenderFixture, OutOfFrameFaceGivesBackground) {
  p.translation().x() = 500.0;
  RenderOptions opt;
  const GrayImage img = render_frame(toy.model, alpha, cam, p, 3, opt);
  for (float v : img.pixels()) EXPECT_EQ(v, opt.background);
}

TEST_F(RenderFixture, TranslationShiftsSplatCentres) {
  const double dx = 2.5;
  MotionParams moved = p;
  moved.translation().x() += dx;
  const Points2 a = splat_centers(toy.model, alpha, cam, p);
  const Points2 b = splat_centers(toy.model, alpha, cam, moved);
  const Vec shape = evaluate_shape(toy.model, alpha, p.expression());
  const Mat3 r = euler_to_rotation(p.rotation());
  for (int i = 0; i < toy.model.vertex_count(); ++i) {
    const double z = (r * shape.segment<3>(3 * i) + p.translation()).z();
    EXPECT_NEAR(b(0, i) - a(0, i), cam.focal * dx / z, 1e-9);
    EXPECT_NEAR(b(1, i) - a(1, i), 0.0, 1e-9);
  }
}

TEST_F(RenderFixture, ZeroDisplacementCentresAreProjections) {
  const Points2 c = splat_centers(toy.model, alpha, cam, p);
  const Vec shape = evaluate_shape(toy.model, alpha, p.expression());
  for (int i = 0; i < toy.model.vertex_count(); ++i)
    EXPECT_LT((c.col(i) - project_point(shape.segment<3>(3 * i), p.rotation(), p.translation(), cam))
                  .norm(),
              1e-9);
}

TEST_F(RenderFixture, DeterministicAndInRange) {
  const GrayImage a = render_frame(toy.model, alpha, cam, p, 11);
  const GrayImage b = render_frame(toy.model, alpha, cam, p, 11);
  EXPECT_TRUE(same_image(a, b));
  for (float v : a.pixels()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_FALSE(same_image(a, render_frame(toy.model, alpha, cam, p, 12)));
}

TEST_F(RenderFixture, BehindCameraIsAnError) {
  p.translation().z() = -100.0;
  EXPECT_THROW(render_frame(toy.model, alpha, cam, p, 1), Error);
}

TEST(Sequence, LengthOneMatchesDirectRender) {
  const auto toy = testing::small_toy(12);
  const SceneSeeds seeds{1, 2, 3};
  const auto seq = generate_sequence(toy, {}, 1, seeds);
  ASSERT_EQ(seq.frames.size(), 1u);
  ASSERT_EQ(seq.ground_truth.size(), 1u);
  EXPECT_TRUE(same_image(seq.frames[0], render_frame(toy.model, seq.statics.identity, seq.statics.camera,
                                                     seq.ground_truth[0], seeds.appearance)));
  EXPECT_TRUE(seq.first_frame_landmarks ==
              landmark_positions(toy.model, seq.statics.identity, seq.statics.camera, seq.ground_truth[0]));
}

TEST(Sequence, FrozenWalkRepeatsFrames) {
  const auto toy = testing::small_toy(13);
  RandomWalkConfig cfg;
  cfg.frozen = true;
  const auto seq = generate_sequence(toy, cfg, 6, {4, 5, 6});
  for (std::size_t f = 1; f < seq.frames.size(); ++f) {
    EXPECT_TRUE(same_image(seq.frames[f], seq.frames[0]));
    EXPECT_TRUE(seq.ground_truth[f].values() == seq.ground_truth[0].values());
  }
}

TEST(Sequence, IncrementsBoundedOverLongWalk) {
  const auto toy = testing::small_toy(14);
  RandomWalkConfig cfg;
  RenderOptions tiny;
  tiny.width = 8;
  tiny.height = 8;
  const auto seq = generate_sequence(toy, cfg, 1000, {7, 8, 9}, tiny);
  const Vec bound = walk_increment_bounds(toy, cfg, 1000.0).values();
  for (std::size_t f = 1; f < seq.ground_truth.size(); ++f) {
    const Vec step = (seq.ground_truth[f].values() - seq.ground_truth[f - 1].values()).cwiseAbs();
    EXPECT_TRUE((step.array() <= bound.array() + 1e-12).all()) << "frame " << f;
    const auto e = seq.ground_truth[f].expression();
    EXPECT_GE(e.minCoeff(), 0.0);
    EXPECT_LE(e.maxCoeff(), 1.0);
  }
}

TEST(Sequence, GroundTruthReproducesEveryFrame) {
  const auto toy = testing::small_toy(15);
  const auto seq = generate_sequence(toy, {}, 8, {10, 11, 12}, {}, 1000.0, 1000.0, 3);
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    EXPECT_TRUE(same_image(seq.frames[f], render_frame(toy.model, seq.statics.identity, seq.statics.camera,
                                                       seq.ground_truth[f], seq.seeds.appearance)));
}

TEST(Sequence, DeterministicAcrossThreadCounts) {
  const auto toy = testing::small_toy(16);
  const auto a = generate_sequence(toy, {}, 6, {1, 1, 1}, {}, 1000.0, 1000.0, 1);
  const auto b = generate_sequence(toy, {}, 6, {1, 1, 1}, {}, 1000.0, 1000.0, 4);
  for (std::size_t f = 0; f < a.frames.size(); ++f) {
    EXPECT_TRUE(same_image(a.frames[f], b.frames[f]));
    EXPECT_TRUE(a.ground_truth[f].values() == b.ground_truth[f].values());
  }
}

TEST(Sequence, LandmarkNoiseOnlyTouchesDetections) {
  const auto toy = testing::small_toy(17);
  RandomWalkConfig noisy;
  noisy.landmark_noise = 0.5;
  const auto clean = generate_sequence(toy, {}, 2, {3, 3, 3});
  const auto seq = generate_sequence(toy, noisy, 2, {3, 3, 3});
  EXPECT_TRUE(seq.ground_truth[1].values() == clean.ground_truth[1].values());
  const double rms = std::sqrt((seq.first_frame_landmarks - clean.first_frame_landmarks).squaredNorm() /
                               static_cast<double>(seq.first_frame_landmarks.size()));
  EXPECT_GT(rms, 0.3);
  EXPECT_LT(rms, 0.7);
}

TEST(Sequence, ZeroLengthIsAnError) {
  const auto toy = testing::small_toy(18);
  EXPECT_THROW(generate_sequence(toy, {}, 0, {}), Error);
}

}  // namespace
}  // namespace gombf
