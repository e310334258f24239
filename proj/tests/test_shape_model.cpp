#include <gtest/gtest.h>

#include <numbers>

#include "gombf/shape_model.hpp"
#include "test_support.hpp"

namespace gombf {
namespace {

using testing::random_matrix;
using testing::random_vector;

// n = 4 vertices, m_id = 2, m_exp = 3, all four vertices are landmarks.
ParametricShapeModel tiny_model(Rng& rng) {
  Mat id = random_matrix(12, 3, rng);
  Mat ex = random_matrix(12, 3, rng);
  return ParametricShapeModel(id, ex, {0, 1, 2, 3}, {0, 1});
}

TEST(ShapeModel, ZeroCoefficientsGiveMeanFace) {
  Rng rng(1);
  const auto m = tiny_model(rng);
  const Vec s = evaluate_shape(m, m.mean_identity(), Vec::Zero(3));
  EXPECT_TRUE(s == m.identity_basis().col(0));
}

TEST(ShapeModel, SingleBlendshape) {
  Rng rng(2);
  const auto m = tiny_model(rng);
  for (int j = 0; j < 3; ++j) {
    const Vec s = evaluate_shape(m, m.mean_identity(), Vec::Unit(3, j));
    const Vec expected = m.identity_basis().col(0) + m.expression_basis().col(j);
    EXPECT_LT((s - expected).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(ShapeModel, MatchesDenseProductOracle) {
  Rng rng(3);
  const auto m = tiny_model(rng);
  for (int trial = 0; trial < 20; ++trial) {
    Vec alpha = random_vector(3, rng);
    alpha[0] = 1.0;
    const Vec delta = random_vector(3, rng);
    Vec oracle = Vec::Zero(12);
    for (int r = 0; r < 12; ++r) {
      for (int c = 0; c < 3; ++c) oracle[r] += m.identity_basis()(r, c) * alpha[c];
      for (int c = 0; c < 3; ++c) oracle[r] += m.expression_basis()(r, c) * delta[c];
    }
    EXPECT_LT((evaluate_shape(m, alpha, delta) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ShapeModel, LinearInExpression) {
  Rng rng(4);
  const auto m = tiny_model(rng);
  Vec alpha = random_vector(3, rng);
  alpha[0] = 1.0;
  const Vec d1 = random_vector(3, rng), d2 = random_vector(3, rng);
  const Vec lhs = evaluate_shape(m, alpha, d1) + m.expression_basis() * d2;
  const Vec rhs = evaluate_shape(m, alpha, d1 + d2);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ShapeModel, RejectsMismatchedCoefficients) {
  Rng rng(5);
  const auto m = tiny_model(rng);
  try {
    evaluate_shape(m, Vec::Ones(2), Vec::Zero(3));
    FAIL() << "expected a dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
    EXPECT_NE(std::string(e.what()).find("identity coefficient length"), std::string::npos);
  }
  EXPECT_THROW(evaluate_shape(m, m.mean_identity(), Vec::Zero(4)), Error);
}

TEST(ShapeModel, RejectsInvalidConstruction) {
  Rng rng(6);
  const Mat id = random_matrix(12, 3, rng), ex = random_matrix(12, 2, rng);
  EXPECT_THROW(ParametricShapeModel(id, ex, {0, 4}, {0, 1}), Error);
  EXPECT_THROW(ParametricShapeModel(id, ex, {0, 1, 2}, {1, 1}), Error);
  EXPECT_THROW(ParametricShapeModel(id, ex, {0, 1, 2}, {0, 3}), Error);
  EXPECT_THROW(ParametricShapeModel(id, random_matrix(9, 2, rng), {0}, {0, 0}), Error);
}

TEST(MotionParams, FullScaleDimension) {
  const MotionLayout layout{46, 66};
  EXPECT_EQ(layout.dim(), 184);
  MotionParams p(layout);
  p.values().setLinSpaced(184, 0.0, 183.0);
  EXPECT_EQ(p.expression()[0], 0.0);
  EXPECT_EQ(p.rotation()[0], 46.0);
  EXPECT_EQ(p.translation()[0], 49.0);
  EXPECT_EQ(p.displacements()[0], 52.0);
  EXPECT_EQ(p.displacements().size(), 132);
  EXPECT_THROW(MotionParams(layout, Vec::Zero(10)), Error);
}

TEST(Camera, RejectsNonPositiveFocal) {
  EXPECT_THROW(Camera(0.0, 1.0, 1.0), Error);
  EXPECT_THROW(Camera(-5.0, 1.0, 1.0), Error);
}

TEST(Rotation, ZeroAnglesGiveIdentity) {
  EXPECT_TRUE(euler_to_rotation(Vec3::Zero()) == Mat3::Identity());
}

TEST(Rotation, HalfTurnYawFlipsX) {
  const Vec3 v = euler_to_rotation(Vec3(std::numbers::pi, 0, 0)) * Vec3(1, 0, 0);
  EXPECT_LT((v - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(Rotation, OrthonormalForRandomAngles) {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-std::numbers::pi, std::numbers::pi);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = euler_to_rotation(Vec3(u(rng), u(rng), u(rng)));
    EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(Rotation, EulerRoundTripAndDerivatives) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 theta(u(rng), u(rng), u(rng));
    EXPECT_LT((rotation_to_euler(euler_to_rotation(theta)) - theta).norm(), 1e-10);
    const auto d = euler_rotation_derivatives(theta);
    for (int a = 0; a < 3; ++a) {
      const double h = 1e-6;
      Vec3 hi = theta, lo = theta;
      hi[a] += h;
      lo[a] -= h;
      const Mat3 fd = (euler_to_rotation(hi) - euler_to_rotation(lo)) / (2 * h);
      EXPECT_LT((fd - d[a]).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Projection, OpticalAxisHitsPrincipalPoint) {
  const Camera cam(1000.0, 320.0, 240.0);
  const Vec2 p = project_point(Vec3::Zero(), Vec3::Zero(), Vec3(0, 0, 1000), cam);
  EXPECT_EQ(p, Vec2(320.0, 240.0));
}

TEST(Projection, PinholeArithmetic) {
  const Camera cam(1000.0, 320.0, 240.0);
  const Vec2 p = project_point(Vec3(10, 0, 0), Vec3::Zero(), Vec3(0, 0, 1000), cam);
  EXPECT_DOUBLE_EQ(p.x(), 330.0);
  EXPECT_DOUBLE_EQ(p.y(), 240.0);
}

TEST(Projection, BehindCameraIsAnError) {
  const Camera cam(1000.0, 0.0, 0.0);
  try {
    project_point(Vec3(0, 0, -1), Vec3::Zero(), Vec3::Zero(), cam);
    FAIL() << "expected behind-camera error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kBehindCamera);
  }
  EXPECT_THROW(project_point(Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), cam), Error);
}

class LandmarkPositions : public ::testing::Test {
 protected:
  void SetUp() override {
    toy = testing::small_toy(11);
    Rng rng(12);
    alpha = sample_identity(toy, rng);
    p = MotionParams(toy.model.motion_layout());
    p.expression().setConstant(0.3);
    p.rotation() << 0.2, -0.1, 0.05;
    p.translation() << 3.0, -2.0, 1000.0;
  }
  ToyModel toy;
  Vec alpha;
  MotionParams p;
  Camera cam = testing::centered_camera();
};

TEST_F(LandmarkPositions, ZeroDisplacementEqualsPerPointProjection) {
  const Points2 lm = landmark_positions(toy.model, alpha, cam, p);
  const Vec shape = evaluate_shape(toy.model, alpha, p.expression());
  const auto& idx = toy.model.landmark_indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Vec2 q = project_point(shape.segment<3>(3 * idx[k]), p.rotation(), p.translation(), cam);
    EXPECT_EQ(lm.col(static_cast<Eigen::Index>(k)), q);
  }
}

TEST_F(LandmarkPositions, ConstantOffsetShiftsEveryPoint) {
  const Points2 base = landmark_positions(toy.model, alpha, cam, p);
  MotionParams shifted = p;
  for (int k = 0; k < toy.model.landmark_count(); ++k) {
    shifted.displacements()[2 * k] = 1.5;
    shifted.displacements()[2 * k + 1] = -0.25;
  }
  const Points2 moved = landmark_positions(toy.model, alpha, cam, shifted);
  EXPECT_LT(((moved - base).colwise() - Vec2(1.5, -0.25)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(LandmarkPositions, RandomConfigurationMatchesComposition) {
  Rng rng(13);
  for (auto& d : p.displacements()) d = std::normal_distribution<double>(0.0, 2.0)(rng);
  const Points2 lm = landmark_positions(toy.model, alpha, cam, p);
  const Vec shape = evaluate_shape(toy.model, alpha, p.expression());
  const auto& idx = toy.model.landmark_indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const Vec2 q = project_point(shape.segment<3>(3 * idx[k]), p.rotation(), p.translation(), cam) +
                   Vec2(p.displacements()[2 * kk], p.displacements()[2 * kk + 1]);
    EXPECT_LT((lm.col(kk) - q).norm(), 1e-12);
  }
}

TEST_F(LandmarkPositions, BehindCameraPropagates) {
  p.translation().z() = -5.0;
  EXPECT_THROW(landmark_positions(toy.model, alpha, cam, p), Error);
}

}  // namespace
}  // namespace gombf
