#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "gombf/gombf.hpp"
#include "test_support.hpp"

namespace gombf {
namespace {

using testing::random_matrix;
using testing::random_vector;

struct Problem {
  FeatureMatrix fm;
  Mat y;
};

Problem make_problem(std::uint64_t seed, int n, int m, int d) {
  Rng rng(seed);
  const Mat x = random_matrix(n, m, rng);
  Mat y(n, d);
  for (int k = 0; k < d; ++k)
    y.col(k) = (x.col(k % m) - x.col((k + 1) % m)).array().tanh().matrix() +
               0.05 * random_matrix(n, 1, rng);
  return {FeatureMatrix(x), y};
}

// Dense indicator matrix Phi (samples x columns).
Mat dense_phi(const GoMBFModel& model, const FeatureMatrix& fm) {
  Mat phi = Mat::Zero(fm.samples(), model.column_count());
  for (Eigen::Index s = 0; s < fm.samples(); ++s)
    for (int c : assemble_indicator(model, fm.values().row(s).transpose()).ones) phi(s, c) = 1.0;
  return phi;
}

TEST(ModalityLayout, MotionLayoutAtFullScale) {
  const auto layout = ModalityLayout::motion(46, 66, 80);
  ASSERT_EQ(layout.groups().size(), 4u);
  EXPECT_EQ(layout.groups()[0].width, 46);
  EXPECT_EQ(layout.groups()[1].width, 3);
  EXPECT_EQ(layout.groups()[2].width, 3);
  EXPECT_EQ(layout.groups()[3].width, 132);
  EXPECT_EQ(layout.dim(), 184);
  EXPECT_EQ(layout.total_ferns(), 320);
}

TEST(ModalityLayout, RejectsGapsAndEmptyGroups) {
  EXPECT_THROW(ModalityLayout({{"a", 0, 2, 1}, {"b", 3, 1, 1}}), Error);
  EXPECT_THROW(ModalityLayout({{"a", 0, 0, 1}}), Error);
  EXPECT_THROW(ModalityLayout({{"a", 0, 2, 0}}), Error);
  EXPECT_THROW(ModalityLayout(std::vector<ModalityGroup>{}), Error);
}

TEST(TrainModular, SingleGroupEqualsBoostedFerns) {
  const auto p = make_problem(1, 80, 8, 3);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(3, 6), 3, 10.0, 77);
  Rng rng(group_seed(77, 0));
  const BoostedFerns mono = train_boosted(p.fm, p.y, {6, 3, 10.0}, rng);
  EXPECT_TRUE(model.group_models()[0] == mono);
  Rng probe(2);
  for (int t = 0; t < 50; ++t) {
    const Vec x = random_vector(8, probe);
    EXPECT_LT((model.predict(x) - mono.predict(x)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TrainModular, GroupPredictionsTouchOnlyTheirSlice) {
  const auto p = make_problem(3, 100, 8, 5);
  const auto layout = ModalityLayout::from_widths({{"a", 2, 4}, {"b", 3, 5}});
  const auto model = train_modular(p.fm, p.y, layout, 3, 5.0, 9);
  Rng probe(4);
  for (int t = 0; t < 50; ++t) {
    const Vec x = random_vector(8, probe);
    Vec expected(5);
    expected << model.group_models()[0].predict(x), model.group_models()[1].predict(x);
    EXPECT_LT((model.predict(x) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TrainModular, TwoGroupSliceErrorsMatchIndependentTraining) {
  const auto p = make_problem(5, 120, 10, 4);
  const auto layout = ModalityLayout::from_widths({{"a", 2, 8}, {"b", 2, 8}});
  const auto model = train_modular(p.fm, p.y, layout, 4, 20.0, 31);
  for (int g = 0; g < 2; ++g) {
    Rng rng(group_seed(31, static_cast<std::size_t>(g)));
    const Mat slice = p.y.middleCols(2 * g, 2);
    const BoostedFerns alone = train_boosted(p.fm, slice, {8, 4, 20.0}, rng);
    double sse_model = 0.0, sse_alone = 0.0;
    for (Eigen::Index s = 0; s < p.fm.samples(); ++s) {
      const Vec x = p.fm.values().row(s).transpose();
      sse_model += (model.predict(x).segment(2 * g, 2) - slice.row(s).transpose()).squaredNorm();
      sse_alone += (alone.predict(x) - slice.row(s).transpose()).squaredNorm();
    }
    EXPECT_NEAR(sse_model, sse_alone, 1e-9 * sse_alone);
  }
}

TEST(TrainModular, FullLayoutColumnCount) {
  const auto p = make_problem(6, 40, 12, 184);
  const auto model =
      train_modular(p.fm, p.y, ModalityLayout::motion(46, 66, 80), 5, 1000.0, 1);
  EXPECT_EQ(model.total_ferns(), 320);
  EXPECT_EQ(model.column_count(), 10240);
  EXPECT_EQ(model.fused_leaves().rows(), 184);
  EXPECT_EQ(model.fused_leaves().cols(), 10240);
  const auto ind = assemble_indicator(model, p.fm.values().row(0).transpose());
  EXPECT_EQ(ind.size, 10240);
  EXPECT_EQ(ind.ones.size(), 320u);
  EXPECT_EQ(ind.dense().sum(), 320.0);
}

TEST(TrainModular, RejectsMismatchedTargetWidth) {
  const auto p = make_problem(7, 30, 6, 3);
  EXPECT_THROW(train_modular(p.fm, p.y, ModalityLayout::single(4, 2), 2, 1.0, 0), Error);
}

TEST(TrainModular, IdenticalAcrossThreadCounts) {
  const auto p = make_problem(8, 90, 9, 6);
  const auto layout = ModalityLayout::from_widths({{"a", 1, 5}, {"b", 2, 5}, {"c", 3, 5}});
  const auto one = train_modular(p.fm, p.y, layout, 3, 2.0, 12, 1);
  const auto four = train_modular(p.fm, p.y, layout, 3, 2.0, 12, 4);
  EXPECT_TRUE(one == four);
  EXPECT_TRUE(global_optimize(one, p.fm, p.y, 0.5, 1) == global_optimize(four, p.fm, p.y, 0.5, 4));
}

TEST(Indicator, OneActiveLeafPerFern) {
  const auto p = make_problem(9, 60, 6, 3);
  const auto layout = ModalityLayout::from_widths({{"a", 1, 3}, {"b", 2, 4}});
  const auto model = train_modular(p.fm, p.y, layout, 3, 1.0, 5);
  Rng probe(10);
  for (int t = 0; t < 100; ++t) {
    const auto ind = assemble_indicator(model, random_vector(6, probe));
    ASSERT_EQ(ind.ones.size(), 7u);
    for (std::size_t k = 0; k < ind.ones.size(); ++k) {
      EXPECT_GE(ind.ones[k], static_cast<int>(8 * k));
      EXPECT_LT(ind.ones[k], static_cast<int>(8 * (k + 1)));
    }
  }
  EXPECT_THROW(assemble_indicator(model, Vec::Zero(5)), Error);
}

TEST(Indicator, PredictionIsLeafMatrixTimesIndicator) {
  const auto p = make_problem(11, 60, 6, 4);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::from_widths({{"a", 4, 6}}), 4,
                                   1.0, 6);
  Rng probe(12);
  for (int t = 0; t < 50; ++t) {
    const Vec x = random_vector(6, probe);
    const Vec oracle = model.fused_leaves() * assemble_indicator(model, x).dense();
    EXPECT_LT((predict_gombf(model, x) - oracle).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GlobalOptimize, MatchesClosedFormRidge) {
  const auto p = make_problem(13, 70, 7, 3);
  const auto model =
      train_modular(p.fm, p.y, ModalityLayout::from_widths({{"a", 1, 3}, {"b", 2, 3}}), 3, 5.0, 2);
  const double lambda = 0.7;
  const auto fused = global_optimize(model, p.fm, p.y, lambda);
  const Mat phi = dense_phi(model, p.fm);
  const Mat a = phi.transpose() * phi + lambda * Mat::Identity(phi.cols(), phi.cols());
  const Mat oracle = a.ldlt().solve(phi.transpose() * p.y).transpose();
  EXPECT_LT((fused.fused_leaves() - oracle).cwiseAbs().maxCoeff(),
            1e-8 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
  EXPECT_TRUE(fused.is_fused());
  EXPECT_FALSE(model.is_fused());
}

TEST(GlobalOptimize, TinyHandWorkedSystem) {
  // Three samples, two depth-1 ferns on pixel pairs (0,1) and (1,0).
  Mat x(3, 2);
  x << 1.0, 0.0,  //
      0.0, 1.0,   //
      2.0, 0.0;
  Mat y(3, 1);
  y << 1.0, 2.0, 3.0;
  Mat zero = Mat::Zero(1, 2);
  const GoMBFModel model(ModalityLayout::single(1, 2),
                         {BoostedFerns({Fern({{0, 1, 0.0}}, zero, 2), Fern({{1, 0, 0.0}}, zero, 2)})},
                         Mat::Zero(1, 4), false);
  // Columns: fern0 leaf0, fern0 leaf1, fern1 leaf0, fern1 leaf1.
  // Sample 0 and 2 hit {1, 2}; sample 1 hits {0, 3}.
  Mat phi(3, 4);
  phi << 0, 1, 1, 0,  //
      1, 0, 0, 1,     //
      0, 1, 1, 0;
  const double lambda = 0.1;
  Mat a = phi.transpose() * phi;
  a.diagonal().array() += lambda;
  const Mat expected = a.inverse() * phi.transpose() * y;
  const auto fused = global_optimize(model, FeatureMatrix(x), y, lambda);
  EXPECT_LT((fused.fused_leaves().transpose() - expected).cwiseAbs().maxCoeff(), 1e-12);
  // By symmetry leaves 1 and 2 share sample weight: each is 4 / (2 * 2 + 0.1).
  EXPECT_NEAR(fused.fused_leaves()(0, 1), 4.0 / 4.1, 1e-12);
  EXPECT_NEAR(fused.fused_leaves()(0, 0), 2.0 / 2.1, 1e-12);
}

TEST(GlobalOptimize, ObjectiveNeverWorseThanPreFusion) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = make_problem(100 + seed, 80, 8, 5);
    const auto layout = ModalityLayout::from_widths({{"a", 2, 5}, {"b", 3, 5}});
    const auto model = train_modular(p.fm, p.y, layout, 3, 10.0, seed);
    const auto cols = training_columns(model, p.fm);
    for (double lambda : {0.01, 1.0, 100.0}) {
      const auto fused = global_optimize(model, p.fm, p.y, lambda);
      const double pre = regularized_objective(model.fused_leaves(), cols, p.y, lambda);
      const double post = regularized_objective(fused.fused_leaves(), cols, p.y, lambda);
      EXPECT_LE(post, pre * (1.0 + 1e-12)) << "seed " << seed << " lambda " << lambda;
    }
  }
}

TEST(GlobalOptimize, IsStationaryPointOfObjective) {
  const auto p = make_problem(14, 60, 6, 2);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(2, 4), 3, 3.0, 8);
  const auto cols = training_columns(model, p.fm);
  const double lambda = 0.3;
  const Mat w = global_optimize(model, p.fm, p.y, lambda).fused_leaves();
  const double f0 = regularized_objective(w, cols, p.y, lambda);
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    const Mat dir = random_matrix(w.rows(), w.cols(), rng, 1e-3);
    EXPECT_GE(regularized_objective(w + dir, cols, p.y, lambda), f0 - 1e-12);
  }
}

TEST(GlobalOptimize, InterpolatesWithFullRankIndicator) {
  // Four samples, one depth-2 fern whose leaves each hold one sample.
  Mat x(4, 3);
  x << 1, 0, 0,  //
      0, 1, 0,   //
      0, 0, 1,   //
      2, 1, 0;
  Mat y(4, 2);
  y << 1, -1, 2, -2, 3, -3, 4, -4;
  const Fern f({{0, 1, 0.5}, {1, 2, 0.5}}, Mat::Zero(2, 4), 3);
  const GoMBFModel model(ModalityLayout::single(2, 1), {BoostedFerns({f})}, Mat::Zero(2, 4), false);
  const FeatureMatrix fm(x);
  const auto cols = training_columns(model, fm);
  std::vector<int> sorted = cols[0];
  std::sort(sorted.begin(), sorted.end());
  ASSERT_EQ(sorted, (std::vector<int>{0, 1, 2, 3}));
  const auto exact = global_optimize(model, fm, y, 0.0);
  EXPECT_LT(regularized_objective(exact.fused_leaves(), cols, y, 0.0), 1e-20);
  const auto near = global_optimize(model, fm, y, 1e-8);
  EXPECT_LT(regularized_objective(near.fused_leaves(), cols, y, 0.0), 1e-12);
}

TEST(GlobalOptimize, UnvisitedLeavesAreZero) {
  const auto p = make_problem(16, 12, 6, 2);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(2, 10), 5, 1.0, 3);
  const auto fused = global_optimize(model, p.fm, p.y, 0.5);
  std::vector<char> seen(static_cast<std::size_t>(model.column_count()), 0);
  for (const auto& fc : training_columns(model, p.fm))
    for (int c : fc) seen[static_cast<std::size_t>(c)] = 1;
  int unvisited = 0;
  for (int c = 0; c < model.column_count(); ++c)
    if (!seen[static_cast<std::size_t>(c)]) {
      ++unvisited;
      EXPECT_TRUE(fused.fused_leaves().col(c).isZero(0.0));
    }
  EXPECT_GT(unvisited, 0);
}

TEST(GlobalOptimize, ZeroRidgeWithUnvisitedLeafIsSingular) {
  const auto p = make_problem(17, 12, 6, 2);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(2, 4), 5, 1.0, 3);
  try {
    global_optimize(model, p.fm, p.y, 0.0);
    FAIL() << "expected singular system";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kSingularSystem);
  }
}

TEST(GlobalOptimize, ZeroTargetsGiveZeroLeaves) {
  const auto p = make_problem(18, 50, 6, 3);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(3, 4), 3, 1.0, 4);
  const auto fused = global_optimize(model, p.fm, Mat::Zero(50, 3), 1.0);
  EXPECT_TRUE(fused.fused_leaves().isZero(0.0));
}

TEST(GlobalOptimize, RejectsNegativeRidge) {
  const auto p = make_problem(19, 20, 4, 1);
  const auto model = train_modular(p.fm, p.y, ModalityLayout::single(1, 2), 2, 1.0, 4);
  EXPECT_THROW(global_optimize(model, p.fm, p.y, -1.0), Error);
}

}  // namespace
}  // namespace gombf
