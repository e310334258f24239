#pragma once

// Cascaded motion regression: guess-truth pair synthesis, barycentric
// appearance extraction, stage-wise training and multi-initialization
// tracking.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "gombf/core.hpp"
#include "gombf/delaunay.hpp"
#include "gombf/ferns.hpp"
#include "gombf/gombf.hpp"
#include "gombf/image.hpp"
#include "gombf/metrics.hpp"
#include "gombf/shape_model.hpp"

namespace gombf {

// ---------------------------------------------------------------------------
// Feature indexing

class FeatureIndexer {
 public:
  FeatureIndexer() = default;
  FeatureIndexer(Points2 reference, std::vector<Triangle> triangles,
                 std::vector<int> point_triangle, Points3 barycentric)
      : reference_(std::move(reference)), triangles_(std::move(triangles)),
        point_triangle_(std::move(point_triangle)), bary_(std::move(barycentric)) {
    require_dim(static_cast<Eigen::Index>(point_triangle_.size()) == bary_.cols(),
                "one triangle per feature point required");
    for (int t : point_triangle_)
      require_dim(t >= 0 && t < static_cast<int>(triangles_.size()),
                  "feature point triangle index out of range");
    for (const auto& tri : triangles_)
      for (int v : tri)
        require_dim(v >= 0 && v < reference_.cols(), "triangle vertex out of range");
  }

  int size() const { return static_cast<int>(point_triangle_.size()); }
  int landmark_count() const { return static_cast<int>(reference_.cols()); }
  const Points2& reference() const { return reference_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<int>& point_triangle() const { return point_triangle_; }
  const Points3& barycentric() const { return bary_; }

  /// Feature points as barycentric combinations of the given landmarks.
  Points2 reconstruct(const Points2& landmarks) const {
    require_dim(landmarks.cols() == reference_.cols(),
                "landmark count does not match the indexer");
    Points2 out(2, size());
    for (int p = 0; p < size(); ++p) {
      const auto& tri = triangles_[static_cast<std::size_t>(point_triangle_[static_cast<std::size_t>(p)])];
      out.col(p) = bary_(0, p) * landmarks.col(tri[0]) + bary_(1, p) * landmarks.col(tri[1]) +
                   bary_(2, p) * landmarks.col(tri[2]);
    }
    return out;
  }

  bool operator==(const FeatureIndexer& o) const {
    return same_matrix(reference_, o.reference_) && triangles_ == o.triangles_ &&
           point_triangle_ == o.point_triangle_ && same_matrix(bary_, o.bary_);
  }

 private:
  Points2 reference_;
  std::vector<Triangle> triangles_;
  std::vector<int> point_triangle_;
  Points3 bary_;
};

/// Triangle owning q: the first containing triangle, else the one with the
/// nearest centroid.
inline int owning_triangle(const Points2& landmarks, const std::vector<Triangle>& tris,
                           const Vec2& q) {
  int nearest = 0;
  double nearest_d = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const Vec2 a = landmarks.col(tris[t][0]), b = landmarks.col(tris[t][1]),
               c = landmarks.col(tris[t][2]);
    const Vec3 w = barycentric(a, b, c, q);
    if (w.minCoeff() >= -1e-12) return static_cast<int>(t);
    const double d = ((a + b + c) / 3.0 - q).squaredNorm();
    if (d < nearest_d) {
      nearest_d = d;
      nearest = static_cast<int>(t);
    }
  }
  return nearest;
}

/// Indexes explicit feature locations against the triangulated reference.
inline FeatureIndexer index_feature_points(const Points2& reference, const Points2& points) {
  auto tris = delaunay_triangulate(reference);
  std::vector<int> owner(static_cast<std::size_t>(points.cols()));
  Points3 bary(3, points.cols());
  for (Eigen::Index p = 0; p < points.cols(); ++p) {
    const int t = owning_triangle(reference, tris, points.col(p));
    owner[static_cast<std::size_t>(p)] = t;
    const auto& tri = tris[static_cast<std::size_t>(t)];
    bary.col(p) = barycentric(reference.col(tri[0]), reference.col(tri[1]),
                              reference.col(tri[2]), points.col(p));
  }
  return FeatureIndexer(reference, std::move(tris), std::move(owner), std::move(bary));
}

/// Samples M points around random reference landmarks with isotropic
/// Gaussian offsets of standard deviation `spread` and indexes them.
inline FeatureIndexer build_feature_indexer(const Points2& reference, int count, Rng& rng,
                                            double spread) {
  if (count < 2) fail(ErrorKind::kConfig, "feature point count must be at least 2");
  if (!(spread >= 0.0)) fail(ErrorKind::kConfig, "feature spread must be non-negative");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(reference.cols()) - 1);
  std::normal_distribution<double> normal(0.0, spread);
  Points2 pts(2, count);
  for (int p = 0; p < count; ++p) {
    const int k = pick(rng);
    const double dx = normal(rng);
    const double dy = normal(rng);
    pts.col(p) = reference.col(k) + Vec2(dx, dy);
  }
  return index_feature_points(reference, pts);
}

inline Vec sample_appearance(const GrayImage& image, const Points2& points) {
  if (image.empty()) fail(ErrorKind::kDimension, "cannot extract appearance from an empty image");
  Vec x(points.cols());
  for (Eigen::Index p = 0; p < points.cols(); ++p)
    x[p] = image.sample_nearest(points(0, p), points(1, p));
  return x;
}

inline Vec extract_appearance(const GrayImage& image, const ParametricShapeModel& model,
                              const Vec& alpha, const Camera& camera, const MotionParams& p,
                              const FeatureIndexer& indexer) {
  const Points2 landmarks = landmark_positions(model, alpha, camera, p);
  return sample_appearance(image, indexer.reconstruct(landmarks));
}

// ---------------------------------------------------------------------------
// Training data

struct TrainingImage {
  GrayImage image;
  StaticParams statics;
  MotionParams truth;
};

enum class PairKind { kExpression, kRotation, kTranslation };

struct TrainingSample {
  int image = 0;
  PairKind kind = PairKind::kExpression;
  MotionParams truth;
  MotionParams initial;
};

struct NoiseConfig {
  int expression_pairs = 30;
  int rotation_pairs = 8;
  int translation_pairs = 8;
  double rotation_sigma = 0.1;
  /// Absolute per-axis translation sigma; negative means 2% of the model's
  /// bounding-sphere diameter.
  double translation_sigma = -1.0;
};

inline double bounding_sphere_diameter(const ParametricShapeModel& model) {
  const Eigen::Map<const Points3> mean(model.identity_basis().col(0).data(), 3,
                                       model.vertex_count());
  const Vec3 centre = mean.rowwise().mean();
  return 2.0 * (mean.colwise() - centre).colwise().norm().maxCoeff();
}

inline double resolved_translation_sigma(const NoiseConfig& noise,
                                         const ParametricShapeModel& model) {
  return noise.translation_sigma >= 0.0 ? noise.translation_sigma
                                        : 0.02 * bounding_sphere_diameter(model);
}

/// Guess-truth pairs per image: expression guesses borrow another image's
/// ground-truth expression; rotation and translation guesses add Gaussian
/// noise. Every guess starts with zero displacements.
inline std::vector<TrainingSample> generate_guess_truth_pairs(
    const std::vector<MotionParams>& truths, Rng& rng, const NoiseConfig& noise,
    double translation_sigma) {
  if (truths.empty()) fail(ErrorKind::kConfig, "training set is empty");
  if (noise.expression_pairs > 0 && truths.size() < 2)
    fail(ErrorKind::kConfig, "random-expression pairs need at least two training images");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, static_cast<int>(truths.size()) - 2);
  std::vector<TrainingSample> out;
  out.reserve(truths.size() *
              static_cast<std::size_t>(noise.expression_pairs + noise.rotation_pairs +
                                       noise.translation_pairs));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const MotionParams& truth = truths[i];
    MotionParams base = truth;
    base.displacements().setZero();
    for (int j = 0; j < noise.expression_pairs; ++j) {
      int k = other(rng);
      if (k >= static_cast<int>(i)) ++k;
      MotionParams init = base;
      init.expression() = truths[static_cast<std::size_t>(k)].expression();
      out.push_back({static_cast<int>(i), PairKind::kExpression, truth, std::move(init)});
    }
    for (int j = 0; j < noise.rotation_pairs; ++j) {
      MotionParams init = base;
      for (int a = 0; a < 3; ++a) init.rotation()[a] += noise.rotation_sigma * normal(rng);
      out.push_back({static_cast<int>(i), PairKind::kRotation, truth, std::move(init)});
    }
    for (int j = 0; j < noise.translation_pairs; ++j) {
      MotionParams init = base;
      for (int a = 0; a < 3; ++a) init.translation()[a] += translation_sigma * normal(rng);
      out.push_back({static_cast<int>(i), PairKind::kTranslation, truth, std::move(init)});
    }
  }
  return out;
}

inline std::vector<TrainingSample> generate_guess_truth_pairs(
    const std::vector<TrainingImage>& images, const ParametricShapeModel& model, Rng& rng,
    const NoiseConfig& noise) {
  std::vector<MotionParams> truths;
  truths.reserve(images.size());
  for (const auto& im : images) truths.push_back(im.truth);
  return generate_guess_truth_pairs(truths, rng, noise, resolved_translation_sigma(noise, model));
}

// ---------------------------------------------------------------------------
// Expression bank

/// 3D landmark geometry of an expression under the mean identity.
inline Points3 expression_landmarks(const ParametricShapeModel& model,
                                    const Eigen::Ref<const Vec>& delta) {
  return landmark_vertices(model, model.mean_identity(), delta);
}

/// Mean Euclidean distance between corresponding 3D landmarks.
inline double landmark_set_distance(const Points3& a, const Points3& b) {
  return (a - b).colwise().norm().mean();
}

inline double expression_distance(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b,
                                  const ParametricShapeModel& model) {
  require_dim(a.size() == model.expression_rank() && b.size() == model.expression_rank(),
              "expression vectors must have length m_exp");
  return landmark_set_distance(expression_landmarks(model, a), expression_landmarks(model, b));
}

class ExpressionBank {
 public:
  ExpressionBank() = default;
  ExpressionBank(const ParametricShapeModel& model, Mat expressions)
      : expressions_(std::move(expressions)) {
    require_dim(expressions_.rows() == model.expression_rank(),
                "bank expressions must have m_exp rows");
    geometry_.reserve(static_cast<std::size_t>(expressions_.cols()));
    for (Eigen::Index b = 0; b < expressions_.cols(); ++b)
      geometry_.push_back(expression_landmarks(model, expressions_.col(b)));
  }

  int size() const { return static_cast<int>(expressions_.cols()); }
  const Mat& expressions() const { return expressions_; }
  const Points3& geometry(int b) const { return geometry_[static_cast<std::size_t>(b)]; }

  bool operator==(const ExpressionBank& o) const { return same_matrix(expressions_, o.expressions_); }

 private:
  Mat expressions_;
  std::vector<Points3> geometry_;
};

/// Indices of the L bank entries closest to `delta`, nearest first; ties
/// broken by bank index. A bank smaller than L yields every entry.
inline std::vector<int> select_initializations(const Eigen::Ref<const Vec>& delta,
                                               const ExpressionBank& bank,
                                               const ParametricShapeModel& model, int count,
                                               bool* truncated = nullptr) {
  if (count < 1) fail(ErrorKind::kConfig, "initialization count must be at least 1");
  if (bank.size() == 0) fail(ErrorKind::kConfig, "expression bank is empty");
  const Points3 query = expression_landmarks(model, delta);
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(bank.size()));
  for (int b = 0; b < bank.size(); ++b)
    dist[static_cast<std::size_t>(b)] = {landmark_set_distance(query, bank.geometry(b)), b};
  const int take = std::min(count, bank.size());
  if (truncated) *truncated = take < count;
  std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int i = 0; i < take; ++i) out.push_back(dist[static_cast<std::size_t>(i)].second);
  return out;
}

// ---------------------------------------------------------------------------
// Cascade model

enum class RegressorMode { kGoMBF, kMonolithic };

inline const char* to_string(RegressorMode m) {
  return m == RegressorMode::kGoMBF ? "gombf" : "monolithic";
}

inline RegressorMode parse_mode(const std::string& s) {
  if (s == "gombf") return RegressorMode::kGoMBF;
  if (s == "monolithic") return RegressorMode::kMonolithic;
  fail(ErrorKind::kConfig, "unknown regressor mode '" + s + "' (expected gombf or monolithic)");
}

struct CascadeConfig {
  int stages = 10;
  int depth = 5;
  /// Ferns per modality group (GoMBF mode).
  int ferns_per_group = 80;
  /// Ferns of the single boosted ferns (monolithic mode).
  int monolithic_ferns = 320;
  int features = 600;
  double shrinkage = 1000.0;
  double lambda = 1.0;
  /// Feature-point spread as a fraction of the reference interocular distance.
  double spread = 0.15;
  int initializations = 20;
  std::uint64_t seed = 1;
  RegressorMode mode = RegressorMode::kGoMBF;
  int threads = 1;
  NoiseConfig noise;
};

inline void validate(const CascadeConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorKind::kConfig, what); };
  if (c.stages < 0) bad("stage count must be non-negative");
  if (c.depth < 1 || c.depth > 16) bad("fern depth must lie in [1, 16]");
  if (c.ferns_per_group < 1 || c.monolithic_ferns < 1) bad("fern budgets must be positive");
  if (c.features < 2) bad("feature count must be at least 2");
  if (!(c.shrinkage >= 0.0)) bad("shrinkage must be non-negative");
  if (!(c.lambda >= 0.0)) bad("lambda must be non-negative");
  if (!(c.spread >= 0.0)) bad("spread must be non-negative");
  if (c.initializations < 1) bad("initialization count must be at least 1");
  if (c.noise.expression_pairs < 0 || c.noise.rotation_pairs < 0 || c.noise.translation_pairs < 0)
    bad("pair counts must be non-negative");
}

inline ModalityLayout regressor_layout(const CascadeConfig& c, const MotionLayout& motion) {
  return c.mode == RegressorMode::kGoMBF
             ? ModalityLayout::motion(motion.m_exp, motion.n_landmarks, c.ferns_per_group)
             : ModalityLayout::single(motion.dim(), c.monolithic_ferns);
}

struct CascadeStage {
  FeatureIndexer indexer;
  GoMBFModel regressor;

  bool operator==(const CascadeStage&) const = default;
};

struct CascadeModel {
  ParametricShapeModel shape;
  RegressorMode mode = RegressorMode::kGoMBF;
  int initializations = 20;
  std::vector<CascadeStage> stages;
  ExpressionBank bank;
  /// Identity prior deviations used by first-frame fitting; empty if unknown.
  Vec identity_sigma;

  int stage_count() const { return static_cast<int>(stages.size()); }
  bool operator==(const CascadeModel& o) const {
    return shape == o.shape && mode == o.mode && initializations == o.initializations &&
           stages == o.stages && bank == o.bank && same_matrix(identity_sigma, o.identity_sigma);
  }
};

struct StageTiming {
  double extraction_seconds = 0.0;
  double modular_seconds = 0.0;
  double fusion_seconds = 0.0;
  double regression_seconds() const { return modular_seconds + fusion_seconds; }
};

struct TrainingReport {
  /// RMS over samples of the normalized landmark error; entry 0 is before
  /// the first stage, entry t after stage t.
  std::vector<double> stage_rmse;
  std::vector<StageTiming> timings;
  /// Regularized ridge objective before and after fusion, per stage.
  std::vector<double> objective_pre_fusion;
  std::vector<double> objective_post_fusion;
  std::uint64_t seed = 0;
  int threads = 1;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Trains the cascade stage by stage. Each stage re-indexes features against
/// the mean landmarks of the current estimates, extracts appearance, trains
/// the regressor on the remaining increments and advances every estimate.
inline CascadeModel train_cascade(const ParametricShapeModel& shape,
                                  const std::vector<TrainingImage>& images,
                                  const std::vector<TrainingSample>& samples,
                                  const CascadeConfig& config, TrainingReport* report = nullptr) {
  validate(config);
  if (images.empty() || samples.empty()) fail(ErrorKind::kConfig, "training set is empty");
  const MotionLayout motion = shape.motion_layout();
  const int dim = motion.dim();
  const auto n = static_cast<Eigen::Index>(samples.size());
  const int threads = resolve_threads(config.threads);

  CascadeModel model;
  model.shape = shape;
  model.mode = config.mode;
  model.initializations = config.initializations;
  {
    Mat expressions(motion.m_exp, static_cast<Eigen::Index>(images.size()));
    for (std::size_t i = 0; i < images.size(); ++i)
      expressions.col(static_cast<Eigen::Index>(i)) = images[i].truth.expression();
    model.bank = ExpressionBank(shape, std::move(expressions));
  }

  Mat truth(n, dim), estimate(n, dim);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto& smp = samples[static_cast<std::size_t>(s)];
    require_dim(smp.truth.layout() == motion && smp.initial.layout() == motion,
                "training sample does not match the shape model layout");
    require_dim(smp.image >= 0 && smp.image < static_cast<int>(images.size()),
                "training sample references a missing image");
    truth.row(s) = smp.truth.values().transpose();
    estimate.row(s) = smp.initial.values().transpose();
  }

  // Ground-truth landmarks per sample, for the error curve.
  std::vector<Points2> truth_landmarks(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t s) {
    const auto& smp = samples[s];
    const auto& st = images[static_cast<std::size_t>(smp.image)].statics;
    truth_landmarks[s] = landmark_positions(shape, st.identity, st.camera, smp.truth);
  });

  std::vector<Points2> current(static_cast<std::size_t>(n));
  auto refresh_landmarks = [&]() {
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t s) {
      const auto& st = images[static_cast<std::size_t>(samples[s].image)].statics;
      current[s] = landmark_positions(
          shape, st.identity, st.camera,
          MotionParams(motion, estimate.row(static_cast<Eigen::Index>(s)).transpose()));
    });
  };
  auto training_rmse = [&]() {
    std::vector<double> err(static_cast<std::size_t>(n));
    for (std::size_t s = 0; s < err.size(); ++s)
      err[s] = normalized_landmark_error(shape, current[s], truth_landmarks[s]);
    return root_mean_square(err);
  };

  if (report) {
    *report = TrainingReport{};
    report->seed = config.seed;
    report->threads = threads;
  }
  try {
    refresh_landmarks();
  } catch (const Error& e) {
    rethrow_with_context(e, "initial estimates");
  }
  if (report) report->stage_rmse.push_back(training_rmse());

  const ModalityLayout layout = regressor_layout(config, motion);
  for (int t = 0; t < config.stages; ++t) {
    try {
      StageTiming timing;
      auto t0 = std::chrono::steady_clock::now();

      Points2 mean_landmarks = Points2::Zero(2, motion.n_landmarks);
      for (const auto& lm : current) mean_landmarks += lm;
      mean_landmarks /= static_cast<double>(n);
      const double iod = interocular_distance(shape, mean_landmarks);
      Rng index_rng(derive_seed(config.seed, 0x696478ULL, static_cast<std::uint64_t>(t)));
      FeatureIndexer indexer =
          build_feature_indexer(mean_landmarks, config.features, index_rng, config.spread * iod);

      Mat x(n, config.features);
      parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t s) {
        const auto& img = images[static_cast<std::size_t>(samples[s].image)].image;
        x.row(static_cast<Eigen::Index>(s)) =
            sample_appearance(img, indexer.reconstruct(current[s])).transpose();
      });
      const FeatureMatrix fm(std::move(x));
      const Mat targets = truth - estimate;
      timing.extraction_seconds = detail::seconds_since(t0);

      t0 = std::chrono::steady_clock::now();
      const std::uint64_t stage_seed = derive_seed(config.seed, 0x737467ULL, static_cast<std::uint64_t>(t));
      GoMBFModel regressor = train_modular(fm, targets, layout, config.depth, config.shrinkage,
                                           stage_seed, threads);
      timing.modular_seconds = detail::seconds_since(t0);

      if (config.mode == RegressorMode::kGoMBF) {
        t0 = std::chrono::steady_clock::now();
        GoMBFModel fused = global_optimize(regressor, fm, targets, config.lambda, threads);
        timing.fusion_seconds = detail::seconds_since(t0);
        if (report) {
          const auto cols = training_columns(regressor, fm);
          report->objective_pre_fusion.push_back(
              regularized_objective(regressor.fused_leaves(), cols, targets, config.lambda));
          report->objective_post_fusion.push_back(
              regularized_objective(fused.fused_leaves(), cols, targets, config.lambda));
        }
        regressor = std::move(fused);
      }

      const auto cols = training_columns(regressor, fm);
      const Mat& w = regressor.fused_leaves();
      parallel_for(static_cast<std::size_t>(dim), threads, [&](std::size_t d) {
        double* e = estimate.col(static_cast<Eigen::Index>(d)).data();
        for (const auto& fc : cols)
          for (std::size_t s = 0; s < fc.size(); ++s) e[s] += w(static_cast<Eigen::Index>(d), fc[s]);
      });
      refresh_landmarks();
      if (report) {
        report->stage_rmse.push_back(training_rmse());
        report->timings.push_back(timing);
      }
      model.stages.push_back({std::move(indexer), std::move(regressor)});
    } catch (const Error& e) {
      rethrow_with_context(e, "stage " + std::to_string(t + 1));
    }
  }
  return model;
}

/// Runs every stage from one initial estimate.
inline MotionParams run_cascade(const CascadeModel& model, const GrayImage& image,
                                const StaticParams& statics, MotionParams p) {
  for (const auto& stage : model.stages) {
    const Vec x =
        extract_appearance(image, model.shape, statics.identity, statics.camera, p, stage.indexer);
    p.values() += stage.regressor.predict(x);
  }
  return p;
}

/// Initial estimates for a frame: the nearest bank expressions with the
/// previous pose and zero displacements.
inline std::vector<MotionParams> tracking_initializations(const CascadeModel& model,
                                                          const MotionParams& previous) {
  const auto picks = select_initializations(previous.expression(), model.bank, model.shape,
                                            model.initializations);
  std::vector<MotionParams> inits;
  inits.reserve(picks.size());
  for (int b : picks) {
    MotionParams p = previous;
    p.expression() = model.bank.expressions().col(b);
    p.displacements().setZero();
    inits.push_back(std::move(p));
  }
  return inits;
}

/// Mean of the cascade outputs over the L initializations.
inline MotionParams track_frame(const CascadeModel& model, const GrayImage& image,
                                const MotionParams& previous, const StaticParams& statics,
                                int threads = 1) {
  require_dim(previous.layout() == model.shape.motion_layout(),
              "previous motion parameters do not match the model");
  const auto inits = tracking_initializations(model, previous);
  std::vector<MotionParams> outs(inits.size());
  parallel_for(inits.size(), threads, [&](std::size_t i) {
    outs[i] = run_cascade(model, image, statics, inits[i]);
  });
  MotionParams mean(previous.layout());
  for (const auto& o : outs) mean.values() += o.values();
  mean.values() /= static_cast<double>(outs.size());
  return mean;
}

}  // namespace gombf
