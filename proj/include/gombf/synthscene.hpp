#pragma once

// Synthetic toy face model and frame-sequence generator.
//
// The toy model is a deformed vertex grid with smooth random identity fields
// and localized expression fields. Frames are rendered by splatting a small
// Gaussian kernel per projected vertex; the displacement slice of P warps the
// vertices around each landmark so that every modality of P is visible in
// the pixels.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "gombf/core.hpp"
#include "gombf/image.hpp"
#include "gombf/shape_model.hpp"

namespace gombf {

struct ToyModelSpec {
  int vertices = 900;
  int identity_rank = 10;
  int expression_rank = 8;
  int landmarks = 66;
  /// Spatial frequency scale of the basis fields (cycles across the face).
  double smoothness = 1.5;
  /// Face width in world units; at depth ~f it is also the width in pixels.
  double face_width = 40.0;
  /// Standard deviation of the first identity coefficient, as a fraction of
  /// the face width; later coefficients decay geometrically.
  double identity_scale = 0.08;
  double identity_decay = 0.85;
  /// Peak vertex displacement of each expression blendshape, as a fraction of
  /// the face width.
  double expression_scale = 0.1;
  std::uint64_t seed = 1;
};

struct ToyModel {
  ParametricShapeModel model;
  /// Prior standard deviation of identity coefficients 1..m_id.
  Vec identity_sigma;
  ToyModelSpec spec;
};

namespace detail {

/// Landmark template in normalized face coordinates (u right, v down), laid
/// out as jaw 17, brows 10, nose 9, eyes 12, mouth 18.
inline std::vector<Vec2> landmark_template() {
  std::vector<Vec2> pts;
  for (int i = 0; i < 17; ++i) {
    const double phi = -1.45 + 2.9 * i / 16.0;
    pts.emplace_back(0.85 * std::sin(phi), -0.05 + 0.9 * std::cos(phi));
  }
  for (int side = 0; side < 2; ++side)
    for (int i = 0; i < 5; ++i) {
      const double u = (side == 0 ? -0.72 : 0.17) + 0.1375 * i;
      pts.emplace_back(u, -0.45 - 0.08 * std::sin(std::numbers::pi * i / 4.0));
    }
  for (int i = 0; i < 4; ++i) pts.emplace_back(0.0, -0.3 + 0.1 * i);
  for (int i = 0; i < 5; ++i) pts.emplace_back(-0.2 + 0.1 * i, 0.15 - 0.03 * std::abs(i - 2));
  for (int side = 0; side < 2; ++side) {
    const double cu = side == 0 ? -0.4 : 0.4;
    for (int i = 0; i < 6; ++i) {
      const double a = std::numbers::pi - 2.0 * std::numbers::pi * i / 6.0;
      pts.emplace_back(cu + 0.17 * std::cos(a), -0.25 - 0.07 * std::sin(a));
    }
  }
  for (int i = 0; i < 12; ++i) {
    const double a = std::numbers::pi - 2.0 * std::numbers::pi * i / 12.0;
    pts.emplace_back(0.35 * std::cos(a), 0.45 - 0.15 * std::sin(a));
  }
  for (int i = 0; i < 6; ++i) {
    const double a = std::numbers::pi - 2.0 * std::numbers::pi * i / 6.0;
    pts.emplace_back(0.2 * std::cos(a), 0.45 - 0.06 * std::sin(a));
  }
  return pts;
}

inline Vec smooth_field(const std::vector<Vec2>& uv, double smoothness, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> freq(-smoothness, smoothness);
  Vec field = Vec::Zero(3 * static_cast<Eigen::Index>(uv.size()));
  constexpr int kWaves = 4;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < kWaves; ++k) {
      const double wu = freq(rng) * std::numbers::pi;
      const double wv = freq(rng) * std::numbers::pi;
      const double amp = normal(rng);
      const double ph = phase(rng);
      for (std::size_t i = 0; i < uv.size(); ++i)
        field[3 * static_cast<Eigen::Index>(i) + c] +=
            amp * std::sin(wu * uv[i].x() + wv * uv[i].y() + ph);
    }
  return field;
}

/// Orthonormal basis (3n x 7) of infinitesimal translations, rotations and
/// scaling of the given shape about its centroid.
inline Mat rigid_modes(const Vec& shape) {
  const auto n = shape.size() / 3;
  Vec3 centroid = Vec3::Zero();
  for (Eigen::Index i = 0; i < n; ++i) centroid += shape.segment<3>(3 * i);
  centroid /= static_cast<double>(n);
  Mat modes = Mat::Zero(shape.size(), 7);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 v = shape.segment<3>(3 * i) - centroid;
    for (int a = 0; a < 3; ++a) {
      modes(3 * i + a, a) = 1.0;
      modes.block<3, 1>(3 * i, 3 + a) = Vec3::Unit(a).cross(v);
    }
    modes.block<3, 1>(3 * i, 6) = v;
  }
  Eigen::HouseholderQR<Mat> qr(modes);
  return qr.householderQ() * Mat::Identity(shape.size(), 7);
}

}  // namespace detail

inline ToyModel make_toy_model(const ToyModelSpec& spec) {
  if (spec.landmarks < 4) fail(ErrorKind::kConfig, "toy model needs at least 4 landmarks");
  if (spec.vertices < spec.landmarks)
    fail(ErrorKind::kConfig, "toy model vertex count " + std::to_string(spec.vertices) +
                                 " is below the landmark count " +
                                 std::to_string(spec.landmarks));
  if (spec.identity_rank < 1 || spec.expression_rank < 1)
    fail(ErrorKind::kConfig, "toy model ranks must be at least 1");
  if (!(spec.face_width > 0.0) || !(spec.smoothness > 0.0) || !(spec.identity_scale > 0.0) ||
      !(spec.expression_scale > 0.0) || !(spec.identity_decay > 0.0))
    fail(ErrorKind::kConfig, "toy model scales must be positive");

  Rng rng(derive_seed(spec.seed, 0x746F79ULL));
  std::uniform_real_distribution<double> jitter(-0.15, 0.15);
  const int n = spec.vertices;
  const int gx = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int gy = (n + gx - 1) / gx;
  const double half_w = spec.face_width / 2.0;
  const double half_h = 0.6 * spec.face_width;
  const double depth = 0.25 * spec.face_width;

  std::vector<Vec2> uv(static_cast<std::size_t>(n));
  Mat identity(3 * n, spec.identity_rank + 1);
  for (int i = 0; i < n; ++i) {
    const int col = i % gx, row = i / gx;
    double u = gx > 1 ? 2.0 * col / (gx - 1) - 1.0 : 0.0;
    double v = gy > 1 ? 2.0 * row / (gy - 1) - 1.0 : 0.0;
    u += jitter(rng) / std::max(1, gx - 1);
    v += jitter(rng) / std::max(1, gy - 1);
    uv[static_cast<std::size_t>(i)] = {u, v};
    identity(3 * i + 0, 0) = half_w * u;
    identity(3 * i + 1, 0) = half_h * v;
    identity(3 * i + 2, 0) = -depth * std::max(0.0, 1.0 - 0.6 * u * u - 0.6 * v * v);
  }

  // Identity fields: orthogonal to rigid motion, scaling and each other,
  // with unit RMS per-vertex displacement (column norm sqrt(n)).
  const Mat rigid = detail::rigid_modes(identity.col(0));
  Vec sigma(spec.identity_rank);
  for (int j = 1; j <= spec.identity_rank; ++j) {
    Vec f = detail::smooth_field(uv, spec.smoothness, rng);
    f -= rigid * (rigid.transpose() * f);
    for (int k = 1; k < j; ++k) f -= identity.col(k) * (identity.col(k).dot(f) / n);
    f *= std::sqrt(static_cast<double>(n)) / f.norm();
    identity.col(j) = f;
    sigma[j - 1] = spec.identity_scale * spec.face_width * std::pow(spec.identity_decay, j - 1);
  }

  // Landmarks: nearest unused vertex to each template position.
  std::vector<Vec2> tmpl = detail::landmark_template();
  std::uniform_real_distribution<double> extra(-0.8, 0.8);
  while (static_cast<int>(tmpl.size()) < spec.landmarks) tmpl.emplace_back(extra(rng), extra(rng));
  tmpl.resize(static_cast<std::size_t>(spec.landmarks));
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::vector<int> landmarks;
  for (const auto& p : tmpl) {
    int best = -1;
    double best_d = 0.0;
    for (int i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double d = (uv[static_cast<std::size_t>(i)] - p).squaredNorm();
      if (best < 0 || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    used[static_cast<std::size_t>(best)] = 1;
    landmarks.push_back(best);
  }
  std::array<int, 2> iod{36, 45};
  if (spec.landmarks < 46) {
    // Widest horizontal pair among the available landmarks.
    int lo = 0, hi = 0;
    for (int k = 0; k < spec.landmarks; ++k) {
      if (tmpl[static_cast<std::size_t>(k)].x() < tmpl[static_cast<std::size_t>(lo)].x()) lo = k;
      if (tmpl[static_cast<std::size_t>(k)].x() > tmpl[static_cast<std::size_t>(hi)].x()) hi = k;
    }
    iod = {lo, hi};
  }

  // Expression fields: a smooth field under a Gaussian bump centred on a
  // landmark, scaled to the configured peak displacement.
  Mat expression(3 * n, spec.expression_rank);
  std::uniform_int_distribution<int> pick(0, spec.landmarks - 1);
  for (int j = 0; j < spec.expression_rank; ++j) {
    Vec f = detail::smooth_field(uv, spec.smoothness, rng);
    const Vec2 centre = uv[static_cast<std::size_t>(landmarks[static_cast<std::size_t>(pick(rng))])];
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = std::exp(-(uv[static_cast<std::size_t>(i)] - centre).squaredNorm() / (2 * 0.35 * 0.35));
      f.segment<3>(3 * i) *= w;
    }
    f -= rigid * (rigid.transpose() * f);
    for (int i = 0; i < n; ++i) peak = std::max(peak, f.segment<3>(3 * i).norm());
    expression.col(j) = f * (spec.expression_scale * spec.face_width / peak);
  }

  return {ParametricShapeModel(std::move(identity), std::move(expression), std::move(landmarks), iod),
          std::move(sigma), spec};
}

/// Draws identity coefficients from the toy model's prior.
inline Vec sample_identity(const ToyModel& toy, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec a = toy.model.mean_identity();
  for (Eigen::Index i = 0; i < toy.identity_sigma.size(); ++i)
    a[i + 1] = toy.identity_sigma[i] * normal(rng);
  return a;
}

struct RenderOptions {
  int width = 64;
  int height = 64;
  float background = 0.1f;
  /// Splat standard deviation in units of the projected vertex spacing.
  double kernel_spacing_ratio = 0.7;
  double min_kernel_sigma = 0.6;
  /// Radius of the displacement warp around each landmark, in face widths.
  double warp_radius = 0.08;
};

/// Projected image position of every vertex, including the landmark
/// displacement warp.
inline Points2 splat_centers(const ParametricShapeModel& model, const Vec& alpha,
                             const Camera& camera, const MotionParams& p,
                             const RenderOptions& opt = {}) {
  require_dim(p.layout() == model.motion_layout(), "motion parameters do not match the model");
  const Vec shape = evaluate_shape(model, alpha, p.expression());
  const Mat3 r = euler_to_rotation(p.rotation());
  const Vec3 t = p.translation();
  const int n = model.vertex_count();
  Points2 centers(2, n);
  for (int i = 0; i < n; ++i)
    centers.col(i) = project_camera_point(r * shape.segment<3>(3 * i) + t, camera);

  const auto d = p.displacements();
  if (d.cwiseAbs().maxCoeff() == 0.0) return centers;
  const Mat& mean = model.identity_basis();
  const auto& lm = model.landmark_indices();
  const double width = mean.col(0).maxCoeff() - mean.col(0).minCoeff();
  const double r2 = 2.0 * std::pow(opt.warp_radius * width, 2);
  for (int i = 0; i < n; ++i) {
    const Vec2 rest(mean(3 * i, 0), mean(3 * i + 1, 0));
    Vec2 shift = Vec2::Zero();
    double total = 0.05;
    for (std::size_t k = 0; k < lm.size(); ++k) {
      const Vec2 anchor(mean(3 * lm[k], 0), mean(3 * lm[k] + 1, 0));
      const double w = std::exp(-(rest - anchor).squaredNorm() / r2);
      shift += w * Vec2(d[2 * static_cast<Eigen::Index>(k)], d[2 * static_cast<Eigen::Index>(k) + 1]);
      total += w;
    }
    centers.col(i) += shift / total;
  }
  return centers;
}

inline std::vector<float> vertex_albedo(int vertex_count, std::uint64_t appearance_seed) {
  Rng rng(derive_seed(appearance_seed, 0x616C6265ULL));
  std::uniform_real_distribution<float> u(0.15f, 1.0f);
  std::vector<float> a(static_cast<std::size_t>(vertex_count));
  for (auto& v : a) v = u(rng);
  return a;
}

/// Renders a grayscale frame in [0, 1]. Each pixel shows the kernel-weighted
/// albedo of nearby splats, fading to the background where coverage is low.
inline GrayImage render_frame(const ParametricShapeModel& model, const Vec& alpha,
                              const Camera& camera, const MotionParams& p,
                              std::uint64_t appearance_seed, const RenderOptions& opt = {}) {
  const Points2 centers = splat_centers(model, alpha, camera, p, opt);
  const auto albedo = vertex_albedo(model.vertex_count(), appearance_seed);
  const int n = model.vertex_count();
  const int gx = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const double width = model.identity_basis().col(0).maxCoeff() - model.identity_basis().col(0).minCoeff();
  const double px_per_unit = camera.focal / std::max(1e-9, static_cast<double>(p.translation().z()));
  const double spacing = width * px_per_unit / std::max(1, gx - 1);
  const double sigma = std::max(opt.min_kernel_sigma, opt.kernel_spacing_ratio * spacing);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

  std::vector<double> weight(static_cast<std::size_t>(opt.width * opt.height), 0.0);
  std::vector<double> value(weight.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const double cx = centers(0, i), cy = centers(1, i);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - radius);
    const int x1 = std::min(opt.width - 1, static_cast<int>(std::ceil(cx)) + radius);
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - radius);
    const int y1 = std::min(opt.height - 1, static_cast<int>(std::ceil(cy)) + radius);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 > 9.0 * sigma * sigma) continue;
        const double k = std::exp(-d2 * inv2s2);
        const auto idx = static_cast<std::size_t>(y * opt.width + x);
        weight[idx] += k;
        value[idx] += k * albedo[static_cast<std::size_t>(i)];
      }
  }

  constexpr double kCoverage = 0.5;
  GrayImage img(opt.width, opt.height, opt.background);
  for (std::size_t idx = 0; idx < weight.size(); ++idx) {
    const double w = weight[idx];
    double v;
    if (w >= kCoverage)
      v = value[idx] / w;
    else
      v = opt.background * (1.0 - w / kCoverage) + value[idx] / kCoverage;
    img.pixels()[idx] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return img;
}

struct RandomWalkConfig {
  // Initial state ranges.
  double expression_min = 0.1;
  double expression_max = 0.6;
  Vec3 rotation_range{0.3, 0.2, 0.15};
  /// Initial lateral offset range as a fraction of the face width.
  double lateral_range = 0.08;
  /// Initial depth offset range as a fraction of the base depth.
  double depth_range = 0.03;
  double displacement_sigma = 0.15;

  // Per-frame increments: Gaussian steps clipped to the bounds below.
  double expression_step = 0.03;
  double expression_bound = 0.08;
  double rotation_step = 0.015;
  double rotation_bound = 0.04;
  double lateral_step = 0.008;
  double lateral_bound = 0.025;
  double depth_step = 0.002;
  double depth_bound = 0.006;
  double displacement_step = 0.03;
  double displacement_bound = 0.1;
  /// Pull toward the initial state per frame.
  double mean_reversion = 0.03;

  // State limits.
  Vec3 rotation_limit{0.5, 0.35, 0.3};
  double lateral_limit = 0.15;
  double depth_limit = 0.06;
  double displacement_limit = 1.0;

  /// Gaussian noise on the first frame's detected landmarks (pixels).
  double landmark_noise = 0.0;
  /// Zero all increments (static scene).
  bool frozen = false;
};

struct SceneSeeds {
  std::uint64_t identity = 1;
  std::uint64_t appearance = 2;
  std::uint64_t motion = 3;
};

struct SceneSequence {
  std::vector<GrayImage> frames;
  std::vector<MotionParams> ground_truth;
  StaticParams statics;
  Points2 first_frame_landmarks;
  SceneSeeds seeds;
};

/// Per-coordinate increment bound of the walk for the given base depth.
inline MotionParams walk_increment_bounds(const ToyModel& toy, const RandomWalkConfig& cfg,
                                          double base_depth) {
  MotionParams b(toy.model.motion_layout());
  const double fw = toy.spec.face_width;
  b.expression().setConstant(cfg.expression_bound);
  b.rotation().setConstant(cfg.rotation_bound);
  b.translation() << cfg.lateral_bound * fw, cfg.lateral_bound * fw, cfg.depth_bound * base_depth;
  b.displacements().setConstant(cfg.displacement_bound);
  return b;
}

inline SceneSequence generate_sequence(const ToyModel& toy, const RandomWalkConfig& cfg,
                                       int length, const SceneSeeds& seeds,
                                       const RenderOptions& render = {},
                                       double base_depth = 1000.0, double focal = 1000.0,
                                       int threads = 1) {
  if (length < 1) fail(ErrorKind::kConfig, "sequence length must be at least 1");
  const auto& model = toy.model;
  const MotionLayout layout = model.motion_layout();
  SceneSequence seq;
  seq.seeds = seeds;
  Rng id_rng(derive_seed(seeds.identity, 0x6964ULL));
  seq.statics.identity = sample_identity(toy, id_rng);
  seq.statics.camera = Camera(focal, render.width / 2.0, render.height / 2.0);

  Rng rng(derive_seed(seeds.motion, 0x6D6F74ULL));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double fw = toy.spec.face_width;

  MotionParams p(layout);
  for (auto& e : p.expression())
    e = cfg.expression_min + (cfg.expression_max - cfg.expression_min) * (0.5 + 0.5 * unit(rng));
  for (int a = 0; a < 3; ++a) p.rotation()[a] = cfg.rotation_range[a] * unit(rng);
  p.translation() << cfg.lateral_range * fw * unit(rng), cfg.lateral_range * fw * unit(rng),
      base_depth * (1.0 + cfg.depth_range * unit(rng));
  for (auto& d : p.displacements())
    d = std::clamp(cfg.displacement_sigma * normal(rng), -cfg.displacement_limit, cfg.displacement_limit);
  const MotionParams anchor = p;
  const MotionParams bound = walk_increment_bounds(toy, cfg, base_depth);

  MotionParams lo(layout), hi(layout);
  lo.expression().setZero();
  hi.expression().setOnes();
  lo.rotation() = -cfg.rotation_limit;
  hi.rotation() = cfg.rotation_limit;
  lo.translation() << -cfg.lateral_limit * fw, -cfg.lateral_limit * fw, base_depth * (1.0 - cfg.depth_limit);
  hi.translation() << cfg.lateral_limit * fw, cfg.lateral_limit * fw, base_depth * (1.0 + cfg.depth_limit);
  lo.displacements().setConstant(-cfg.displacement_limit);
  hi.displacements().setConstant(cfg.displacement_limit);

  MotionParams step_sigma(layout);
  step_sigma.expression().setConstant(cfg.expression_step);
  step_sigma.rotation().setConstant(cfg.rotation_step);
  step_sigma.translation() << cfg.lateral_step * fw, cfg.lateral_step * fw, cfg.depth_step * base_depth;
  step_sigma.displacements().setConstant(cfg.displacement_step);

  seq.ground_truth.reserve(static_cast<std::size_t>(length));
  seq.ground_truth.push_back(p);
  for (int f = 1; f < length; ++f) {
    if (!cfg.frozen) {
      Vec next = p.values();
      for (Eigen::Index i = 0; i < next.size(); ++i) {
        const double pull = cfg.mean_reversion * (anchor.values()[i] - next[i]);
        const double inc = std::clamp(pull + step_sigma.values()[i] * normal(rng),
                                      -bound.values()[i], bound.values()[i]);
        next[i] = std::clamp(next[i] + inc, lo.values()[i], hi.values()[i]);
      }
      p.values() = next;
    }
    seq.ground_truth.push_back(p);
  }

  seq.frames.resize(static_cast<std::size_t>(length));
  parallel_for(static_cast<std::size_t>(length), threads, [&](std::size_t f) {
    seq.frames[f] = render_frame(model, seq.statics.identity, seq.statics.camera,
                                 seq.ground_truth[f], seeds.appearance, render);
  });

  seq.first_frame_landmarks =
      landmark_positions(model, seq.statics.identity, seq.statics.camera, seq.ground_truth.front());
  if (cfg.landmark_noise > 0.0) {
    Rng noise(derive_seed(seeds.motion, 0x6C6D6EULL));
    for (Eigen::Index k = 0; k < seq.first_frame_landmarks.size(); ++k)
      seq.first_frame_landmarks.data()[k] += cfg.landmark_noise * normal(noise);
  }
  return seq;
}

}  // namespace gombf
