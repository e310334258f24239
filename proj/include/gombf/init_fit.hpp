#pragma once

// First-frame fitting of identity, expression and rigid pose to 2D landmarks.
//
// Energy:
//   E = sum_k |proj(R S_k + t) - p_k|^2 + w1 sum_i (alpha_i / sigma_i)^2
//       + w2 sum_i |delta_i|
// minimized by coordinate descent over alpha (damped Gauss-Newton), delta
// (projected gradient on [0,1]^m) and pose (POSIT followed by Gauss-Newton),
// closed by a projected Levenberg-Marquardt pass over all parameters.
// Every sub-step only accepts iterates that do not raise E.

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "gombf/core.hpp"
#include "gombf/shape_model.hpp"

namespace gombf {

struct FitConfig {
  double w1 = 10.0;
  double w2 = 1.0;
  int outer_iterations = 3;
  double delta_lower = 0.0;
  double delta_upper = 1.0;
  int expression_iterations = 5000;
  double expression_tolerance = 1e-12;
  int identity_iterations = 30;
  int pose_iterations = 30;
  int joint_iterations = 50;
  int posit_iterations = 200;
  double posit_tolerance = 1e-12;
};

inline void validate(const FitConfig& c) {
  if (!(c.w1 >= 0.0) || !(c.w2 >= 0.0)) fail(ErrorKind::kConfig, "fit weights must be non-negative");
  if (c.outer_iterations < 1) fail(ErrorKind::kConfig, "fit needs at least one outer iteration");
  if (!(c.delta_lower <= c.delta_upper)) fail(ErrorKind::kConfig, "empty expression bound box");
}

/// Full parameter set of a fit.
struct FitState {
  Vec alpha;
  Vec delta;
  Vec3 theta = Vec3::Zero();
  Vec3 t = Vec3::Zero();
};

struct EnergyTerms {
  double value = 0.0;
  double landmark = 0.0;
  double regularization = 0.0;
  /// Gradient of the smooth part w.r.t. alpha_1..alpha_m (alpha_0 is fixed).
  Vec grad_identity;
  /// Gradient w.r.t. delta; |delta_i| contributes w2 * sign(delta_i) with
  /// sign(0) = 0.
  Vec grad_expression;
};

namespace detail {

struct LandmarkJacobians {
  Vec residual;  // 2L: projected - detected
  Mat identity;  // 2L x m_id (free alpha components)
  Mat expression;  // 2L x m_exp
  Mat pose;  // 2L x 6 (yaw, pitch, roll, tx, ty, tz)
};

inline LandmarkJacobians landmark_jacobians(const ParametricShapeModel& model, const FitState& s,
                                            const Points2& detected, const Camera& camera,
                                            bool want_identity, bool want_expression,
                                            bool want_pose) {
  const int nl = model.landmark_count();
  const Points3 verts = landmark_vertices(model, s.alpha, s.delta);
  const Mat3 r = euler_to_rotation(s.theta);
  std::array<Mat3, 3> dr{};
  if (want_pose) dr = euler_rotation_derivatives(s.theta);
  LandmarkJacobians j;
  j.residual.resize(2 * nl);
  if (want_identity) j.identity.resize(2 * nl, model.identity_rank());
  if (want_expression) j.expression.resize(2 * nl, model.expression_rank());
  if (want_pose) j.pose.resize(2 * nl, 6);
  const Mat& bid = model.landmark_identity_basis();
  const Mat& bexp = model.landmark_expression_basis();
  for (int k = 0; k < nl; ++k) {
    const Vec3 c = r * verts.col(k) + s.t;
    const Vec2 p = project_camera_point(c, camera);
    j.residual.segment<2>(2 * k) = p - detected.col(k);
    Eigen::Matrix<double, 2, 3> dp;
    const double iz = 1.0 / c.z();
    dp << camera.focal * iz, 0.0, -camera.focal * c.x() * iz * iz, 0.0, camera.focal * iz,
        -camera.focal * c.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> dpr = dp * r;
    if (want_identity)
      j.identity.middleRows(2 * k, 2) = dpr * bid.block(3 * k, 1, 3, model.identity_rank());
    if (want_expression) j.expression.middleRows(2 * k, 2) = dpr * bexp.middleRows(3 * k, 3);
    if (want_pose) {
      for (int a = 0; a < 3; ++a) j.pose.block<2, 1>(2 * k, a) = dp * (dr[a] * verts.col(k));
      j.pose.block<2, 3>(2 * k, 3) = dp;
    }
  }
  return j;
}

inline double regularization(const FitState& s, const Vec& sigma, const FitConfig& cfg) {
  const Vec scaled = s.alpha.tail(sigma.size()).cwiseQuotient(sigma);
  return cfg.w1 * scaled.squaredNorm() + cfg.w2 * s.delta.cwiseAbs().sum();
}

inline void check_sigma(const ParametricShapeModel& model, const Vec& sigma) {
  require_dim(sigma.size() == model.identity_rank(),
              "identity prior deviations must have length m_id");
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    if (!(sigma[i] > 0.0))
      fail(ErrorKind::kConfig, "identity prior deviation " + std::to_string(i + 1) + " must be positive");
}

}  // namespace detail

/// Energy value only.
inline double fit_energy(const ParametricShapeModel& model, const FitState& s,
                         const Points2& detected, const Camera& camera, const Vec& sigma,
                         const FitConfig& cfg) {
  const auto j = detail::landmark_jacobians(model, s, detected, camera, false, false, false);
  return j.residual.squaredNorm() + detail::regularization(s, sigma, cfg);
}

inline EnergyTerms landmark_energy(const ParametricShapeModel& model, const FitState& s,
                                   const Points2& detected, const Camera& camera,
                                   const Vec& sigma, const FitConfig& cfg) {
  detail::check_sigma(model, sigma);
  model.check_coefficients(s.alpha, s.delta);
  require_dim(detected.cols() == model.landmark_count(), "detected landmark count mismatch");
  const auto j = detail::landmark_jacobians(model, s, detected, camera, true, true, false);
  EnergyTerms e;
  e.landmark = j.residual.squaredNorm();
  e.regularization = detail::regularization(s, sigma, cfg);
  e.value = e.landmark + e.regularization;
  const Vec free_alpha = s.alpha.tail(sigma.size());
  e.grad_identity = 2.0 * j.identity.transpose() * j.residual +
                    2.0 * cfg.w1 * free_alpha.cwiseQuotient(sigma.cwiseAbs2());
  e.grad_expression = 2.0 * j.expression.transpose() * j.residual;
  for (Eigen::Index i = 0; i < s.delta.size(); ++i) {
    const double d = s.delta[i];
    e.grad_expression[i] += cfg.w2 * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
  }
  return e;
}

struct Pose {
  Vec3 theta = Vec3::Zero();
  Vec3 t = Vec3::Zero();
};

/// POSIT: scaled-orthographic pose estimates iteratively corrected for
/// perspective. Needs >= 4 non-coplanar object points in front of the camera.
inline Pose posit(const Points3& object, const Points2& image, const Camera& camera,
                  int max_iterations = 200, double tolerance = 1e-12) {
  const auto k = object.cols();
  require_dim(image.cols() == k, "POSIT needs one image point per object point");
  if (k < 4) fail(ErrorKind::kDegenerateConfiguration, "POSIT needs at least 4 points");

  Mat a(k - 1, 3);
  for (Eigen::Index i = 1; i < k; ++i) a.row(i - 1) = (object.col(i) - object.col(0)).transpose();
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec sv = svd.singularValues();
  if (!(sv[2] > 1e-9 * sv[0]))
    fail(ErrorKind::kDegenerateConfiguration, "POSIT object points are coplanar");
  const Mat b = svd.solve(Mat::Identity(k - 1, k - 1));  // 3 x (k-1) pseudo-inverse

  Vec x(k), y(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    x[i] = (image(0, i) - camera.u0) / camera.focal;
    y[i] = (image(1, i) - camera.v0) / camera.focal;
  }
  Vec eps = Vec::Zero(k);
  Vec3 ri, rj, rk;
  double z0 = 0.0;
  bool converged = false;
  for (int it = 0; it < max_iterations; ++it) {
    Vec xs(k - 1), ys(k - 1);
    for (Eigen::Index i = 1; i < k; ++i) {
      xs[i - 1] = x[i] * (1.0 + eps[i]) - x[0];
      ys[i - 1] = y[i] * (1.0 + eps[i]) - y[0];
    }
    const Vec3 vi = b * xs;
    const Vec3 vj = b * ys;
    const double si = vi.norm(), sj = vj.norm();
    if (!(si > 0.0) || !(sj > 0.0))
      fail(ErrorKind::kDegenerateConfiguration, "POSIT image points are degenerate");
    ri = vi / si;
    rj = vj / sj;
    rk = ri.cross(rj).normalized();
    z0 = 1.0 / std::sqrt(si * sj);
    Vec next(k);
    for (Eigen::Index i = 0; i < k; ++i) next[i] = (object.col(i) - object.col(0)).dot(rk) / z0;
    const double change = (next - eps).cwiseAbs().maxCoeff();
    eps = next;
    if (!std::isfinite(change)) break;
    if (change < tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) fail(ErrorKind::kConvergence, "POSIT did not converge");
  if (!(z0 > 0.0)) fail(ErrorKind::kBehindCamera, "POSIT placed the object behind the camera");

  Mat3 r;
  r.row(0) = ri.transpose();
  r.row(1) = rj.transpose();
  r.row(2) = rk.transpose();
  Eigen::JacobiSVD<Mat3> rsvd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = rsvd.matrixU() * rsvd.matrixV().transpose();
  if (r.determinant() < 0.0) r.row(2) *= -1.0;
  const Vec3 reference(x[0] * z0, y[0] * z0, z0);
  return {rotation_to_euler(r), reference - r * object.col(0)};
}

namespace detail {

/// Damped Gauss-Newton over alpha_1..m with the quadratic prior.
inline void identity_step(const ParametricShapeModel& model, FitState& s, const Points2& detected,
                          const Camera& camera, const Vec& sigma, const FitConfig& cfg,
                          double& energy) {
  const Vec prior = cfg.w1 * sigma.cwiseAbs2().cwiseInverse();
  for (int it = 0; it < cfg.identity_iterations; ++it) {
    const auto j = landmark_jacobians(model, s, detected, camera, true, false, false);
    Mat h = j.identity.transpose() * j.identity;
    h.diagonal() += prior;
    const Vec g = j.identity.transpose() * j.residual +
                  prior.cwiseProduct(s.alpha.tail(sigma.size()));
    const Vec step = -h.ldlt().solve(g);
    bool accepted = false;
    for (double scale = 1.0; scale > 1e-6; scale *= 0.5) {
      FitState trial = s;
      trial.alpha.tail(sigma.size()) += scale * step;
      double e;
      try {
        e = fit_energy(model, trial, detected, camera, sigma, cfg);
      } catch (const Error& err) {
        if (err.kind() == ErrorKind::kBehindCamera) continue;
        throw;
      }
      if (e <= energy) {
        accepted = e < energy;
        s = trial;
        energy = e;
        break;
      }
    }
    if (!accepted) break;
  }
}

/// Damped Gauss-Newton over (theta, t) on the landmark term.
inline void pose_refine(const ParametricShapeModel& model, FitState& s, const Points2& detected,
                        const Camera& camera, const Vec& sigma, const FitConfig& cfg,
                        double& energy) {
  double mu = 1e-6;
  for (int it = 0; it < cfg.pose_iterations; ++it) {
    const auto j = landmark_jacobians(model, s, detected, camera, false, false, true);
    const Eigen::Matrix<double, 6, 6> jtj = j.pose.transpose() * j.pose;
    const Eigen::Matrix<double, 6, 1> g = j.pose.transpose() * j.residual;
    bool accepted = false;
    for (int tries = 0; tries < 12; ++tries) {
      Eigen::Matrix<double, 6, 6> h = jtj;
      h.diagonal() += mu * (jtj.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> step = -h.ldlt().solve(g);
      FitState trial = s;
      trial.theta += step.head<3>();
      trial.t += step.tail<3>();
      double e = energy;
      bool valid = true;
      try {
        e = fit_energy(model, trial, detected, camera, sigma, cfg);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kBehindCamera) throw;
        valid = false;
      }
      if (valid && e < energy) {
        s = trial;
        energy = e;
        mu = std::max(1e-9, mu * 0.3);
        accepted = true;
        break;
      }
      mu *= 10.0;
    }
    if (!accepted) break;
  }
}

/// Projected Levenberg-Marquardt over (alpha, delta, theta, t) jointly.
/// Inside the box the |delta| term is linear, so the energy is smooth on the
/// feasible set; delta components held at a bound by the gradient are frozen
/// for the step.
inline void joint_refine(const ParametricShapeModel& model, FitState& s, const Points2& detected,
                         const Camera& camera, const Vec& sigma, const FitConfig& cfg,
                         double& energy) {
  const int mi = model.identity_rank();
  const int me = model.expression_rank();
  const int dim = mi + me + 6;
  const Vec prior = cfg.w1 * sigma.cwiseAbs2().cwiseInverse();
  double mu = 1e-6;
  for (int it = 0; it < cfg.joint_iterations; ++it) {
    const auto j = landmark_jacobians(model, s, detected, camera, true, true, true);
    Mat jac(j.residual.size(), dim);
    jac << j.identity, j.expression, j.pose;
    Mat h = jac.transpose() * jac;
    Vec g = jac.transpose() * j.residual;
    h.diagonal().head(mi) += prior;
    g.head(mi) += prior.cwiseProduct(s.alpha.tail(mi));
    for (int i = 0; i < me; ++i) {
      const double d = s.delta[i];
      g[mi + i] += 0.5 * cfg.w2 * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    std::vector<int> free;
    for (int i = 0; i < dim; ++i) {
      if (i >= mi && i < mi + me) {
        const double d = s.delta[i - mi];
        if (d <= cfg.delta_lower && g[i] > 0.0) continue;
        if (d >= cfg.delta_upper && g[i] < 0.0) continue;
      }
      free.push_back(i);
    }
    const int nf = static_cast<int>(free.size());
    Mat hf(nf, nf);
    Vec gf(nf);
    for (int a = 0; a < nf; ++a) {
      gf[a] = g[free[a]];
      for (int b = 0; b < nf; ++b) hf(a, b) = h(free[a], free[b]);
    }
    bool accepted = false;
    for (int tries = 0; tries < 12; ++tries) {
      Mat damped = hf;
      damped.diagonal() += mu * (hf.diagonal().array() + 1e-12).matrix();
      const Vec sf = -damped.ldlt().solve(gf);
      Vec step = Vec::Zero(dim);
      for (int a = 0; a < nf; ++a) step[free[a]] = sf[a];
      FitState trial = s;
      trial.alpha.tail(mi) += step.head(mi);
      trial.delta = (s.delta + step.segment(mi, me))
                        .cwiseMax(cfg.delta_lower)
                        .cwiseMin(cfg.delta_upper);
      trial.theta += step.segment<3>(mi + me);
      trial.t += step.tail<3>();
      double e = energy;
      bool valid = true;
      try {
        e = fit_energy(model, trial, detected, camera, sigma, cfg);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::kBehindCamera) throw;
        valid = false;
      }
      if (valid && e < energy) {
        s = trial;
        energy = e;
        mu = std::max(1e-9, mu * 0.3);
        accepted = true;
        break;
      }
      mu *= 10.0;
    }
    if (!accepted) break;
  }
}

}  // namespace detail

/// Projected gradient descent on delta within the bound box, with
/// Barzilai-Borwein trial steps and Armijo backtracking. Accepted iterates
/// never raise the energy and never leave the box.
inline Vec solve_expression_bounded(const ParametricShapeModel& model, const FitState& start,
                                    const Points2& detected, const Camera& camera,
                                    const Vec& sigma, const FitConfig& cfg,
                                    std::vector<double>* energy_trace = nullptr) {
  FitState s = start;
  auto project = [&](Vec d) {
    return d.cwiseMax(cfg.delta_lower).cwiseMin(cfg.delta_upper).eval();
  };
  s.delta = project(s.delta);
  EnergyTerms e = landmark_energy(model, s, detected, camera, sigma, cfg);
  if (energy_trace) energy_trace->assign(1, e.value);
  double step = 1e-3;
  Vec prev_delta, prev_grad;
  for (int it = 0; it < cfg.expression_iterations; ++it) {
    const Vec& g = e.grad_expression;
    const Vec pg = s.delta - project(s.delta - g);
    if (pg.cwiseAbs().maxCoeff() <= cfg.expression_tolerance) break;
    if (it > 0) {
      const Vec sd = s.delta - prev_delta;
      const Vec yd = g - prev_grad;
      const double sy = sd.dot(yd);
      if (sy > 0.0) step = std::clamp(sd.squaredNorm() / sy, 1e-12, 1e6);
    }
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      FitState trial = s;
      trial.delta = project(s.delta - step * g);
      const Vec moved = trial.delta - s.delta;
      if (moved.cwiseAbs().maxCoeff() == 0.0) break;
      const EnergyTerms te = landmark_energy(model, trial, detected, camera, sigma, cfg);
      if (te.value <= e.value + 1e-4 * g.dot(moved) && te.value <= e.value) {
        prev_delta = s.delta;
        prev_grad = g;
        s = trial;
        e = te;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (energy_trace) energy_trace->push_back(e.value);
  }
  return s.delta;
}

struct FitResult {
  Vec alpha;
  Vec delta;
  Vec3 theta = Vec3::Zero();
  Vec3 t = Vec3::Zero();
  Vec displacements;
  double energy = 0.0;
  /// Energy after each outer iteration.
  std::vector<double> energy_trace;

  MotionParams motion(const MotionLayout& layout) const {
    MotionParams p(layout);
    p.expression() = delta;
    p.rotation() = theta;
    p.translation() = t;
    p.displacements() = displacements;
    return p;
  }
};

/// Coordinate descent alpha -> delta -> pose from both mirror branches of the
/// initial pose, then D = detected - projected.
inline FitResult fit_first_frame(const Points2& detected, const ParametricShapeModel& model,
                                 const Camera& camera, const Vec& sigma,
                                 const FitConfig& cfg = {}) {
  validate(cfg);
  detail::check_sigma(model, sigma);
  require_dim(detected.cols() == model.landmark_count(),
              "detected landmark count " + std::to_string(detected.cols()) + " != model landmarks " +
                  std::to_string(model.landmark_count()));

  FitState s;
  s.alpha = model.mean_identity();
  s.delta = Vec::Zero(model.expression_rank())
                .cwiseMax(cfg.delta_lower)
                .cwiseMin(cfg.delta_upper);
  auto run_posit = [&](const FitState& state) {
    return posit(landmark_vertices(model, state.alpha, state.delta), detected, camera,
                 cfg.posit_iterations, cfg.posit_tolerance);
  };
  try {
    const Pose p0 = run_posit(s);
    s.theta = p0.theta;
    s.t = p0.t;
  } catch (const Error& e) {
    rethrow_with_context(e, "initial pose");
  }

  auto descend = [&](FitState& state, std::vector<double>& trace) {
    double energy = fit_energy(model, state, detected, camera, sigma, cfg);
    for (int it = 0; it < cfg.outer_iterations; ++it) {
      const std::string where = "fit iteration " + std::to_string(it + 1);
      try {
        detail::identity_step(model, state, detected, camera, sigma, cfg, energy);
      } catch (const Error& e) {
        rethrow_with_context(e, where + ", identity step");
      }
      try {
        state.delta = solve_expression_bounded(model, state, detected, camera, sigma, cfg);
        energy = fit_energy(model, state, detected, camera, sigma, cfg);
      } catch (const Error& e) {
        rethrow_with_context(e, where + ", expression step");
      }
      try {
        FitState candidate = state;
        const Pose p = run_posit(state);
        candidate.theta = p.theta;
        candidate.t = p.t;
        const double ec = fit_energy(model, candidate, detected, camera, sigma, cfg);
        if (ec < energy) {
          state = candidate;
          energy = ec;
        }
      } catch (const Error& e) {
        // A failed POSIT on an intermediate shape keeps the current pose; the
        // Gauss-Newton refinement below still runs.
        if (e.kind() != ErrorKind::kConvergence && e.kind() != ErrorKind::kBehindCamera)
          rethrow_with_context(e, where + ", pose step");
      }
      try {
        detail::pose_refine(model, state, detected, camera, sigma, cfg, energy);
      } catch (const Error& e) {
        rethrow_with_context(e, where + ", pose step");
      }
      try {
        detail::joint_refine(model, state, detected, camera, sigma, cfg, energy);
      } catch (const Error& e) {
        rethrow_with_context(e, where + ", joint refinement");
      }
      trace.push_back(energy);
    }
    return energy;
  };

  // A shallow face seen from afar projects almost identically when yaw and
  // pitch change sign, so both branches are descended and the lower wins.
  FitState mirrored = s;
  mirrored.theta[0] = -s.theta[0];
  mirrored.theta[1] = -s.theta[1];
  FitResult result;
  double energy = descend(s, result.energy_trace);
  std::vector<double> mirrored_trace;
  try {
    if (const double em = descend(mirrored, mirrored_trace); em < energy) {
      s = mirrored;
      energy = em;
      result.energy_trace = std::move(mirrored_trace);
    }
  } catch (const Error&) {
    // The mirror branch is optional; the primary branch already succeeded.
  }

  result.alpha = s.alpha;
  result.delta = s.delta;
  result.theta = s.theta;
  result.t = s.t;
  result.energy = energy;
  MotionParams p(model.motion_layout());
  p.expression() = s.delta;
  p.rotation() = s.theta;
  p.translation() = s.t;
  const Points2 residual = detected - landmark_positions(model, s.alpha, camera, p);
  result.displacements = residual.reshaped();
  return result;
}

}  // namespace gombf
