#pragma once

// Parametric 3D shape model, rigid motion and pinhole projection.
//
// Shapes are S = B_id * alpha + B_exp * delta with alpha[0] == 1 selecting the
// mean neutral face. Euler angles are (yaw, pitch, roll) applied as intrinsic
// rotations Y -> X -> Z, i.e. R = Ry(yaw) * Rx(pitch) * Rz(roll). The camera
// looks down +z; projected pixels are (f x / z + u0, f y / z + v0).

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gombf/core.hpp"

namespace gombf {

/// Dimensions of the per-frame motion vector P = [delta; theta; t; D].
struct MotionLayout {
  int m_exp = 0;
  int n_landmarks = 0;

  int dim() const { return m_exp + 6 + 2 * n_landmarks; }
  int expression_offset() const { return 0; }
  int rotation_offset() const { return m_exp; }
  int translation_offset() const { return m_exp + 3; }
  int displacement_offset() const { return m_exp + 6; }
  bool operator==(const MotionLayout&) const = default;
};

/// Per-frame motion parameters. The four slices are stored contiguously in
/// the fixed order [expression; rotation; translation; displacements].
class MotionParams {
 public:
  MotionParams() = default;
  explicit MotionParams(MotionLayout layout)
      : layout_(layout), values_(Vec::Zero(layout.dim())) {}
  MotionParams(MotionLayout layout, Vec values)
      : layout_(layout), values_(std::move(values)) {
    require_dim(values_.size() == layout_.dim(),
                "motion vector length " + std::to_string(values_.size()) +
                    " does not match layout dimension " +
                    std::to_string(layout_.dim()));
  }

  const MotionLayout& layout() const { return layout_; }
  const Vec& values() const { return values_; }
  Vec& values() { return values_; }

  auto expression() { return values_.segment(layout_.expression_offset(), layout_.m_exp); }
  auto expression() const { return values_.segment(layout_.expression_offset(), layout_.m_exp); }
  auto rotation() { return values_.segment<3>(layout_.rotation_offset()); }
  auto rotation() const { return values_.segment<3>(layout_.rotation_offset()); }
  auto translation() { return values_.segment<3>(layout_.translation_offset()); }
  auto translation() const { return values_.segment<3>(layout_.translation_offset()); }
  auto displacements() { return values_.segment(layout_.displacement_offset(), 2 * layout_.n_landmarks); }
  auto displacements() const { return values_.segment(layout_.displacement_offset(), 2 * layout_.n_landmarks); }

 private:
  MotionLayout layout_;
  Vec values_;
};

struct Camera {
  double focal = 1000.0;
  double u0 = 0.0;
  double v0 = 0.0;

  Camera() = default;
  Camera(double f, double u, double v) : focal(f), u0(u), v0(v) {
    if (!(f > 0.0)) fail(ErrorKind::kConfig, "camera focal length must be positive");
  }
  bool operator==(const Camera&) const = default;
};

/// Identity coefficients (alpha[0] == 1) and camera, fixed over a sequence.
struct StaticParams {
  Vec identity;
  Camera camera;
};

class ParametricShapeModel {
 public:
  ParametricShapeModel() = default;

  ParametricShapeModel(Mat identity_basis, Mat expression_basis,
                       std::vector<int> landmark_indices,
                       std::array<int, 2> interocular_pair)
      : identity_basis_(std::move(identity_basis)),
        expression_basis_(std::move(expression_basis)),
        landmarks_(std::move(landmark_indices)),
        interocular_(interocular_pair) {
    const auto rows = identity_basis_.rows();
    require_dim(rows > 0 && rows % 3 == 0,
                "identity basis rows must be a positive multiple of 3");
    require_dim(identity_basis_.cols() >= 1,
                "identity basis needs at least the mean column");
    require_dim(expression_basis_.rows() == rows,
                "expression basis rows must match identity basis rows");
    const int n = static_cast<int>(rows / 3);
    require_dim(!landmarks_.empty(), "landmark list is empty");
    for (int idx : landmarks_)
      require_dim(idx >= 0 && idx < n,
                  "landmark vertex index " + std::to_string(idx) +
                      " outside [0, " + std::to_string(n) + ")");
    const int nl = static_cast<int>(landmarks_.size());
    require_dim(interocular_[0] != interocular_[1] && interocular_[0] >= 0 &&
                    interocular_[1] >= 0 && interocular_[0] < nl &&
                    interocular_[1] < nl,
                "interocular pair must be two distinct landmark slots");
    build_landmark_bases();
  }

  int vertex_count() const { return static_cast<int>(identity_basis_.rows() / 3); }
  int identity_rank() const { return static_cast<int>(identity_basis_.cols()) - 1; }
  int expression_rank() const { return static_cast<int>(expression_basis_.cols()); }
  int landmark_count() const { return static_cast<int>(landmarks_.size()); }
  MotionLayout motion_layout() const { return {expression_rank(), landmark_count()}; }

  const Mat& identity_basis() const { return identity_basis_; }
  const Mat& expression_basis() const { return expression_basis_; }
  const std::vector<int>& landmark_indices() const { return landmarks_; }
  const std::array<int, 2>& interocular_pair() const { return interocular_; }

  /// Rows of the bases restricted to the landmark vertices (3 rows each).
  const Mat& landmark_identity_basis() const { return lm_identity_; }
  const Mat& landmark_expression_basis() const { return lm_expression_; }

  /// alpha = [1, 0, ..., 0].
  Vec mean_identity() const {
    Vec a = Vec::Zero(identity_basis_.cols());
    a[0] = 1.0;
    return a;
  }

  void check_coefficients(const Vec& alpha, const Eigen::Ref<const Vec>& delta) const {
    require_dim(alpha.size() == identity_basis_.cols(),
                "identity coefficient length " + std::to_string(alpha.size()) +
                    " != " + std::to_string(identity_basis_.cols()));
    require_dim(delta.size() == expression_basis_.cols(),
                "expression coefficient length " + std::to_string(delta.size()) +
                    " != " + std::to_string(expression_basis_.cols()));
  }

  bool operator==(const ParametricShapeModel& o) const {
    return same_matrix(identity_basis_, o.identity_basis_) &&
           same_matrix(expression_basis_, o.expression_basis_) &&
           landmarks_ == o.landmarks_ && interocular_ == o.interocular_;
  }

 private:
  void build_landmark_bases() {
    const int nl = landmark_count();
    lm_identity_.resize(3 * nl, identity_basis_.cols());
    lm_expression_.resize(3 * nl, expression_basis_.cols());
    for (int k = 0; k < nl; ++k) {
      lm_identity_.middleRows(3 * k, 3) = identity_basis_.middleRows(3 * landmarks_[k], 3);
      lm_expression_.middleRows(3 * k, 3) = expression_basis_.middleRows(3 * landmarks_[k], 3);
    }
  }

  Mat identity_basis_;
  Mat expression_basis_;
  std::vector<int> landmarks_;
  std::array<int, 2> interocular_{0, 1};
  Mat lm_identity_;
  Mat lm_expression_;
};

/// Full vertex vector (3n) of the shape.
inline Vec evaluate_shape(const ParametricShapeModel& model, const Vec& alpha,
                          const Eigen::Ref<const Vec>& delta) {
  model.check_coefficients(alpha, delta);
  return model.identity_basis() * alpha + model.expression_basis() * delta;
}

/// 3D landmark vertices as a 3 x L matrix.
inline Points3 landmark_vertices(const ParametricShapeModel& model, const Vec& alpha,
                                 const Eigen::Ref<const Vec>& delta) {
  model.check_coefficients(alpha, delta);
  const Vec flat = model.landmark_identity_basis() * alpha +
                   model.landmark_expression_basis() * delta;
  return Eigen::Map<const Points3>(flat.data(), 3, model.landmark_count());
}

inline Mat3 euler_to_rotation(const Vec3& theta) {
  const double cy = std::cos(theta[0]), sy = std::sin(theta[0]);
  const double cp = std::cos(theta[1]), sp = std::sin(theta[1]);
  const double cr = std::cos(theta[2]), sr = std::sin(theta[2]);
  Mat3 ry, rx, rz;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  return ry * rx * rz;
}

/// Partial derivatives of euler_to_rotation with respect to yaw, pitch, roll.
inline std::array<Mat3, 3> euler_rotation_derivatives(const Vec3& theta) {
  const double cy = std::cos(theta[0]), sy = std::sin(theta[0]);
  const double cp = std::cos(theta[1]), sp = std::sin(theta[1]);
  const double cr = std::cos(theta[2]), sr = std::sin(theta[2]);
  Mat3 ry, rx, rz, dry, drx, drz;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rx << 1, 0, 0, 0, cp, -sp, 0, sp, cp;
  rz << cr, -sr, 0, sr, cr, 0, 0, 0, 1;
  dry << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  drx << 0, 0, 0, 0, -sp, -cp, 0, cp, -sp;
  drz << -sr, -cr, 0, cr, -sr, 0, 0, 0, 0;
  return {dry * rx * rz, ry * drx * rz, ry * rx * drz};
}

/// Inverse of euler_to_rotation for pitch in (-pi/2, pi/2).
inline Vec3 rotation_to_euler(const Mat3& r) {
  const double pitch = std::asin(std::clamp(-r(1, 2), -1.0, 1.0));
  const double yaw = std::atan2(r(0, 2), r(2, 2));
  const double roll = std::atan2(r(1, 0), r(1, 1));
  return {yaw, pitch, roll};
}

inline Vec2 project_camera_point(const Vec3& c, const Camera& camera) {
  if (!(c.z() > 0.0))
    fail(ErrorKind::kBehindCamera,
         "point behind camera (camera-space depth " + std::to_string(c.z()) + ")");
  return {camera.focal * c.x() / c.z() + camera.u0,
          camera.focal * c.y() / c.z() + camera.v0};
}

inline Vec2 project_point(const Vec3& v, const Vec3& theta, const Vec3& t,
                          const Camera& camera) {
  return project_camera_point(euler_to_rotation(theta) * v + t, camera);
}

/// Projected landmark vertices plus the displacement slice of P.
inline Points2 landmark_positions(const ParametricShapeModel& model, const Vec& alpha,
                                  const Camera& camera, const MotionParams& p) {
  require_dim(p.layout() == model.motion_layout(),
              "motion parameters do not match the shape model layout");
  const Points3 verts = landmark_vertices(model, alpha, p.expression());
  const Mat3 r = euler_to_rotation(p.rotation());
  const Vec3 t = p.translation();
  const auto d = p.displacements();
  Points2 out(2, verts.cols());
  for (Eigen::Index k = 0; k < verts.cols(); ++k) {
    out.col(k) = project_camera_point(r * verts.col(k) + t, camera) +
                 Vec2(d[2 * k], d[2 * k + 1]);
  }
  return out;
}

inline double interocular_distance(const ParametricShapeModel& model,
                                   const Points2& landmarks) {
  const auto& pair = model.interocular_pair();
  return (landmarks.col(pair[0]) - landmarks.col(pair[1])).norm();
}

}  // namespace gombf
