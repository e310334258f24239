#pragma once

#include <cmath>
#include <vector>

#include "gombf/core.hpp"
#include "gombf/shape_model.hpp"

namespace gombf {

/// Point-to-point RMS landmark error divided by the ground-truth interocular
/// distance. Shared by training reports, tracking and comparison.
inline double normalized_landmark_error(const Points2& predicted, const Points2& truth,
                                        const std::array<int, 2>& interocular_pair) {
  require_dim(predicted.cols() == truth.cols(), "landmark counts differ");
  const double iod = (truth.col(interocular_pair[0]) - truth.col(interocular_pair[1])).norm();
  if (!(iod > 0.0)) fail(ErrorKind::kDegenerateConfiguration, "zero interocular distance");
  const double ms = (predicted - truth).colwise().squaredNorm().mean();
  return std::sqrt(ms) / iod;
}

inline double normalized_landmark_error(const ParametricShapeModel& model, const Points2& predicted,
                                        const Points2& truth) {
  return normalized_landmark_error(predicted, truth, model.interocular_pair());
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double root_mean_square(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace gombf
