#pragma once

// Random ferns and boosted ferns over pixel-difference features.
//
// A fern of depth F applies one split test per level. Bit b of the leaf index
// is set when test b holds, i.e. x[i] - x[j] > tau. Leaves store the output
// increment for each of the 2^F cells.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gombf/core.hpp"

namespace gombf {

struct SplitTest {
  int i = 0;
  int j = 1;
  double threshold = 0.0;

  bool operator==(const SplitTest&) const = default;
};

class Fern {
 public:
  Fern() = default;
  Fern(std::vector<SplitTest> tests, Mat leaves, int appearance_length)
      : tests_(std::move(tests)), leaves_(std::move(leaves)), m_(appearance_length) {
    require_dim(leaves_.cols() == (Eigen::Index{1} << tests_.size()),
                "fern leaf matrix must have 2^F columns");
    for (const auto& t : tests_)
      require_dim(t.i != t.j && t.i >= 0 && t.j >= 0 && t.i < m_ && t.j < m_,
                  "split test pixel indices must be distinct and below the "
                  "appearance length");
  }

  int depth() const { return static_cast<int>(tests_.size()); }
  int leaf_count() const { return 1 << depth(); }
  int output_dim() const { return static_cast<int>(leaves_.rows()); }
  int appearance_length() const { return m_; }
  const std::vector<SplitTest>& tests() const { return tests_; }
  const Mat& leaves() const { return leaves_; }
  Mat& leaves() { return leaves_; }

  int descend(const Eigen::Ref<const Vec>& x) const {
    require_dim(x.size() == m_, "appearance vector length " + std::to_string(x.size()) +
                                    " != fern input length " + std::to_string(m_));
    return descend_unchecked(x);
  }

  int descend_unchecked(const Eigen::Ref<const Vec>& x) const {
    int index = 0;
    for (int b = 0; b < depth(); ++b) {
      const auto& t = tests_[b];
      if (x[t.i] - x[t.j] > t.threshold) index |= 1 << b;
    }
    return index;
  }

  Vec predict(const Eigen::Ref<const Vec>& x) const { return leaves_.col(descend(x)); }

  bool operator==(const Fern& o) const {
    return tests_ == o.tests_ && same_matrix(leaves_, o.leaves_) && m_ == o.m_;
  }

 private:
  std::vector<SplitTest> tests_;
  Mat leaves_;
  int m_ = 0;
};

class BoostedFerns {
 public:
  BoostedFerns() = default;
  explicit BoostedFerns(std::vector<Fern> ferns) : ferns_(std::move(ferns)) {
    for (const auto& f : ferns_) {
      const auto& first = ferns_.front();
      require_dim(f.output_dim() == first.output_dim() && f.depth() == first.depth() &&
                      f.appearance_length() == first.appearance_length(),
                  "boosted ferns members disagree on output dim, depth or input length");
    }
  }

  const std::vector<Fern>& ferns() const { return ferns_; }
  std::vector<Fern>& ferns() { return ferns_; }
  int size() const { return static_cast<int>(ferns_.size()); }
  int output_dim() const { return ferns_.empty() ? 0 : ferns_.front().output_dim(); }
  int depth() const { return ferns_.empty() ? 0 : ferns_.front().depth(); }
  int appearance_length() const { return ferns_.empty() ? 0 : ferns_.front().appearance_length(); }

  Vec predict(const Eigen::Ref<const Vec>& x) const {
    Vec y = Vec::Zero(output_dim());
    for (const auto& f : ferns_) y += f.leaves().col(f.descend(x));
    return y;
  }

  bool operator==(const BoostedFerns&) const = default;

 private:
  std::vector<Fern> ferns_;
};

/// Training appearance matrix (N samples x M pixels) with the statistics the
/// split search needs: column means, centred copy, pixel covariance.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  explicit FeatureMatrix(Mat x) : x_(std::move(x)) {
    require_dim(x_.rows() >= 1 && x_.cols() >= 2,
                "feature matrix needs at least one sample and two pixels");
    mean_ = x_.colwise().mean().transpose();
    centered_ = x_.rowwise() - mean_.transpose();
    const double n = static_cast<double>(x_.rows());
    cov_ = (centered_.transpose() * centered_) / n;
  }

  Eigen::Index samples() const { return x_.rows(); }
  int pixels() const { return static_cast<int>(x_.cols()); }
  const Mat& values() const { return x_; }
  const Mat& centered() const { return centered_; }
  const Mat& covariance() const { return cov_; }

 private:
  Mat x_;
  Vec mean_;
  Mat centered_;
  Mat cov_;
};

struct FernParams {
  int ferns = 80;
  int depth = 5;
  double shrinkage = 1000.0;
  /// When false, a degenerate first fern also takes the fallback split.
  bool strict_first = true;
};

namespace detail {

inline constexpr int kProjectionRedraws = 5;

/// Best |corr(x_i - x_j, y)| over i < j given per-pixel covariances with y.
/// Returns {-1, -1} when no pair has nonzero correlation.
inline std::pair<int, int> best_pair(const FeatureMatrix& fm, const Vec& cov_xy,
                                     double var_y) {
  const Mat& c = fm.covariance();
  const int m = fm.pixels();
  double best = 0.0;
  std::pair<int, int> arg{-1, -1};
  for (int j = 1; j < m; ++j) {
    const double vj = c(j, j);
    const double cj = cov_xy[j];
    for (int i = 0; i < j; ++i) {
      const double var_d = c(i, i) + vj - 2.0 * c(i, j);
      if (!(var_d > 1e-14)) continue;
      const double num = cov_xy[i] - cj;
      const double corr = std::abs(num) / std::sqrt(var_d * var_y);
      if (corr > best) {
        best = corr;
        arg = {i, j};
      }
    }
  }
  return arg;
}

}  // namespace detail

/// Correlation-based split selection against a random unit projection of the
/// residuals, followed by a threshold drawn from U[-c, c] with c the selected
/// feature's maximum absolute value over the training set.
///
/// Throws kDegenerateTarget when every drawn projection of the residuals has
/// zero variance. If projections have variance but no pixel pair correlates
/// with any of them, returns the fallback split (0, 1, 0).
inline SplitTest select_split(const FeatureMatrix& fm, const Mat& residuals, Rng& rng) {
  const auto n = fm.samples();
  require_dim(n >= 2, "split selection needs at least two samples");
  require_dim(residuals.rows() == n, "residual rows must match sample count");
  require_dim(residuals.cols() >= 1, "residuals must have at least one column");

  std::normal_distribution<double> normal(0.0, 1.0);
  bool any_variance = false;
  for (int attempt = 0; attempt < detail::kProjectionRedraws; ++attempt) {
    Vec dir(residuals.cols());
    for (auto& v : dir) v = normal(rng);
    const double norm = dir.norm();
    if (norm > 0.0) dir /= norm;
    Vec y = residuals * dir;
    y.array() -= y.mean();
    const double var_y = y.squaredNorm() / static_cast<double>(n);
    const double scale = residuals.cwiseAbs().maxCoeff();
    if (!(var_y > 1e-24 * std::max(1.0, scale * scale))) continue;
    any_variance = true;
    const Vec cov_xy = fm.centered().transpose() * y / static_cast<double>(n);
    const auto [i, j] = detail::best_pair(fm, cov_xy, var_y);
    if (i < 0) continue;
    const double c = (fm.values().col(i) - fm.values().col(j)).cwiseAbs().maxCoeff();
    std::uniform_real_distribution<double> uniform(-c, c);
    return {i, j, c > 0.0 ? uniform(rng) : 0.0};
  }
  if (!any_variance)
    fail(ErrorKind::kDegenerateTarget,
         "projected regression targets have zero variance");
  return {0, 1, 0.0};
}

/// Leaf index of every training sample under the given tests.
inline std::vector<int> leaf_indices(const std::vector<SplitTest>& tests,
                                     const FeatureMatrix& fm) {
  const auto n = fm.samples();
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  const Mat& x = fm.values();
  for (std::size_t b = 0; b < tests.size(); ++b) {
    const auto& t = tests[b];
    const double* xi = x.col(t.i).data();
    const double* xj = x.col(t.j).data();
    for (Eigen::Index s = 0; s < n; ++s)
      if (xi[s] - xj[s] > t.threshold) idx[static_cast<std::size_t>(s)] |= 1 << b;
  }
  return idx;
}

/// Shrunk leaf means: column b = sum_b / (n_b + beta). Empty leaves are zero.
inline Mat fit_leaves(const std::vector<int>& leaf_of_sample, int leaf_count,
                      const Mat& residuals, double shrinkage) {
  if (!(shrinkage >= 0.0)) fail(ErrorKind::kConfig, "shrinkage must be non-negative");
  require_dim(static_cast<Eigen::Index>(leaf_of_sample.size()) == residuals.rows(),
              "leaf assignment length must match residual rows");
  Mat sums = Mat::Zero(residuals.cols(), leaf_count);
  std::vector<double> counts(static_cast<std::size_t>(leaf_count), 0.0);
  for (int leaf : leaf_of_sample) counts[static_cast<std::size_t>(leaf)] += 1.0;
  for (Eigen::Index d = 0; d < residuals.cols(); ++d) {
    const double* r = residuals.col(d).data();
    for (std::size_t s = 0; s < leaf_of_sample.size(); ++s)
      sums(d, leaf_of_sample[s]) += r[s];
  }
  for (int b = 0; b < leaf_count; ++b) {
    const double nb = counts[static_cast<std::size_t>(b)];
    if (nb > 0.0) sums.col(b) /= (nb + shrinkage);
  }
  return sums;
}

inline Mat fit_leaves(const std::vector<SplitTest>& tests, const FeatureMatrix& fm,
                      const Mat& residuals, double shrinkage) {
  return fit_leaves(leaf_indices(tests, fm), 1 << tests.size(), residuals, shrinkage);
}

/// Sequential boosting: each fern fits the residual left by its predecessors.
/// Degenerate targets are an error for the first fern unless
/// `params.strict_first` is false; otherwise a level whose
/// projected residual collapses gets the fallback split (0, 1, 0) so long runs
/// survive exhausted residuals. If `sse_trace` is given it
/// receives the training SSE before the first fern and after each fern.
inline BoostedFerns train_boosted(const FeatureMatrix& fm, const Mat& targets,
                                  const FernParams& params, Rng& rng,
                                  std::vector<double>* sse_trace = nullptr) {
  if (params.ferns < 1) fail(ErrorKind::kConfig, "fern count must be at least 1");
  if (params.depth < 1 || params.depth > 16)
    fail(ErrorKind::kConfig, "fern depth must lie in [1, 16]");
  require_dim(fm.samples() >= 2, "boosted ferns need at least two samples");
  require_dim(targets.rows() == fm.samples(), "target rows must match sample count");

  Mat residual = targets;
  if (sse_trace) sse_trace->assign(1, residual.squaredNorm());
  std::vector<Fern> ferns;
  ferns.reserve(static_cast<std::size_t>(params.ferns));
  for (int k = 0; k < params.ferns; ++k) {
    std::vector<SplitTest> tests;
    tests.reserve(static_cast<std::size_t>(params.depth));
    for (int level = 0; level < params.depth; ++level) {
      try {
        tests.push_back(select_split(fm, residual, rng));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegenerateTarget || (k == 0 && params.strict_first)) throw;
        tests.push_back({0, 1, 0.0});
      }
    }
    const std::vector<int> idx = leaf_indices(tests, fm);
    Mat leaves = fit_leaves(idx, 1 << params.depth, residual, params.shrinkage);
    for (Eigen::Index d = 0; d < residual.cols(); ++d) {
      double* r = residual.col(d).data();
      for (std::size_t s = 0; s < idx.size(); ++s) r[s] -= leaves(d, idx[s]);
    }
    if (sse_trace) sse_trace->push_back(residual.squaredNorm());
    ferns.emplace_back(std::move(tests), std::move(leaves), fm.pixels());
  }
  return BoostedFerns(std::move(ferns));
}

}  // namespace gombf
