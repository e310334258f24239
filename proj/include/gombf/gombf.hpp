#pragma once

// Globally-optimized modular boosted ferns.
//
// Each modality group trains its own boosted ferns on its slice of the target.
// The group leaf matrices are block-embedded into one leaf matrix W_P over
// all leaves, which global_optimize then refits jointly by ridge regression
// on the full target.

#include <algorithm>
#include <cstdint>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "gombf/core.hpp"
#include "gombf/ferns.hpp"

namespace gombf {

struct ModalityGroup {
  std::string name;
  int offset = 0;
  int width = 0;
  int ferns = 0;

  bool operator==(const ModalityGroup&) const = default;
};

class ModalityLayout {
 public:
  ModalityLayout() = default;
  explicit ModalityLayout(std::vector<ModalityGroup> groups) : groups_(std::move(groups)) {
    if (groups_.empty()) fail(ErrorKind::kConfig, "modality layout has no groups");
    int next = 0;
    for (const auto& g : groups_) {
      if (g.offset != next || g.width < 1)
        fail(ErrorKind::kConfig, "modality group '" + g.name +
                                     "' does not continue the tiling at offset " +
                                     std::to_string(next));
      if (g.ferns < 1)
        fail(ErrorKind::kConfig, "modality group '" + g.name + "' needs at least one fern");
      next += g.width;
    }
    dim_ = next;
  }

  /// Builds a layout from (name, width, ferns) triples laid out in order.
  static ModalityLayout from_widths(
      const std::vector<std::tuple<std::string, int, int>>& spec) {
    std::vector<ModalityGroup> groups;
    int offset = 0;
    for (const auto& [name, width, ferns] : spec) {
      groups.push_back({name, offset, width, ferns});
      offset += width;
    }
    return ModalityLayout(std::move(groups));
  }

  /// Expression / rotation / translation / displacement groups.
  static ModalityLayout motion(int m_exp, int n_landmarks, int ferns_per_group) {
    return from_widths({{"expression", m_exp, ferns_per_group},
                        {"rotation", 3, ferns_per_group},
                        {"translation", 3, ferns_per_group},
                        {"displacement", 2 * n_landmarks, ferns_per_group}});
  }

  static ModalityLayout single(int dim, int ferns) {
    return from_widths({{"all", dim, ferns}});
  }

  const std::vector<ModalityGroup>& groups() const { return groups_; }
  int dim() const { return dim_; }
  int total_ferns() const {
    int k = 0;
    for (const auto& g : groups_) k += g.ferns;
    return k;
  }
  bool operator==(const ModalityLayout&) const = default;

 private:
  std::vector<ModalityGroup> groups_;
  int dim_ = 0;
};

/// Sparse 0/1 indicator over all leaves: one active column per fern.
struct SparseIndicator {
  int size = 0;
  std::vector<int> ones;

  Vec dense() const {
    Vec v = Vec::Zero(size);
    for (int i : ones) v[i] = 1.0;
    return v;
  }
};

class GoMBFModel {
 public:
  GoMBFModel() = default;
  GoMBFModel(ModalityLayout layout, std::vector<BoostedFerns> groups, Mat leaves, bool fused)
      : layout_(std::move(layout)), groups_(std::move(groups)), leaves_(std::move(leaves)),
        fused_(fused) {
    require_dim(groups_.size() == layout_.groups().size(),
                "one boosted ferns model per modality group required");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      require_dim(groups_[g].size() == layout_.groups()[g].ferns,
                  "group '" + layout_.groups()[g].name + "' fern count mismatch");
      require_dim(groups_[g].depth() == groups_.front().depth() &&
                      groups_[g].appearance_length() == groups_.front().appearance_length(),
                  "all groups must share fern depth and appearance length");
    }
    require_dim(leaves_.rows() == layout_.dim() && leaves_.cols() == column_count(),
                "fused leaf matrix must be (target dim) x (total leaves)");
  }

  const ModalityLayout& layout() const { return layout_; }
  const std::vector<BoostedFerns>& group_models() const { return groups_; }
  const Mat& fused_leaves() const { return leaves_; }
  bool is_fused() const { return fused_; }
  int depth() const { return groups_.empty() ? 0 : groups_.front().depth(); }
  int leaves_per_fern() const { return 1 << depth(); }
  int total_ferns() const { return layout_.total_ferns(); }
  int column_count() const { return total_ferns() * leaves_per_fern(); }
  int appearance_length() const {
    return groups_.empty() ? 0 : groups_.front().appearance_length();
  }

  /// Active leaf column of every fern, in group then fern order.
  void active_columns(const Eigen::Ref<const Vec>& x, std::vector<int>& out) const {
    require_dim(x.size() == appearance_length(),
                "appearance vector length " + std::to_string(x.size()) +
                    " != model input length " + std::to_string(appearance_length()));
    out.clear();
    const int leaves = leaves_per_fern();
    int base = 0;
    for (const auto& g : groups_)
      for (const auto& f : g.ferns()) {
        out.push_back(base + f.descend_unchecked(x));
        base += leaves;
      }
  }

  Vec predict(const Eigen::Ref<const Vec>& x) const {
    std::vector<int> cols;
    active_columns(x, cols);
    Vec y = Vec::Zero(leaves_.rows());
    for (int c : cols) y += leaves_.col(c);
    return y;
  }

  bool operator==(const GoMBFModel& o) const {
    return layout_ == o.layout_ && groups_ == o.groups_ && same_matrix(leaves_, o.leaves_) &&
           fused_ == o.fused_;
  }

 private:
  ModalityLayout layout_;
  std::vector<BoostedFerns> groups_;
  Mat leaves_;
  bool fused_ = false;
};

inline SparseIndicator assemble_indicator(const GoMBFModel& model,
                                          const Eigen::Ref<const Vec>& x) {
  SparseIndicator ind;
  ind.size = model.column_count();
  model.active_columns(x, ind.ones);
  return ind;
}

inline Vec predict_gombf(const GoMBFModel& model, const Eigen::Ref<const Vec>& x) {
  return model.predict(x);
}

/// Seed of group g under a master seed.
inline std::uint64_t group_seed(std::uint64_t master_seed, std::size_t group_ordinal) {
  return derive_seed(master_seed, 0x67726F7570ULL, group_ordinal);
}

/// Trains one boosted ferns per modality group on its target slice. Groups run
/// concurrently on up to `threads` workers; each group owns an RNG seeded from
/// (master_seed, group ordinal), so the result does not depend on scheduling.
/// A group whose targets are constant gets fallback-split ferns rather than
/// an error, so a stage can still learn a constant increment.
inline GoMBFModel train_modular(const FeatureMatrix& fm, const Mat& targets,
                                const ModalityLayout& layout, int depth, double shrinkage,
                                std::uint64_t master_seed, int threads = 1) {
  require_dim(targets.cols() == layout.dim(),
              "target width " + std::to_string(targets.cols()) +
                  " does not match layout dimension " + std::to_string(layout.dim()));
  const auto& groups = layout.groups();
  std::vector<BoostedFerns> models(groups.size());
  parallel_for(groups.size(), threads, [&](std::size_t g) {
    const auto& group = groups[g];
    Rng rng(group_seed(master_seed, g));
    try {
      const Mat slice = targets.middleCols(group.offset, group.width);
      models[g] = train_boosted(fm, slice, {group.ferns, depth, shrinkage, false}, rng);
    } catch (const Error& e) {
      rethrow_with_context(e, "modality group '" + group.name + "'");
    }
  });

  // Block embedding: group g's leaves occupy its rows, zero elsewhere.
  const int leaves = 1 << depth;
  Mat w = Mat::Zero(layout.dim(), static_cast<Eigen::Index>(layout.total_ferns()) * leaves);
  Eigen::Index col = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto& f : models[g].ferns()) {
      w.block(groups[g].offset, col, groups[g].width, leaves) = f.leaves();
      col += leaves;
    }
  }
  return GoMBFModel(layout, std::move(models), std::move(w), false);
}

/// Active global column of every training sample for every fern:
/// result[k][s] is fern k's column for sample s.
inline std::vector<std::vector<int>> training_columns(const GoMBFModel& model,
                                                      const FeatureMatrix& fm) {
  std::vector<std::vector<int>> cols;
  const int leaves = model.leaves_per_fern();
  int base = 0;
  for (const auto& g : model.group_models())
    for (const auto& f : g.ferns()) {
      auto idx = leaf_indices(f.tests(), fm);
      for (int& i : idx) i += base;
      cols.push_back(std::move(idx));
      base += leaves;
    }
  return cols;
}

/// sum_s ||W phi(x_s) - target_s||^2 + lambda ||W||_F^2.
inline double regularized_objective(const Mat& w,
                                    const std::vector<std::vector<int>>& columns,
                                    const Mat& targets, double lambda) {
  Mat residual = -targets;
  for (const auto& fern_cols : columns)
    for (std::size_t s = 0; s < fern_cols.size(); ++s)
      residual.row(static_cast<Eigen::Index>(s)) += w.col(fern_cols[s]).transpose();
  return residual.squaredNorm() + lambda * w.squaredNorm();
}

/// Replaces W_P with the ridge minimiser of the regularized objective.
///
/// Normal equations (Phi^T Phi + lambda I) W^T = Phi^T Y are accumulated in the
/// leaf domain and solved by Cholesky. Leaves no training sample visits have
/// a zero row in Phi, so for lambda > 0 their solution is exactly zero and
/// they are dropped from the factorisation. The Gram matrix holds integer
/// counts, so its accumulation order cannot change the result.
inline GoMBFModel global_optimize(const GoMBFModel& model, const FeatureMatrix& fm,
                                  const Mat& targets, double lambda, int threads = 1) {
  if (!(lambda >= 0.0)) fail(ErrorKind::kConfig, "ridge lambda must be non-negative");
  require_dim(fm.samples() >= 1, "global optimisation needs at least one sample");
  require_dim(targets.rows() == fm.samples() && targets.cols() == model.layout().dim(),
              "targets must be (samples) x (layout dimension)");

  const auto columns = training_columns(model, fm);
  const int total = model.column_count();
  const auto n = static_cast<std::size_t>(fm.samples());
  const auto nferns = columns.size();

  // Visited columns and their compact index.
  std::vector<int> compact(static_cast<std::size_t>(total), -1);
  {
    std::vector<char> seen(static_cast<std::size_t>(total), 0);
    for (const auto& fc : columns)
      for (int c : fc) seen[static_cast<std::size_t>(c)] = 1;
    if (lambda == 0.0) {
      for (int c = 0; c < total; ++c)
        if (!seen[static_cast<std::size_t>(c)])
          fail(ErrorKind::kSingularSystem,
               "ridge system is singular (leaf column " + std::to_string(c) +
                   " is never visited); use lambda > 0");
    }
    int next = 0;
    for (int c = 0; c < total; ++c)
      if (seen[static_cast<std::size_t>(c)]) compact[static_cast<std::size_t>(c)] = next++;
  }
  const int active = *std::max_element(compact.begin(), compact.end()) + 1;

  // Gram matrix, upper triangle accumulated per fern pair (a <= b).
  Mat gram = Mat::Zero(active, active);
  parallel_for(nferns, threads, [&](std::size_t a) {
    const auto& ca = columns[a];
    for (std::size_t b = a; b < nferns; ++b) {
      const auto& cb = columns[b];
      for (std::size_t s = 0; s < n; ++s) {
        // Fern a's columns precede fern b's, so (i, j) lies in the upper
        // triangle and in the rows owned by this task.
        gram(compact[static_cast<std::size_t>(ca[s])],
             compact[static_cast<std::size_t>(cb[s])]) += 1.0;
      }
    }
  });
  gram.diagonal().array() += lambda;

  // Right-hand side Phi^T Y, one output dimension per task.
  Mat rhs = Mat::Zero(active, targets.cols());
  parallel_for(static_cast<std::size_t>(targets.cols()), threads, [&](std::size_t d) {
    const double* y = targets.col(static_cast<Eigen::Index>(d)).data();
    double* out = rhs.col(static_cast<Eigen::Index>(d)).data();
    for (const auto& fc : columns)
      for (std::size_t s = 0; s < n; ++s) out[compact[static_cast<std::size_t>(fc[s])]] += y[s];
  });

  Eigen::LLT<Mat, Eigen::Upper> llt(gram);
  bool singular = llt.info() != Eigen::Success;
  if (!singular) {
    const Vec diag = llt.matrixLLT().diagonal();
    const double hi = diag.cwiseAbs().maxCoeff();
    const double lo = diag.cwiseAbs().minCoeff();
    singular = !(lo > 1e-7 * hi);
  }
  if (singular)
    fail(ErrorKind::kSingularSystem,
         "ridge normal equations are singular or numerically indefinite; use lambda > 0");
  const Mat solution = llt.solve(rhs);  // active x dim

  Mat w = Mat::Zero(model.layout().dim(), total);
  for (int c = 0; c < total; ++c) {
    const int k = compact[static_cast<std::size_t>(c)];
    if (k >= 0) w.col(c) = solution.row(k).transpose();
  }
  return GoMBFModel(model.layout(), model.group_models(), std::move(w), true);
}

}  // namespace gombf
