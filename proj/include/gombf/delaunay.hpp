#pragma once

// Incremental Bowyer-Watson Delaunay triangulation of a 2D point set, with
// ghost triangles on the hull in place of a bounding super-triangle.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "gombf/core.hpp"

namespace gombf {

using Triangle = std::array<int, 3>;

namespace detail {

inline double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

/// > 0 when d lies strictly inside the circumcircle of counter-clockwise abc.
inline double in_circle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad = adx * adx + ady * ady;
  const double bd = bdx * bdx + bdy * bdy;
  const double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

}  // namespace detail

/// Triangles are returned counter-clockwise (in a y-up frame) with indices
/// into `points`. Throws kDegenerateConfiguration for fewer than three
/// points, duplicates, or an all-collinear set.
inline std::vector<Triangle> delaunay_triangulate(const Points2& points) {
  const int n = static_cast<int>(points.cols());
  if (n < 3) fail(ErrorKind::kDegenerateConfiguration, "triangulation needs at least 3 points");

  const Vec2 lo = points.rowwise().minCoeff();
  const Vec2 hi = points.rowwise().maxCoeff();
  const double span = std::max((hi - lo).maxCoeff(), 1e-12);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if ((points.col(i) - points.col(j)).norm() <= 1e-12 * span)
        fail(ErrorKind::kDegenerateConfiguration, "duplicate landmark positions in triangulation");
  bool collinear = true;
  for (int k = 2; k < n && collinear; ++k)
    if (std::abs(detail::orient(points.col(0), points.col(1), points.col(k))) > 1e-9 * span * span)
      collinear = false;
  if (collinear) fail(ErrorKind::kDegenerateConfiguration, "landmarks are collinear");

  // Ghost triangles (a, b, -1) stand for the half-plane left of the hull
  // edge a -> b, i.e. outside the current triangulation.
  constexpr int kGhost = -1;
  auto p_of = [&](int i) -> Vec2 { return points.col(i); };
  int third = 2;
  while (std::abs(detail::orient(p_of(0), p_of(1), p_of(third))) <= 1e-9 * span * span) ++third;
  Triangle first{0, 1, third};
  if (detail::orient(p_of(0), p_of(1), p_of(third)) < 0) std::swap(first[1], first[2]);
  std::vector<Triangle> tris{first};
  for (int e = 0; e < 3; ++e) tris.push_back({first[(e + 1) % 3], first[e], kGhost});

  auto conflicts = [&](const Triangle& t, const Vec2& q) {
    if (t[2] != kGhost) return detail::in_circle(p_of(t[0]), p_of(t[1]), p_of(t[2]), q) > 0;
    const Vec2 a = p_of(t[0]), b = p_of(t[1]);
    const double o = detail::orient(a, b, q);
    if (o != 0.0) return o > 0;
    return (q - a).dot(b - a) > 0 && (q - b).dot(a - b) > 0;
  };
  // Rotate so a ghost vertex, if any, comes last.
  auto normalize = [&](Triangle t) {
    while (t[0] == kGhost || t[1] == kGhost) t = {t[1], t[2], t[0]};
    return t;
  };

  for (int p = 0; p < n; ++p) {
    if (p == first[0] || p == first[1] || p == first[2]) continue;
    const Vec2 q = p_of(p);
    std::vector<Triangle> keep;
    std::map<std::pair<int, int>, int> edge_count;
    std::vector<std::pair<int, int>> edges;
    for (const auto& t : tris) {
      if (conflicts(t, q)) {
        for (int e = 0; e < 3; ++e) {
          const int a = t[e], b = t[(e + 1) % 3];
          const auto key = std::minmax(a, b);
          if (edge_count[key]++ == 0) edges.emplace_back(a, b);
        }
      } else {
        keep.push_back(t);
      }
    }
    for (const auto& [a, b] : edges)
      if (edge_count[std::minmax(a, b)] == 1) keep.push_back(normalize({a, b, p}));
    tris = std::move(keep);
  }

  std::vector<Triangle> out;
  for (const auto& t : tris)
    if (t[2] != kGhost) out.push_back(t);
  std::sort(out.begin(), out.end());
  return out;
}

/// Barycentric coordinates of q in triangle (a, b, c); they sum to 1 and may
/// be negative outside the triangle.
inline Vec3 barycentric(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& q) {
  const double det = detail::orient(a, b, c);
  const double wa = detail::orient(q, b, c) / det;
  const double wb = detail::orient(a, q, c) / det;
  return {wa, wb, 1.0 - wa - wb};
}

}  // namespace gombf
