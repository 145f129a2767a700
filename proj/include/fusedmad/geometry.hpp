#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fusedmad {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Twice the signed area of (a, b, c); positive when counter-clockwise in a y-up frame.
inline double orient(const Point& a, const Point& b, const Point& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

inline double triangle_area(const Point& a, const Point& b, const Point& c) { return 0.5 * std::abs(orient(a, b, c)); }

/// Positive when d lies strictly inside the circumcircle of the counter-clockwise triangle (a, b, c).
inline long double incircle(const Point& a, const Point& b, const Point& c, const Point& d) {
  const long double adx = static_cast<long double>(a.x) - d.x, ady = static_cast<long double>(a.y) - d.y;
  const long double bdx = static_cast<long double>(b.x) - d.x, bdy = static_cast<long double>(b.y) - d.y;
  const long double cdx = static_cast<long double>(c.x) - d.x, cdy = static_cast<long double>(c.y) - d.y;
  const long double ad = adx * adx + ady * ady;
  const long double bd = bdx * bdx + bdy * bdy;
  const long double cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx);
}

/// Row-major 2x3 affine map: (x, y) -> (m[0]x + m[1]y + m[2], m[3]x + m[4]y + m[5]).
struct Affine {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};

  Point apply(const Point& p) const { return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]}; }
  friend bool operator==(const Affine&, const Affine&) = default;
};

inline constexpr double kMinTriangleArea = 1e-9;

/// Exact affine map taking each src vertex to the matching dst vertex.
inline Affine affine_from_triangles(const std::array<Point, 3>& src, const std::array<Point, 3>& dst) {
  if (triangle_area(src[0], src[1], src[2]) <= kMinTriangleArea) throw GeometryError("degenerate source triangle");
  if (triangle_area(dst[0], dst[1], dst[2]) <= kMinTriangleArea) {
    throw GeometryError("degenerate destination triangle");
  }
  // Solve [x y 1] * coeffs = target for each output coordinate by Cramer's rule.
  const double det = orient(src[0], src[1], src[2]);
  auto solve = [&](double t0, double t1, double t2) {
    const double a = (t0 * (src[1].y - src[2].y) + t1 * (src[2].y - src[0].y) + t2 * (src[0].y - src[1].y)) / det;
    const double b = (t0 * (src[2].x - src[1].x) + t1 * (src[0].x - src[2].x) + t2 * (src[1].x - src[0].x)) / det;
    const double c = (t0 * (src[1].x * src[2].y - src[2].x * src[1].y) + t1 * (src[2].x * src[0].y - src[0].x * src[2].y) +
                      t2 * (src[0].x * src[1].y - src[1].x * src[0].y)) /
                     det;
    return std::array<double, 3>{a, b, c};
  };
  const auto rx = solve(dst[0].x, dst[1].x, dst[2].x);
  const auto ry = solve(dst[0].y, dst[1].y, dst[2].y);
  return Affine{{rx[0], rx[1], rx[2], ry[0], ry[1], ry[2]}};
}

using Triangle = std::array<int, 3>;

struct TriangleMesh {
  std::vector<Point> vertices;
  std::vector<Triangle> triangles;  // counter-clockwise (orient > 0)
  std::vector<std::string> warnings;
};

namespace detail {

inline Triangle ccw(const std::vector<Point>& pts, int a, int b, int c) {
  return orient(pts[a], pts[b], pts[c]) > 0 ? Triangle{a, b, c} : Triangle{a, c, b};
}

inline std::pair<int, int> edge_key(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

// Among exactly cocircular convex quads, keep the diagonal whose (min, max)
// index pair is lexicographically smallest.
inline void canonicalize_cocircular(const std::vector<Point>& pts, std::vector<Triangle>& tris) {
  const std::size_t limit = 4 * tris.size() * tris.size() + 16;
  for (std::size_t pass = 0; pass < limit; ++pass) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> owners;
    for (std::size_t t = 0; t < tris.size(); ++t) {
      for (int e = 0; e < 3; ++e) owners[edge_key(tris[t][e], tris[t][(e + 1) % 3])].push_back(t);
    }
    bool flipped = false;
    for (const auto& [edge, ts] : owners) {
      if (ts.size() != 2) continue;
      const Triangle& t1 = tris[ts[0]];
      const Triangle& t2 = tris[ts[1]];
      auto opposite = [&](const Triangle& t) {
        for (int v : t) {
          if (v != edge.first && v != edge.second) return v;
        }
        return -1;
      };
      const int c = opposite(t1), d = opposite(t2);
      const Triangle abc = ccw(pts, edge.first, edge.second, c);
      if (incircle(pts[abc[0]], pts[abc[1]], pts[abc[2]], pts[d]) != 0.0L) continue;
      // The alternative diagonal (c, d) must give two proper triangles.
      if (!(orient(pts[c], pts[d], pts[edge.first]) != 0.0 && orient(pts[c], pts[d], pts[edge.second]) != 0.0 &&
            (orient(pts[c], pts[d], pts[edge.first]) > 0) != (orient(pts[c], pts[d], pts[edge.second]) > 0))) {
        continue;
      }
      if (edge_key(c, d) >= edge) continue;
      tris[ts[0]] = ccw(pts, c, d, edge.first);
      tris[ts[1]] = ccw(pts, c, d, edge.second);
      flipped = true;
      break;
    }
    if (!flipped) return;
  }
}

}  // namespace detail

/// Delaunay triangulation by incremental Bowyer-Watson insertion.
///
/// Triangles with area <= 1e-9 are dropped and reported in the mesh warnings.
/// Exactly cocircular configurations are resolved toward the lexicographically
/// smallest diagonal.
inline TriangleMesh triangulate(const std::vector<Point>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 3) throw GeometryError("triangulation needs at least 3 points");
  {
    bool collinear = true;
    for (int i = 2; i < n && collinear; ++i) {
      for (int j = 1; j < i && collinear; ++j) {
        if (triangle_area(points[0], points[j], points[i]) > kMinTriangleArea) collinear = false;
      }
    }
    if (collinear) throw GeometryError("triangulation input is collinear");
  }

  double minx = points[0].x, maxx = minx, miny = points[0].y, maxy = miny;
  for (const auto& p : points) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  const double span = std::max({maxx - minx, maxy - miny, 1.0});
  const double cx = 0.5 * (minx + maxx), cy = 0.5 * (miny + maxy);
  const double far = 1e5 * span;

  std::vector<Point> pts = points;
  pts.push_back({cx - far, cy - far});
  pts.push_back({cx + far, cy - far});
  pts.push_back({cx, cy + far});

  std::vector<Triangle> tris{detail::ccw(pts, n, n + 1, n + 2)};
  for (int p = 0; p < n; ++p) {
    std::vector<Triangle> keep;
    std::map<std::pair<int, int>, int> edge_count;
    std::vector<std::pair<int, int>> boundary_order;
    for (const auto& t : tris) {
      if (incircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p]) > 0.0L) {
        for (int e = 0; e < 3; ++e) {
          const auto key = detail::edge_key(t[e], t[(e + 1) % 3]);
          if (edge_count[key]++ == 0) boundary_order.push_back(key);
        }
      } else {
        keep.push_back(t);
      }
    }
    if (keep.size() == tris.size()) continue;  // duplicate point or on every circle
    for (const auto& e : boundary_order) {
      if (edge_count[e] != 1) continue;
      if (orient(pts[e.first], pts[e.second], pts[p]) == 0.0) continue;
      keep.push_back(detail::ccw(pts, e.first, e.second, p));
    }
    tris = std::move(keep);
  }

  TriangleMesh mesh;
  mesh.vertices = points;
  for (const auto& t : tris) {
    if (t[0] >= n || t[1] >= n || t[2] >= n) continue;
    const double area = triangle_area(points[t[0]], points[t[1]], points[t[2]]);
    if (area <= kMinTriangleArea) {
      mesh.warnings.push_back("dropped degenerate triangle (" + std::to_string(t[0]) + ", " + std::to_string(t[1]) +
                              ", " + std::to_string(t[2]) + ")");
      continue;
    }
    mesh.triangles.push_back(t);
  }
  detail::canonicalize_cocircular(points, mesh.triangles);
  for (auto& t : mesh.triangles) {
    std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
  }
  std::sort(mesh.triangles.begin(), mesh.triangles.end());
  return mesh;
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear points removed.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && orient(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && orient(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Inclusive point-in-convex-polygon test for a counter-clockwise hull.
inline bool inside_convex(const std::vector<Point>& hull, const Point& p, double tol = 1e-9) {
  if (hull.size() < 3) return false;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % hull.size()];
    if (orient(a, b, p) < -tol) return false;
  }
  return true;
}

}  // namespace fusedmad
