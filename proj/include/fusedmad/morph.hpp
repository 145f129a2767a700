#pragma once

// Landmark-driven face morphing: landmark averaging, piecewise-affine
// warping over a Delaunay mesh, alpha blending and background restoration.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fusedmad/geometry.hpp"
#include "fusedmad/image.hpp"
#include "fusedmad/rng.hpp"

namespace fusedmad {

class MorphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LandmarkSet {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }
  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

inline void validate_landmarks(const LandmarkSet& l, int width, int height) {
  if (l.size() < 3) throw MorphError("landmark set needs at least 3 points, got " + std::to_string(l.size()));
  for (std::size_t i = 0; i < l.size(); ++i) {
    const auto& p = l.points[i];
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1)) {
      throw MorphError("landmark " + std::to_string(i) + " (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                       ") lies outside the " + std::to_string(width) + "x" + std::to_string(height) + " frame");
    }
  }
}

/// Parses the landmark text format: first line K, then K lines "x y".
inline LandmarkSet parse_landmarks(std::istream& in, const std::string& what = "landmarks") {
  LandmarkSet l;
  long long k = -1;
  if (!(in >> k) || k < 0) throw MorphError(what + ": line 1 must hold the point count");
  l.points.reserve(static_cast<std::size_t>(k));
  for (long long i = 0; i < k; ++i) {
    Point p;
    if (!(in >> p.x >> p.y)) throw MorphError(what + ": line " + std::to_string(i + 2) + " must hold \"x y\"");
    l.points.push_back(p);
  }
  std::string extra;
  if (in >> extra) throw MorphError(what + ": unexpected content after " + std::to_string(k) + " points");
  return l;
}

inline LandmarkSet read_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MorphError("cannot open landmark file '" + path + "'");
  return parse_landmarks(in, path);
}

inline void write_landmarks(const std::string& path, const LandmarkSet& l) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MorphError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << l.size() << '\n';
  for (const auto& p : l.points) out << p.x << ' ' << p.y << '\n';
}

/// p_i = (1 - alpha) * a_i + alpha * b_i
inline LandmarkSet average_landmarks(const LandmarkSet& a, const LandmarkSet& b, double alpha) {
  if (a.size() != b.size()) {
    throw MorphError("landmark count mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw MorphError("blending coefficient must lie in [0, 1]");
  LandmarkSet out;
  out.points.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.points[i] = {(1.0 - alpha) * a.points[i].x + alpha * b.points[i].x,
                     (1.0 - alpha) * a.points[i].y + alpha * b.points[i].y};
  }
  return out;
}

/// Four corners and four edge midpoints of a width x height frame.
inline std::vector<Point> boundary_anchors(int width, int height) {
  const double r = width - 1.0, b = height - 1.0;
  return {{0, 0}, {r, 0}, {r, b}, {0, b}, {r / 2, 0}, {r, b / 2}, {r / 2, b}, {0, b / 2}};
}

inline std::vector<Point> with_anchors(const LandmarkSet& l, int width, int height) {
  std::vector<Point> pts = l.points;
  const auto anchors = boundary_anchors(width, height);
  pts.insert(pts.end(), anchors.begin(), anchors.end());
  return pts;
}

struct WarpResult {
  Image image;
  std::vector<std::string> warnings;
};

/// Piecewise-affine warp moving content at src landmarks to dst landmarks.
///
/// The mesh is triangulated on dst (plus frame anchors, which stay fixed).
/// Each destination pixel is inverse-mapped through its triangle into the
/// source and sampled bilinearly. Triangles whose source and destination
/// vertices coincide copy pixels directly.
inline WarpResult warp_with_warnings(const Image& image, const LandmarkSet& src, const LandmarkSet& dst) {
  if (src.size() != dst.size()) {
    throw MorphError("landmark count mismatch: " + std::to_string(src.size()) + " vs " + std::to_string(dst.size()));
  }
  validate_landmarks(src, image.width, image.height);
  validate_landmarks(dst, image.width, image.height);
  const auto dst_pts = with_anchors(dst, image.width, image.height);
  const auto src_pts = with_anchors(src, image.width, image.height);

  TriangleMesh mesh;
  try {
    mesh = triangulate(dst_pts);
  } catch (const GeometryError& e) {
    throw MorphError(std::string("degenerate mesh: ") + e.what());
  }
  if (mesh.triangles.empty()) throw MorphError("degenerate mesh: no usable triangles");

  WarpResult result{image, mesh.warnings};
  Image& out = result.image;
  std::vector<std::uint8_t> claimed(static_cast<std::size_t>(image.width) * image.height, 0);

  for (const auto& tri : mesh.triangles) {
    const std::array<Point, 3> d{dst_pts[tri[0]], dst_pts[tri[1]], dst_pts[tri[2]]};
    const std::array<Point, 3> s{src_pts[tri[0]], src_pts[tri[1]], src_pts[tri[2]]};
    const bool identity = d == s;
    Affine back;
    if (!identity) {
      if (triangle_area(s[0], s[1], s[2]) > kMinTriangleArea) {
        back = affine_from_triangles(d, s);
      } else {
        // Collapsed source triangle: map through barycentric coordinates instead.
        const double det = orient(d[0], d[1], d[2]);
        const auto bary = [&](double t0, double t1, double t2) {
          const double a = (t0 * (d[1].y - d[2].y) + t1 * (d[2].y - d[0].y) + t2 * (d[0].y - d[1].y)) / det;
          const double b = (t0 * (d[2].x - d[1].x) + t1 * (d[0].x - d[2].x) + t2 * (d[1].x - d[0].x)) / det;
          const double c = (t0 * (d[1].x * d[2].y - d[2].x * d[1].y) + t1 * (d[2].x * d[0].y - d[0].x * d[2].y) +
                            t2 * (d[0].x * d[1].y - d[1].x * d[0].y)) /
                           det;
          return std::array<double, 3>{a, b, c};
        };
        const auto rx = bary(s[0].x, s[1].x, s[2].x);
        const auto ry = bary(s[0].y, s[1].y, s[2].y);
        back = Affine{{rx[0], rx[1], rx[2], ry[0], ry[1], ry[2]}};
      }
    }
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({d[0].x, d[1].x, d[2].x}))));
    const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(std::max({d[0].x, d[1].x, d[2].x}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({d[0].y, d[1].y, d[2].y}))));
    const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(std::max({d[0].y, d[1].y, d[2].y}))));
    const double area2 = orient(d[0], d[1], d[2]);
    const double tol = -1e-9 * std::abs(area2);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        auto& flag = claimed[static_cast<std::size_t>(y) * image.width + x];
        if (flag) continue;
        const Point p{static_cast<double>(x), static_cast<double>(y)};
        if (orient(d[0], d[1], p) < tol || orient(d[1], d[2], p) < tol || orient(d[2], d[0], p) < tol) continue;
        flag = 1;
        if (identity) continue;  // already a copy of the source
        const Point q = back.apply(p);
        for (int c = 0; c < image.channels; ++c) out.at(x, y, c) = sample_bilinear(image, q.x, q.y, c);
      }
    }
  }
  return result;
}

inline Image warp(const Image& image, const LandmarkSet& src, const LandmarkSet& dst) {
  return warp_with_warnings(image, src, dst).image;
}

enum class BackgroundSource { First, Second, Random };

struct MorphResult {
  Image image;
  LandmarkSet landmarks;
  BackgroundSource background = BackgroundSource::First;  // resolved, never Random
  std::vector<std::string> warnings;
};

/// Landmark morph: geometry and intensity blended with one coefficient.
/// Inside the convex hull of the blended landmarks the output is
/// (1 - alpha) * warp(a) + alpha * warp(b); outside it is copied from the
/// background source. BackgroundSource::Random draws the source from seed.
inline MorphResult morph_detailed(const Image& a, const LandmarkSet& la, const Image& b, const LandmarkSet& lb,
                                  double alpha, BackgroundSource background, std::uint64_t seed = 0) {
  if (!a.same_geometry(b)) {
    throw MorphError("image dimension mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) + "x" +
                     std::to_string(a.channels) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                     "x" + std::to_string(b.channels));
  }
  MorphResult result;
  result.landmarks = average_landmarks(la, lb, alpha);
  if (background == BackgroundSource::Random) {
    Rng rng(seed);
    background = rng.index(2) == 0 ? BackgroundSource::First : BackgroundSource::Second;
  }
  result.background = background;

  auto wa = warp_with_warnings(a, la, result.landmarks);
  auto wb = warp_with_warnings(b, lb, result.landmarks);
  result.warnings = std::move(wa.warnings);
  result.warnings.insert(result.warnings.end(), wb.warnings.begin(), wb.warnings.end());

  const Image& bg = background == BackgroundSource::First ? a : b;
  const auto hull = convex_hull(result.landmarks.points);
  result.image = bg;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (!inside_convex(hull, {static_cast<double>(x), static_cast<double>(y)})) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double v = (1.0 - alpha) * wa.image.at(x, y, c) + alpha * wb.image.at(x, y, c);
        result.image.at(x, y, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return result;
}

inline Image morph(const Image& a, const LandmarkSet& la, const Image& b, const LandmarkSet& lb, double alpha,
                   BackgroundSource background, std::uint64_t seed = 0) {
  return morph_detailed(a, la, b, lb, alpha, background, seed).image;
}

/// Blending coefficient used for generated morphs and selfmorphs.
inline constexpr double kDefaultMorphAlpha = 0.5;

/// Morph of two captures of one identity; the caller asserts the shared identity.
inline MorphResult selfmorph_detailed(const Image& a, const LandmarkSet& la, const Image& b, const LandmarkSet& lb,
                                      std::uint64_t seed) {
  return morph_detailed(a, la, b, lb, kDefaultMorphAlpha, BackgroundSource::Random, seed);
}

inline Image selfmorph(const Image& a, const LandmarkSet& la, const Image& b, const LandmarkSet& lb,
                       std::uint64_t seed) {
  return selfmorph_detailed(a, la, b, lb, seed).image;
}

}  // namespace fusedmad
