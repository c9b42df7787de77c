#pragma once

// Alpha-shape concave hulls, polygon rasterization and cohort probability maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "fetalreg/core.hpp"
#include "fetalreg/image.hpp"
#include "fetalreg/image_io.hpp"
#include "fetalreg/landmarks.hpp"

namespace fetalreg {

inline double signed_area(const PointSet2D& ring) {
  double s = 0.0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const auto& p = ring[i];
    const auto& q = ring[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * s;
}

namespace detail {

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool segments_intersect(const Point2& p1, const Point2& p2, const Point2& q1,
                               const Point2& q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 &&
         d4 != 0;
}

}  // namespace detail

/// Simple polygon with counter-clockwise (positive area, y-up sense) vertex
/// order; the ring is implicitly closed.
class Polygon2D {
 public:
  explicit Polygon2D(PointSet2D vertices) : vertices_(std::move(vertices)) {
    if (vertices_.size() < 3)
      throw Error(ErrorCode::DegenerateInput, "polygon needs at least 3 vertices");
    double area = signed_area(vertices_);
    if (area < 0.0) {
      std::reverse(vertices_.begin(), vertices_.end());
      area = -area;
    }
    if (!(area > 0.0)) throw Error(ErrorCode::DegenerateInput, "polygon has zero area");
    const std::size_t n = vertices_.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 2; j < n; ++j) {
        if (i == 0 && j == n - 1) continue;
        if (detail::segments_intersect(vertices_[i], vertices_[(i + 1) % n], vertices_[j],
                                       vertices_[(j + 1) % n]))
          throw Error(ErrorCode::DegenerateInput, "polygon is self-intersecting");
      }
  }

  const PointSet2D& vertices() const noexcept { return vertices_; }
  double area() const { return signed_area(vertices_); }

 private:
  PointSet2D vertices_;
};

/// Even-odd containment; points on the boundary count as inside.
inline bool contains(const Polygon2D& poly, const Point2& p, double tol = 1e-9) {
  const auto& v = poly.vertices();
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point2& a = v[i];
    const Point2& b = v[(i + 1) % n];
    const double len = distance(a, b);
    if (std::abs(detail::cross(a, b, p)) <= tol * std::max(len, 1.0) &&
        p.x >= std::min(a.x, b.x) - tol && p.x <= std::max(a.x, b.x) + tol &&
        p.y >= std::min(a.y, b.y) - tol && p.y <= std::max(a.y, b.y) + tol)
      return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y) &&
        p.x < (v[j].x - v[i].x) * (p.y - v[i].y) / (v[j].y - v[i].y) + v[i].x)
      inside = !inside;
  }
  return inside;
}

inline PointSet2D unique_points(const PointSet2D& pts) {
  PointSet2D out = pts;
  std::sort(out.begin(), out.end(),
            [](const Point2& a, const Point2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Andrew's monotone chain; drops collinear boundary points.
inline PointSet2D convex_hull_ring(const PointSet2D& pts) {
  PointSet2D p = unique_points(pts);
  if (p.size() < 3) return p;
  PointSet2D hull(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && detail::cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
    hull[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && detail::cross(hull[k - 2], hull[k - 1], p[i - 1]) <= 0) --k;
    hull[k++] = p[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

struct Triangle {
  std::array<std::size_t, 3> v;  // counter-clockwise indices into the point list
  double circumradius = 0.0;
};

namespace detail {

struct Circle {
  double cx, cy, r2;
};

inline Circle circumcircle(const Point2& a, const Point2& b, const Point2& c) {
  const double d = 2.0 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
  const double a2 = a.x * a.x + a.y * a.y;
  const double b2 = b.x * b.x + b.y * b.y;
  const double c2 = c.x * c.x + c.y * c.y;
  const double ux = (a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d;
  const double uy = (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d;
  return {ux, uy, (a.x - ux) * (a.x - ux) + (a.y - uy) * (a.y - uy)};
}

inline double circumradius(const Point2& a, const Point2& b, const Point2& c) {
  const double ab = distance(a, b);
  const double bc = distance(b, c);
  const double ca = distance(c, a);
  const double area2 = std::abs(cross(a, b, c));
  return ab * bc * ca / (2.0 * area2);
}

}  // namespace detail

/// Bowyer-Watson Delaunay triangulation. Points must be unique.
inline std::vector<Triangle> delaunay(const PointSet2D& pts) {
  const std::size_t n = pts.size();
  if (n < 3) return {};
  double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
  for (const auto& p : pts) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  const double span = std::max({maxx - minx, maxy - miny, 1.0});
  const double cx = 0.5 * (minx + maxx);
  const double cy = 0.5 * (miny + maxy);
  PointSet2D all = pts;
  all.push_back({cx - 1e4 * span, cy - 1e4 * span});
  all.push_back({cx + 1e4 * span, cy - 1e4 * span});
  all.push_back({cx, cy + 1e4 * span});

  struct Work {
    std::array<std::size_t, 3> v;
    detail::Circle circle;
  };
  auto make = [&](std::size_t a, std::size_t b, std::size_t c) {
    if (detail::cross(all[a], all[b], all[c]) < 0) std::swap(b, c);
    return Work{{a, b, c}, detail::circumcircle(all[a], all[b], all[c])};
  };
  std::vector<Work> tris{make(n, n + 1, n + 2)};

  for (std::size_t i = 0; i < n; ++i) {
    const Point2& p = all[i];
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    std::vector<Work> keep;
    keep.reserve(tris.size());
    for (const auto& t : tris) {
      const double dx = p.x - t.circle.cx;
      const double dy = p.y - t.circle.cy;
      if (dx * dx + dy * dy < t.circle.r2) {
        for (int e = 0; e < 3; ++e) edges.emplace_back(t.v[e], t.v[(e + 1) % 3]);
      } else {
        keep.push_back(t);
      }
    }
    // Cavity boundary: edges whose reverse was not also removed.
    for (const auto& [a, b] : edges) {
      const bool shared = std::any_of(edges.begin(), edges.end(), [&](const auto& o) {
        return o.first == b && o.second == a;
      });
      if (!shared && detail::cross(all[a], all[b], p) != 0.0) keep.push_back(make(a, b, i));
    }
    tris = std::move(keep);
  }

  std::vector<Triangle> out;
  for (const auto& t : tris) {
    if (t.v[0] >= n || t.v[1] >= n || t.v[2] >= n) continue;
    out.push_back({t.v, detail::circumradius(pts[t.v[0]], pts[t.v[1]], pts[t.v[2]])});
  }
  return out;
}

namespace detail {

inline void require_hull_support(const PointSet2D& pts) {
  const PointSet2D u = unique_points(pts);
  if (u.size() < 3)
    throw Error(ErrorCode::DegenerateInput, "hull needs at least 3 distinct points");
  double span = 0.0;
  for (const auto& p : u) span = std::max(span, distance(p, u[0]));
  for (std::size_t i = 1; i < u.size(); ++i)
    for (std::size_t j = i + 1; j < u.size(); ++j)
      if (std::abs(cross(u[0], u[i], u[j])) > 1e-12 * span * span) return;
  throw Error(ErrorCode::DegenerateInput, "hull points are collinear");
}

/// Boundary ring of the union of triangles with circumradius <= cutoff, if
/// that union is one edge-connected piece whose boundary is a single simple
/// cycle touching every input point.
inline std::optional<PointSet2D> alpha_ring(const PointSet2D& pts, const std::vector<Triangle>& tris,
                                            double cutoff) {
  std::vector<const Triangle*> kept;
  for (const auto& t : tris)
    if (t.circumradius <= cutoff * (1.0 + 1e-12)) kept.push_back(&t);
  if (kept.empty()) return std::nullopt;

  std::vector<bool> used(pts.size(), false);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> edge_owner;
  for (std::size_t k = 0; k < kept.size(); ++k)
    for (int e = 0; e < 3; ++e) {
      const auto a = kept[k]->v[e];
      const auto b = kept[k]->v[(e + 1) % 3];
      edge_owner[{a, b}] = k;
      used[a] = true;
    }
  if (std::find(used.begin(), used.end(), false) != used.end()) return std::nullopt;

  // Edge connectivity of the kept triangles.
  std::vector<bool> seen(kept.size(), false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t reached = 1;
  while (!q.empty()) {
    const auto k = q.front();
    q.pop();
    for (int e = 0; e < 3; ++e) {
      auto it = edge_owner.find({kept[k]->v[(e + 1) % 3], kept[k]->v[e]});
      if (it != edge_owner.end() && !seen[it->second]) {
        seen[it->second] = true;
        ++reached;
        q.push(it->second);
      }
    }
  }
  if (reached != kept.size()) return std::nullopt;

  std::map<std::size_t, std::size_t> next;
  std::size_t boundary_edges = 0;
  for (const auto& [edge, owner] : edge_owner) {
    if (edge_owner.count({edge.second, edge.first})) continue;
    if (next.count(edge.first)) return std::nullopt;  // pinch vertex
    next[edge.first] = edge.second;
    ++boundary_edges;
  }
  if (boundary_edges < 3) return std::nullopt;
  PointSet2D ring;
  const std::size_t start = next.begin()->first;
  std::size_t cur = start;
  do {
    ring.push_back(pts[cur]);
    auto it = next.find(cur);
    if (it == next.end()) return std::nullopt;
    cur = it->second;
    if (ring.size() > boundary_edges) return std::nullopt;
  } while (cur != start);
  if (ring.size() != boundary_edges) return std::nullopt;  // holes or several pieces
  return ring;
}

}  // namespace detail

/// Alpha policy: std::nullopt selects alpha automatically; 0 is the convex
/// hull; otherwise triangles with circumradius > 1/alpha are discarded.
using AlphaPolicy = std::optional<double>;
inline constexpr std::nullopt_t kAutoAlpha = std::nullopt;

struct ConcaveHull {
  Polygon2D polygon;
  double alpha = 0.0;  // the alpha actually used
};

inline ConcaveHull concave_hull_with_alpha(const PointSet2D& pts, AlphaPolicy alpha) {
  detail::require_hull_support(pts);
  if (alpha && *alpha < 0.0) throw Error(ErrorCode::InvalidArgument, "alpha must be >= 0");
  if (alpha && *alpha == 0.0) return {Polygon2D(convex_hull_ring(pts)), 0.0};

  const PointSet2D u = unique_points(pts);
  const std::vector<Triangle> tris = delaunay(u);
  if (alpha) {
    auto ring = detail::alpha_ring(u, tris, 1.0 / *alpha);
    if (!ring)
      throw Error(ErrorCode::AlphaTooLarge,
                  "alpha " + format_double(*alpha) + " disconnects the shape or drops a point");
    return {Polygon2D(std::move(*ring)), *alpha};
  }

  std::vector<double> radii;
  for (const auto& t : tris) radii.push_back(t.circumradius);
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  if (radii.empty() || !detail::alpha_ring(u, tris, radii.back()))
    return {Polygon2D(convex_hull_ring(pts)), 0.0};

  // Smallest admissible circumradius cutoff = largest admissible alpha.
  std::ptrdiff_t lo = -1;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(radii.size()) - 1;
  for (int step = 0; step < 32 && hi - lo > 1; ++step) {
    const std::ptrdiff_t mid = lo + (hi - lo) / 2;
    if (detail::alpha_ring(u, tris, radii[static_cast<std::size_t>(mid)]))
      hi = mid;
    else
      lo = mid;
  }
  const double cutoff = radii[static_cast<std::size_t>(hi)];
  return {Polygon2D(*detail::alpha_ring(u, tris, cutoff)), 1.0 / cutoff};
}

inline Polygon2D concave_hull(const PointSet2D& pts, AlphaPolicy alpha = kAutoAlpha) {
  return concave_hull_with_alpha(pts, alpha).polygon;
}

/// Pixel (i, j) is set iff its center (i + 0.5, j + 0.5) is inside by the
/// even-odd rule.
inline BinaryMask rasterize(const Polygon2D& poly, int w, int h) {
  BinaryMask mask(w, h);
  const auto& v = poly.vertices();
  const std::size_t n = v.size();
  std::vector<double> xs;
  for (int j = 0; j < h; ++j) {
    const double y = j + 0.5;
    xs.clear();
    for (std::size_t k = 0; k < n; ++k) {
      const Point2& p = v[k];
      const Point2& q = v[(k + 1) % n];
      if ((p.y <= y) != (q.y <= y)) xs.push_back(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // centers c = i + 0.5 with xs[k] <= c < xs[k+1]
      const int first = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int last = std::min(w - 1, static_cast<int>(std::ceil(xs[k + 1] - 0.5)) - 1);
      for (int i = first; i <= last; ++i) mask.set(i, j, true);
    }
  }
  return mask;
}

/// Per-pixel occupancy frequency over a cohort; value = count / n_subjects.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(int width, int height, std::size_t n_subjects, std::vector<std::uint32_t> counts)
      : width_(width), height_(height), n_(n_subjects), counts_(std::move(counts)) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t n_subjects() const noexcept { return n_; }
  std::uint32_t count(int x, int y) const {
    return counts_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                   static_cast<std::size_t>(x)];
  }
  double at(int x, int y) const { return static_cast<double>(count(x, y)) / static_cast<double>(n_); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::size_t n_ = 0;
  std::vector<std::uint32_t> counts_;
};

inline ProbabilityMap average_masks(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw Error(ErrorCode::EmptyInput, "no masks to average");
  const int w = masks.front().width();
  const int h = masks.front().height();
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  for (const auto& m : masks) {
    if (m.width() != w || m.height() != h)
      throw Error(ErrorCode::DimensionMismatch, "masks differ in size");
    auto raw = m.raw();
    for (std::size_t i = 0; i < raw.size(); ++i) counts[i] += raw[i];
  }
  return ProbabilityMap(w, h, masks.size(), std::move(counts));
}

struct SkippedSubject {
  std::size_t index;
  std::string reason;
};

struct StructureMap {
  ProbabilityMap map;
  std::vector<SkippedSubject> skipped;
};

/// Hull each subject's landmarks for `structure`, rasterize, and average.
/// Subjects missing the structure or whose hull fails are skipped.
inline StructureMap build_structure_map(const std::vector<LandmarkSet>& cohort, Structure structure,
                                        int w, int h, AlphaPolicy alpha = kAutoAlpha) {
  if (!has_area(structure))
    throw Error(ErrorCode::UnsupportedStructure,
                std::string(structure_name(structure)) + " has only " +
                    std::to_string(expected_points(structure)) +
                    " landmarks; maps need more than 2");
  std::vector<BinaryMask> masks;
  std::vector<SkippedSubject> skipped;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!cohort[i].has(structure)) {
      skipped.push_back({i, "structure not annotated"});
      continue;
    }
    try {
      masks.push_back(rasterize(concave_hull(cohort[i].get(structure), alpha), w, h));
    } catch (const Error& e) {
      skipped.push_back({i, e.what()});
    }
  }
  if (masks.empty())
    throw Error(ErrorCode::EmptyInput,
                "no subject produced a hull for " + std::string(structure_name(structure)));
  return {average_masks(masks), std::move(skipped)};
}

/// 8-bit export, value = round(255 p).
inline GrayImage map_to_image(const ProbabilityMap& map) {
  GrayImage img(map.width(), map.height());
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) img.at(x, y) = std::round(255.0 * map.at(x, y));
  return img;
}

/// Full-precision grid: one CSV row per image row.
inline void write_map_csv(const std::filesystem::path& path, const ProbabilityMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (x) out << ',';
      out << format_double(map.at(x, y));
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

/// Heatmap (black-red-yellow-white ramp) blended over a grayscale background
/// with opacity proportional to the probability.
inline void write_heatmap_overlay(const std::filesystem::path& path, const ProbabilityMap& map,
                                  const GrayImage& background, double opacity = 0.7) {
  if (background.width() != map.width() || background.height() != map.height())
    throw Error(ErrorCode::DimensionMismatch, "overlay background size differs from the map");
  double lo = 0.0, hi = 0.0;
  if (!background.empty()) {
    auto [mn, mx] = std::minmax_element(background.data().begin(), background.data().end());
    lo = *mn;
    hi = *mx;
  }
  const double range = hi > lo ? hi - lo : 1.0;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(map.width()) * map.height() * 3);
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) {
      const double p = map.at(x, y);
      const double g = (background.at(x, y) - lo) / range * 255.0;
      const double r = std::clamp(3.0 * p, 0.0, 1.0) * 255.0;
      const double gr = std::clamp(3.0 * p - 1.0, 0.0, 1.0) * 255.0;
      const double b = std::clamp(3.0 * p - 2.0, 0.0, 1.0) * 255.0;
      const double a = p > 0.0 ? opacity * (0.3 + 0.7 * p) : 0.0;
      const std::size_t i = (static_cast<std::size_t>(y) * map.width() + x) * 3;
      rgb[i] = detail::to_byte((1 - a) * g + a * r);
      rgb[i + 1] = detail::to_byte((1 - a) * g + a * gr);
      rgb[i + 2] = detail::to_byte((1 - a) * g + a * b);
    }
  write_rgb_png(path, map.width(), map.height(), rgb);
}

}  // namespace fetalreg
