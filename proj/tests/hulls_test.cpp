#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "fetalreg/hulls.hpp"
#include "fetalreg/phantom.hpp"

using namespace fetalreg;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

// Brute-force even-odd test, independent of the library.
bool crossing_inside(const PointSet2D& v, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > y) != (v[j].y > y)) {
      const double xi = v[i].x + (y - v[i].y) * (v[j].x - v[i].x) / (v[j].y - v[i].y);
      if (x < xi) in = !in;
    }
  }
  return in;
}

double segment_distance(const Point2& a, const Point2& b, const Point2& p) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / (dx * dx + dy * dy), 0.0, 1.0);
  return distance(p, {a.x + t * dx, a.y + t * dy});
}

PointSet2D random_cloud(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(10, 90);
  PointSet2D pts;
  for (int i = 0; i < n; ++i) pts.push_back({u(rng), u(rng)});
  return pts;
}

}  // namespace

TEST(Polygon, Validation) {
  EXPECT_EQ(code_of([] { Polygon2D({{0, 0}, {1, 1}}); }), ErrorCode::DegenerateInput);
  EXPECT_EQ(code_of([] { Polygon2D({{0, 0}, {1, 1}, {2, 2}}); }), ErrorCode::DegenerateInput);
  EXPECT_EQ(code_of([] { Polygon2D({{0, 0}, {1, 1}, {1, 0}, {0, 1}}); }), ErrorCode::DegenerateInput);
  const Polygon2D cw({{0, 0}, {0, 1}, {1, 1}, {1, 0}});
  EXPECT_DOUBLE_EQ(cw.area(), 1.0);
}

TEST(ConcaveHull, SquareConvex) {
  const PointSet2D sq = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  EXPECT_DOUBLE_EQ(concave_hull(sq, 0.0).area(), 1.0);
  PointSet2D with_center = sq;
  with_center.push_back({0.5, 0.5});
  const Polygon2D h = concave_hull(with_center, 0.0);
  EXPECT_DOUBLE_EQ(h.area(), 1.0);
  EXPECT_EQ(h.vertices().size(), 4u);
}

TEST(ConcaveHull, Degenerate) {
  EXPECT_EQ(code_of([] { concave_hull({{0, 0}, {1, 1}, {2, 2}}); }), ErrorCode::DegenerateInput);
  EXPECT_EQ(code_of([] { concave_hull({{0, 0}, {1, 1}}); }), ErrorCode::DegenerateInput);
}

TEST(ConcaveHull, AutoCoversEveryPoint) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const PointSet2D pts = random_cloud(rng, 3 + trial % 12);
    const ConcaveHull h = concave_hull_with_alpha(pts, kAutoAlpha);
    for (const auto& p : pts) EXPECT_TRUE(contains(h.polygon, p, 1e-7));
    EXPECT_LE(h.polygon.area(), concave_hull(pts, 0.0).area() + 1e-9);
  }
}

TEST(ConcaveHull, ConvexContainsAll) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const PointSet2D pts = random_cloud(rng, 3 + trial % 20);
    const Polygon2D h = concave_hull(pts, 0.0);
    for (const auto& p : pts) EXPECT_TRUE(contains(h, p, 1e-9));
  }
}

TEST(ConcaveHull, AreaNonIncreasingInAlpha) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const PointSet2D pts = random_cloud(rng, 12);
    const double best = concave_hull_with_alpha(pts, kAutoAlpha).alpha;
    double prev = concave_hull(pts, 0.0).area();
    for (int k = 1; k <= 8; ++k) {
      const double alpha = best * k / 8.0;
      try {
        const double area = concave_hull(pts, alpha).area();
        EXPECT_LE(area, prev + 1e-9);
        prev = area;
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::AlphaTooLarge);
      }
    }
  }
}

TEST(ConcaveHull, CShapeIsConcave) {
  PointSet2D pts;
  for (int y = 0; y <= 10; ++y)
    for (int x = 0; x <= 10; ++x)
      if (y <= 2 || y >= 8 || x <= 2) pts.push_back({x + 0.01 * ((x * 7 + y * 3) % 5), y + 0.01 * ((x * 3 + y) % 4)});
  const Polygon2D h = concave_hull(pts);
  EXPECT_LT(h.area(), 60.0);
  EXPECT_FALSE(contains(h, {8, 5}));
  for (const auto& p : pts) EXPECT_TRUE(contains(h, p, 1e-7));
}

TEST(ConcaveHull, FixedAlphaTooLarge) {
  const PointSet2D pts = {{0, 0}, {10, 0}, {10, 10}, {0, 10}, {5, 5}};
  EXPECT_EQ(code_of([&] { concave_hull(pts, 10.0); }), ErrorCode::AlphaTooLarge);
}

TEST(Rasterize, RectangleCount) {
  const BinaryMask m = rasterize(Polygon2D({{10, 10}, {20, 10}, {20, 20}, {10, 20}}), 100, 100);
  EXPECT_EQ(m.count(), 100u);
  EXPECT_TRUE(m.at(10, 10));
  EXPECT_TRUE(m.at(19, 19));
  EXPECT_FALSE(m.at(20, 20));
}

TEST(Rasterize, OutsideFrame) {
  EXPECT_EQ(rasterize(Polygon2D({{200, 200}, {300, 200}, {250, 300}}), 100, 100).count(), 0u);
}

TEST(Rasterize, TriangleArea) {
  const BinaryMask m = rasterize(Polygon2D({{0, 0}, {100, 0}, {0, 100}}), 100, 100);
  EXPECT_NEAR(static_cast<double>(m.count()), 5000.0, 0.015 * 5000.0);
}

TEST(Rasterize, MatchesPixelCenterOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Polygon2D poly = concave_hull(random_cloud(rng, 10));
    const BinaryMask m = rasterize(poly, 100, 100);
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        // Centers exactly on an edge are ambiguous; skip them.
        bool on_edge = false;
        const auto& v = poly.vertices();
        for (std::size_t i = 0; i < v.size(); ++i)
          on_edge = on_edge || segment_distance(v[i], v[(i + 1) % v.size()], {cx, cy}) < 1e-9;
        if (on_edge) continue;
        EXPECT_EQ(m.at(x, y), crossing_inside(v, cx, cy)) << x << "," << y;
      }
  }
}

TEST(Rasterize, PixelCountApproachesArea) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    PointSet2D pts;
    std::uniform_real_distribution<double> u(20, 280);
    for (int i = 0; i < 12; ++i) pts.push_back({u(rng), u(rng)});
    const Polygon2D poly = concave_hull(pts);
    if (poly.area() < 1000) continue;
    EXPECT_NEAR(static_cast<double>(rasterize(poly, 300, 300).count()), poly.area(), 0.02 * poly.area());
  }
}

TEST(AverageMasks, Examples) {
  BinaryMask a(4, 4), b(4, 4);
  a.set(0, 0, true);
  b.set(3, 3, true);
  const ProbabilityMap one = average_masks({a});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_EQ(one.at(x, y), a.at(x, y) ? 1.0 : 0.0);
  const ProbabilityMap two = average_masks({a, b});
  EXPECT_EQ(two.at(0, 0), 0.5);
  EXPECT_EQ(two.at(3, 3), 0.5);
  EXPECT_EQ(two.at(1, 1), 0.0);
  const ProbabilityMap same = average_masks({a, a, a});
  EXPECT_EQ(same.at(0, 0), 1.0);
  EXPECT_EQ(code_of([] { average_masks({}); }), ErrorCode::EmptyInput);
  EXPECT_EQ(code_of([&] { average_masks({a, BinaryMask(3, 4)}); }), ErrorCode::DimensionMismatch);
}

TEST(StructureMap, MidlineRejectedAndSingleSubject) {
  const Phantom ph = generate_phantom(PhantomSpec{});
  EXPECT_EQ(code_of([&] { build_structure_map({ph.landmarks}, Structure::Midline, 800, 540); }),
            ErrorCode::UnsupportedStructure);
  const StructureMap sm = build_structure_map({ph.landmarks}, Structure::Thalami, 800, 540);
  const BinaryMask hull = rasterize(concave_hull(ph.landmarks.get(Structure::Thalami)), 800, 540);
  for (int y = 0; y < 540; ++y)
    for (int x = 0; x < 800; ++x) ASSERT_EQ(sm.map.at(x, y), hull.at(x, y) ? 1.0 : 0.0);
}

TEST(StructureMap, ValuesAreMultiplesOfOneOverN) {
  std::vector<LandmarkSet> sets;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 7; ++i) {
    LandmarkSet lm;
    PointSet2D cav = {{40, 40}, {60, 40}, {60, 55}, {40, 55}};
    for (auto& p : cav) p = {p.x + u(rng), p.y + u(rng)};
    lm.set(Structure::Cavum, cav);
    sets.push_back(lm);
  }
  LandmarkSet missing;
  sets.push_back(missing);
  const StructureMap sm = build_structure_map(sets, Structure::Cavum, 100, 100);
  EXPECT_EQ(sm.map.n_subjects(), 7u);
  ASSERT_EQ(sm.skipped.size(), 1u);
  EXPECT_EQ(sm.skipped[0].index, 7u);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) {
      const double k = sm.map.at(x, y) * 7.0;
      EXPECT_EQ(k, std::round(k));
      EXPECT_EQ(sm.map.at(x, y), static_cast<double>(sm.map.count(x, y)) / 7.0);
    }
}

TEST(MapExport, ImageAndCsv) {
  BinaryMask a(3, 2), b(3, 2);
  a.set(0, 0, true);
  a.set(1, 0, true);
  b.set(0, 0, true);
  b.set(2, 1, true);
  const ProbabilityMap map = average_masks({a, b, BinaryMask(3, 2)});
  const GrayImage img = map_to_image(map);
  EXPECT_EQ(img.at(0, 0), 170.0);
  EXPECT_EQ(img.at(1, 0), 85.0);
  const auto path = std::filesystem::temp_directory_path() / "fetalreg_map.csv";
  write_map_csv(path, map);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "0.6666666666666666,0.3333333333333333,0\n0,0,0.3333333333333333\n");
}
