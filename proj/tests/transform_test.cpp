#include <gtest/gtest.h>

#include <random>

#include "fetalreg/phantom.hpp"
#include "fetalreg/transform.hpp"

using namespace fetalreg;

namespace {

Affine2D random_affine(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lin(-2.0, 2.0), tr(-100.0, 100.0);
  while (true) {
    const double a = lin(rng), b = lin(rng), c = lin(rng), d = lin(rng);
    if (std::abs(a * d - b * c) > 0.1) return Affine2D::from_rows(a, b, tr(rng), c, d, tr(rng));
  }
}

void expect_matrix_near(const Affine2D& f, const Affine2D& g, double tol) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(f(r, c), g(r, c), tol) << r << "," << c;
}

LandmarkSet orientation_landmarks(double cavum_x, double cerebellum_x) {
  LandmarkSet lm;
  lm.set(Structure::Cavum, {{cavum_x - 5, 100}, {cavum_x + 5, 100}, {cavum_x + 5, 110}, {cavum_x - 5, 110}});
  PointSet2D cb;
  for (int i = 0; i < 8; ++i)
    cb.push_back({cerebellum_x + 20 * std::cos(i * kPi / 4), 200 + 20 * std::sin(i * kPi / 4)});
  lm.set(Structure::Cerebellum, cb);
  lm.set(Structure::Midline, {{10, 20}, {30, 40}});
  return lm;
}

}  // namespace

TEST(Affine, RejectsBadMatrices) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = 1.0;
  EXPECT_THROW(Affine2D{m}, Error);
  try {
    Affine2D::from_rows(1, 2, 0, 0, 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Singular);
  }
}

TEST(Compose, Examples) {
  std::mt19937_64 rng(1);
  const Affine2D g = random_affine(rng);
  expect_matrix_near(compose(Affine2D::identity(), g), g, 0.0);
  expect_matrix_near(compose(Affine2D::translation(1, 2), Affine2D::translation(3, 4)),
                     Affine2D::translation(4, 6), 0.0);
  expect_matrix_near(compose(g, invert(g)), Affine2D::identity(), 1e-10);
}

TEST(Compose, Associative) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Affine2D f = random_affine(rng), g = random_affine(rng), h = random_affine(rng);
    const Affine2D l = compose(compose(f, g), h), r = compose(f, compose(g, h));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(l(a, b), r(a, b), 1e-12 * std::max(1.0, std::abs(l(a, b))));
  }
}

TEST(Compose, ActsAsFunctionComposition) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-500.0, 500.0);
  for (int i = 0; i < 100; ++i) {
    const Affine2D f = random_affine(rng), g = random_affine(rng);
    PointSet2D pts = {{u(rng), u(rng)}, {u(rng), u(rng)}};
    const auto a = warp_points(compose(f, g), pts);
    const auto b = warp_points(f, warp_points(g, pts));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      EXPECT_NEAR(a[k].x, b[k].x, 1e-9);
      EXPECT_NEAR(a[k].y, b[k].y, 1e-9);
    }
  }
}

TEST(Invert, Examples) {
  expect_matrix_near(invert(Affine2D::translation(3, -1)), Affine2D::translation(-3, 1), 0.0);
  expect_matrix_near(invert(Affine2D::scaling(2, 2)), Affine2D::scaling(0.5, 0.5), 0.0);
}

TEST(WarpPoints, Examples) {
  const PointSet2D pts = {{1, 2}, {3, 4}};
  EXPECT_EQ(warp_points(Affine2D::identity(), pts), pts);
  EXPECT_EQ(warp_points(Affine2D::translation(10, 0), {{0, 0}}), (PointSet2D{{10, 0}}));
}

TEST(EllipseToCanonical, Examples) {
  const EllipseParams p{200, 135, 500, 300, 0};
  const Affine2D f = ellipse_to_canonical(p, 800, 540);
  Point2 q = f.apply({500, 300});
  EXPECT_NEAR(q.x, 400, 1e-12);
  EXPECT_NEAR(q.y, 270, 1e-12);
  q = f.apply({700, 300});
  EXPECT_NEAR(q.x, 800, 1e-12);
  EXPECT_NEAR(q.y, 270, 1e-12);
  expect_matrix_near(ellipse_to_canonical({400, 270, 400, 270, 0}, 800, 540), Affine2D::identity(), 1e-15);
}

TEST(EllipseToCanonical, AxisEndpointsAndLandmarks) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> axis(20, 300), pos(0, 800), ang(-3, 3);
  for (int i = 0; i < 200; ++i) {
    const EllipseParams p = make_ellipse(axis(rng), axis(rng), pos(rng), pos(rng), ang(rng));
    const Affine2D f = ellipse_to_canonical(p, 800, 540);
    const Point2 ends[4] = {ellipse_point(p, 0), ellipse_point(p, kPi), ellipse_point(p, kPi / 2),
                            ellipse_point(p, -kPi / 2)};
    const Point2 want[4] = {{800, 270}, {0, 270}, {400, 540}, {400, 0}};
    for (int k = 0; k < 4; ++k) {
      const Point2 q = f.apply(ends[k]);
      EXPECT_NEAR(q.x, want[k].x, 1e-9);
      EXPECT_NEAR(q.y, want[k].y, 1e-9);
    }
    const EllipseParams frame{400, 270, 400, 270, 0};
    for (const auto& q : warp_points(f, sample_boundary({p.a * 0.8, p.b * 0.5, p.x0, p.y0, p.theta}, 16)))
      EXPECT_LE(normalized_residual(frame, q), 1e-12);
  }
}

TEST(WarpImage, IdentityAndOutOfView) {
  GrayImage img(7, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) img.at(x, y) = x * 10 + y;
  EXPECT_EQ(warp_image(img, Affine2D::identity(), 7, 5), img);
  const GrayImage gone = warp_image(img, Affine2D::translation(7, 0), 7, 5);
  for (double v : gone.data()) EXPECT_EQ(v, 0.0);
}

TEST(WarpImage, IntegerTranslationIsExact) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 255);
  GrayImage img(40, 30);
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 40; ++x) img.at(x, y) = u(rng);
  const GrayImage out = warp_image(img, Affine2D::translation(3, -2), 40, 30);
  for (int y = 0; y < 28; ++y)
    for (int x = 3; x < 40; ++x) EXPECT_EQ(out.at(x, y), img.at(x - 3, y + 2));
}

TEST(WarpImage, BilinearMidpoint) {
  GrayImage img(2, 2, std::vector<double>{0, 10, 20, 30});
  double v = 0;
  ASSERT_TRUE(sample_bilinear(img, 0.5, 0.5, v));
  EXPECT_DOUBLE_EQ(v, 15.0);
  EXPECT_FALSE(sample_bilinear(img, 1.5, 0.0, v));
}

TEST(WarpImage, ForwardBackwardOnPhantom) {
  PhantomSpec spec;
  spec.width = 200;
  spec.height = 140;
  spec.skull = {60, 45, 100, 70, 0.2};
  spec.ring_thickness = 5;
  const GrayImage img = generate_phantom(spec).image;
  const Affine2D f = compose(Affine2D::translation(100, 70),
                             compose(Affine2D::rotation(0.2), compose(Affine2D::scaling(1.1, 0.95),
                                                                      Affine2D::translation(-100, -70))));
  const GrayImage back = warp_image(warp_image(img, f, 200, 140), invert(f), 200, 140);
  auto [mn, mx] = std::minmax_element(img.data().begin(), img.data().end());
  double sum = 0;
  int n = 0;
  for (int y = 25; y < 115; ++y)
    for (int x = 25; x < 175; ++x) {
      sum += std::abs(back.at(x, y) - img.at(x, y));
      ++n;
    }
  EXPECT_LT(sum / n, 0.02 * (*mx - *mn));
}

TEST(Mirror, AlreadyAnteriorLeft) {
  const GrayImage img(800, 300, 1.0);
  const LandmarkSet lm = orientation_landmarks(200, 600);
  const MirrorResult r = mirror_to_convention(img, lm);
  EXPECT_FALSE(r.mirrored);
  EXPECT_EQ(r.landmarks, lm);
}

TEST(Mirror, FlipsAndIsIdempotent) {
  GrayImage img(800, 300);
  for (int x = 0; x < 800; ++x) img.at(x, 0) = x;
  const LandmarkSet lm = orientation_landmarks(600, 200);
  const MirrorResult r = mirror_to_convention(img, lm);
  EXPECT_TRUE(r.mirrored);
  EXPECT_NEAR(centroid(r.landmarks.get(Structure::Cavum)).x, 199, 1e-12);
  EXPECT_EQ(r.image.at(0, 0), 799);
  const MirrorResult again = mirror_to_convention(r.image, r.landmarks);
  EXPECT_FALSE(again.mirrored);
  EXPECT_EQ(again.image, r.image);
  EXPECT_EQ(again.landmarks, r.landmarks);
  const auto& a = lm.get(Structure::Cerebellum);
  const auto& b = r.landmarks.get(Structure::Cerebellum);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      EXPECT_NEAR(distance(a[i], a[j]), distance(b[i], b[j]), 1e-12);
}

TEST(Mirror, NeedsCavumAndCerebellum) {
  LandmarkSet lm;
  lm.set(Structure::Midline, {{1, 1}, {2, 2}});
  try {
    mirror_to_convention(GrayImage(10, 10), lm);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingStructure);
  }
}
