#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <tuple>

#include "fetalreg/core.hpp"
#include "fetalreg/geometry.hpp"
#include "fetalreg/image.hpp"
#include "fetalreg/landmarks.hpp"

namespace fetalreg {

/// Planar affine transform in homogeneous 3x3 form. The last row is always
/// exactly (0, 0, 1) and the linear block is invertible.
class Affine2D {
 public:
  static constexpr double kSingularTol = 1e-12;

  Affine2D() : m_(Eigen::Matrix3d::Identity()) {}

  explicit Affine2D(const Eigen::Matrix3d& m) : m_(m) {
    if (m(2, 0) != 0.0 || m(2, 1) != 0.0 || m(2, 2) != 1.0)
      throw Error(ErrorCode::InvalidArgument, "affine last row must be (0, 0, 1)");
    if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite affine entry");
    if (std::abs(linear_det(m)) <= kSingularTol)
      throw Error(ErrorCode::Singular, "affine linear block is singular");
  }

  /// Row-major 2x3 block (m00 m01 tx; m10 m11 ty).
  static Affine2D from_rows(double m00, double m01, double tx, double m10, double m11, double ty) {
    Eigen::Matrix3d m;
    m << m00, m01, tx, m10, m11, ty, 0.0, 0.0, 1.0;
    return Affine2D(m);
  }

  static Affine2D identity() { return {}; }
  static Affine2D translation(double tx, double ty) { return from_rows(1, 0, tx, 0, 1, ty); }
  static Affine2D scaling(double sx, double sy) { return from_rows(sx, 0, 0, 0, sy, 0); }
  static Affine2D rotation(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return from_rows(c, -s, 0, s, c, 0);
  }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }
  double det() const { return linear_det(m_); }

  Point2 apply(const Point2& p) const {
    return {m_(0, 0) * p.x + m_(0, 1) * p.y + m_(0, 2), m_(1, 0) * p.x + m_(1, 1) * p.y + m_(1, 2)};
  }

 private:
  static double linear_det(const Eigen::Matrix3d& m) {
    return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  }

  Eigen::Matrix3d m_;
};

/// (f o g)(x) = f(g(x)).
inline Affine2D compose(const Affine2D& f, const Affine2D& g) {
  Eigen::Matrix3d m = f.matrix() * g.matrix();
  m.row(2) << 0.0, 0.0, 1.0;
  return Affine2D(m);
}

inline Affine2D invert(const Affine2D& f) {
  const auto& m = f.matrix();
  const double det = f.det();
  if (std::abs(det) <= Affine2D::kSingularTol)
    throw Error(ErrorCode::Singular, "cannot invert a singular affine transform");
  const double i00 = m(1, 1) / det;
  const double i01 = -m(0, 1) / det;
  const double i10 = -m(1, 0) / det;
  const double i11 = m(0, 0) / det;
  const double tx = -(i00 * m(0, 2) + i01 * m(1, 2));
  const double ty = -(i10 * m(0, 2) + i11 * m(1, 2));
  return Affine2D::from_rows(i00, i01, tx, i10, i11, ty);
}

inline PointSet2D warp_points(const Affine2D& f, const PointSet2D& pts) {
  PointSet2D out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(f.apply(p));
  return out;
}

inline LandmarkSet warp_landmarks(const Affine2D& f, const LandmarkSet& lm) {
  LandmarkSet out;
  for (const auto& [s, pts] : lm.all()) out.set(s, warp_points(f, pts));
  return out;
}

/// Maps the ellipse into the w x h frame: center to (w/2, h/2), major axis
/// along x spanning [0, w], minor axis along y spanning [0, h].
inline Affine2D ellipse_to_canonical(const EllipseParams& p, int w, int h) {
  if (w < 2 || h < 2) throw Error(ErrorCode::InvalidArgument, "frame must be at least 2x2");
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  const double sx = w / (2.0 * p.a);
  const double sy = h / (2.0 * p.b);
  const Affine2D scale_rotate =
      Affine2D::from_rows(sx * c, sx * s, w / 2.0, -sy * s, sy * c, h / 2.0);
  return compose(scale_rotate, Affine2D::translation(-p.x0, -p.y0));
}

/// Bilinear sample at (x, y). Returns false when the location falls outside
/// [0, w-1] x [0, h-1].
inline bool sample_bilinear(const GrayImage& img, double x, double y, double& out) {
  constexpr double eps = 1e-9;
  const double xmax = img.width() - 1;
  const double ymax = img.height() - 1;
  if (!(x >= -eps && y >= -eps && x <= xmax + eps && y <= ymax + eps)) return false;
  x = std::clamp(x, 0.0, xmax);
  y = std::clamp(y, 0.0, ymax);
  int ix = static_cast<int>(std::floor(x));
  int iy = static_cast<int>(std::floor(y));
  double fx = x - ix;
  double fy = y - iy;
  if (ix >= img.width() - 1) {
    ix = img.width() - 1;
    fx = 0.0;
  }
  if (iy >= img.height() - 1) {
    iy = img.height() - 1;
    fy = 0.0;
  }
  const double v00 = img.at(ix, iy);
  if (fx == 0.0 && fy == 0.0) {
    out = v00;
    return true;
  }
  const double v10 = fx > 0.0 ? img.at(ix + 1, iy) : v00;
  const double v01 = fy > 0.0 ? img.at(ix, iy + 1) : v00;
  const double v11 = (fx > 0.0 && fy > 0.0) ? img.at(ix + 1, iy + 1) : (fx > 0.0 ? v10 : v01);
  out = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10) + fy * ((1.0 - fx) * v01 + fx * v11);
  return true;
}

/// Pull-back resampling: output pixel (u, v) samples img at invert(f)(u, v).
/// Out-of-domain samples are 0.
inline GrayImage warp_image(const GrayImage& img, const Affine2D& f, int out_w, int out_h) {
  const Affine2D back = invert(f);
  GrayImage out(out_w, out_h, 0.0);
  for (int v = 0; v < out_h; ++v)
    for (int u = 0; u < out_w; ++u) {
      const Point2 src = back.apply({static_cast<double>(u), static_cast<double>(v)});
      double value;
      if (sample_bilinear(img, src.x, src.y, value)) out.at(u, v) = value;
    }
  return out;
}

struct MirrorResult {
  GrayImage image;
  LandmarkSet landmarks;
  bool mirrored = false;
};

/// Enforces anterior-left orientation: if the cavum lies right of the
/// cerebellum, flip horizontally (x -> width - 1 - x).
inline MirrorResult mirror_to_convention(const GrayImage& img, const LandmarkSet& lm) {
  if (!lm.has(Structure::Cavum) || !lm.has(Structure::Cerebellum))
    throw Error(ErrorCode::MissingStructure,
                "orientation needs both cavum and cerebellum landmarks");
  const double cavum_x = centroid(lm.get(Structure::Cavum)).x;
  const double cerebellum_x = centroid(lm.get(Structure::Cerebellum)).x;
  if (cavum_x <= cerebellum_x) return {img, lm, false};

  const int w = img.width();
  GrayImage flipped(w, img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < w; ++x) flipped.at(x, y) = img.at(w - 1 - x, y);
  LandmarkSet out;
  for (const auto& [s, pts] : lm.all()) {
    PointSet2D m = pts;
    for (auto& p : m) p.x = (w - 1) - p.x;
    out.set(s, std::move(m));
  }
  return {std::move(flipped), std::move(out), true};
}

}  // namespace fetalreg
