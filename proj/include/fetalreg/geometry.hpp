#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "fetalreg/core.hpp"

namespace fetalreg {

/// Ellipse in parametric form. Construct through make_ellipse() (or call
/// canonicalize()) to get a >= b and theta in [-pi/2, pi/2).
struct EllipseParams {
  double a = 1.0;
  double b = 1.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double theta = 0.0;

  friend bool operator==(const EllipseParams&, const EllipseParams&) = default;
};

/// General conic A x^2 + B xy + C y^2 + D x + E y + F.
struct EllipseCoeffs {
  double A = 0.0, B = 0.0, C = 0.0, D = 0.0, E = 0.0, F = 0.0;

  bool is_ellipse() const noexcept { return B * B - 4.0 * A * C < 0.0; }
};

inline double normalize_angle(double theta) {
  // Period pi: the conic does not distinguish theta from theta + pi.
  double t = std::fmod(theta + kPi / 2.0, kPi);
  if (t < 0.0) t += kPi;
  t -= kPi / 2.0;
  if (t >= kPi / 2.0) t -= kPi;
  return t;
}

inline constexpr double kCircleRelTol = 1e-6;

inline EllipseParams canonicalize(EllipseParams p) {
  p.a = std::abs(p.a);
  p.b = std::abs(p.b);
  if (p.a < p.b) {
    std::swap(p.a, p.b);
    p.theta += kPi / 2.0;
  }
  p.theta = normalize_angle(p.theta);
  if (p.a - p.b <= kCircleRelTol * p.a) p.theta = 0.0;
  return p;
}

inline EllipseParams make_ellipse(double a, double b, double x0, double y0, double theta) {
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b) ||
      !std::isfinite(x0) || !std::isfinite(y0) || !std::isfinite(theta))
    throw Error(ErrorCode::InvalidArgument, "ellipse axes must be positive and finite");
  return canonicalize({a, b, x0, y0, theta});
}

inline EllipseCoeffs params_to_coeffs(const EllipseParams& p) {
  const double s = std::sin(p.theta);
  const double c = std::cos(p.theta);
  const double a2 = p.a * p.a;
  const double b2 = p.b * p.b;
  EllipseCoeffs k;
  k.A = a2 * s * s + b2 * c * c;
  k.B = 2.0 * (b2 - a2) * s * c;
  k.C = a2 * c * c + b2 * s * s;
  k.D = -2.0 * k.A * p.x0 - k.B * p.y0;
  k.E = -k.B * p.x0 - 2.0 * k.C * p.y0;
  k.F = k.A * p.x0 * p.x0 + k.B * p.x0 * p.y0 + k.C * p.y0 * p.y0 - a2 * b2;
  return k;
}

inline double eval_conic(const EllipseCoeffs& k, double x, double y) {
  return k.A * x * x + k.B * x * y + k.C * y * y + k.D * x + k.E * y + k.F;
}

/// Translate by (-x0, -y0) then rotate by -theta.
inline Point2 to_canonical(const EllipseParams& p, double x, double y) {
  const double s = std::sin(p.theta);
  const double c = std::cos(p.theta);
  const double dx = x - p.x0;
  const double dy = y - p.y0;
  return {dx * c + dy * s, -dx * s + dy * c};
}

/// Canonical residual x_c^2/a^2 + y_c^2/b^2 - 1, i.e. f^E / (a^2 b^2).
inline double normalized_residual(const EllipseParams& p, const Point2& q) {
  const Point2 cq = to_canonical(p, q.x, q.y);
  return cq.x * cq.x / (p.a * p.a) + cq.y * cq.y / (p.b * p.b) - 1.0;
}

inline Point2 ellipse_point(const EllipseParams& p, double t) {
  const double s = std::sin(p.theta);
  const double c = std::cos(p.theta);
  const double ct = std::cos(t);
  const double st = std::sin(t);
  return {p.x0 + p.a * ct * c - p.b * st * s, p.y0 + p.a * ct * s + p.b * st * c};
}

inline PointSet2D sample_boundary(const EllipseParams& p, std::size_t n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "sample_boundary needs n >= 1");
  PointSet2D out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
    out.push_back(ellipse_point(p, t));
  }
  return out;
}

namespace detail {

inline void require_fit_support(const PointSet2D& pts) {
  if (pts.size() < 5)
    throw Error(ErrorCode::DegenerateInput,
                "ellipse fitting needs at least 5 points, got " + std::to_string(pts.size()));
}

struct Moments {
  Point2 mean;
  Eigen::Matrix2d cov;
};

inline Moments moments(const PointSet2D& pts) {
  Moments m;
  m.mean = centroid(pts);
  m.cov.setZero();
  for (const auto& p : pts) {
    const Eigen::Vector2d d(p.x - m.mean.x, p.y - m.mean.y);
    m.cov += d * d.transpose();
  }
  m.cov /= static_cast<double>(pts.size());
  return m;
}

}  // namespace detail

/// Moment-based initializer: center from the mean, orientation and axes from
/// the covariance eigen-decomposition (a, b = 2 sqrt(lambda)).
inline EllipseParams moment_init(const PointSet2D& pts) {
  detail::require_fit_support(pts);
  const auto m = detail::moments(pts);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(m.cov);
  const Eigen::Vector2d vals = eig.eigenvalues();  // ascending
  const double scale = std::max(vals(1), 1e-300);
  if (!(vals(0) > 1e-12 * scale) || !(vals(1) > 0.0))
    throw Error(ErrorCode::DegenerateInput, "point cloud has rank < 2 (collinear points)");
  const Eigen::Vector2d major = eig.eigenvectors().col(1);
  const double a = 2.0 * std::sqrt(vals(1));
  const double b = 2.0 * std::sqrt(vals(0));
  return canonicalize({a, b, m.mean.x, m.mean.y, std::atan2(major.y(), major.x())});
}

struct EllipseFit {
  EllipseParams params;
  double objective = 0.0;  // sum of squared normalized residuals
  int iterations = 0;
  bool converged = true;  // false: iteration budget exhausted, params are best-so-far
};

struct FitOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-10;
};

inline double fit_objective(const EllipseParams& p, const PointSet2D& pts) {
  double sum = 0.0;
  for (const auto& q : pts) {
    const double r = normalized_residual(p, q);
    sum += r * r;
  }
  return sum;
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on (a, b, x0, y0, theta)
/// minimizing the sum of squared normalized residuals.
inline EllipseFit fit_ellipse(const PointSet2D& pts, const EllipseParams& init,
                              const FitOptions& opts = {}) {
  detail::require_fit_support(pts);
  {
    const auto m = detail::moments(pts);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(m.cov, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues()(0) > 1e-12 * std::max(eig.eigenvalues()(1), 1e-300)))
      throw Error(ErrorCode::DegenerateInput, "point cloud has rank < 2 (collinear points)");
  }

  using Vec5 = Eigen::Matrix<double, 5, 1>;
  using Mat5 = Eigen::Matrix<double, 5, 5>;
  const std::size_t n = pts.size();

  EllipseParams cur = init;
  double cur_obj = fit_objective(cur, pts);
  double lambda = 1e-3;

  EllipseFit fit;
  fit.converged = false;
  const double floor = 1e-30 * static_cast<double>(n);

  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    if (cur_obj <= floor) {
      fit.converged = true;
      break;
    }
    const double s = std::sin(cur.theta);
    const double c = std::cos(cur.theta);
    const double ia2 = 1.0 / (cur.a * cur.a);
    const double ib2 = 1.0 / (cur.b * cur.b);

    Mat5 jtj = Mat5::Zero();
    Vec5 jtr = Vec5::Zero();
    for (const auto& q : pts) {
      const double dx = q.x - cur.x0;
      const double dy = q.y - cur.y0;
      const double xc = dx * c + dy * s;
      const double yc = -dx * s + dy * c;
      const double r = xc * xc * ia2 + yc * yc * ib2 - 1.0;
      Vec5 j;
      j(0) = -2.0 * xc * xc * ia2 / cur.a;
      j(1) = -2.0 * yc * yc * ib2 / cur.b;
      j(2) = 2.0 * xc * ia2 * (-c) + 2.0 * yc * ib2 * s;
      j(3) = 2.0 * xc * ia2 * (-s) + 2.0 * yc * ib2 * (-c);
      j(4) = 2.0 * xc * yc * (ia2 - ib2);
      jtj.noalias() += j * j.transpose();
      jtr.noalias() += j * r;
    }

    bool accepted = false;
    while (lambda < 1e16) {
      Mat5 damped = jtj;
      const double diag_floor = 1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300);
      for (int k = 0; k < 5; ++k)
        damped(k, k) += lambda * std::max(jtj(k, k), diag_floor);
      const Vec5 step = damped.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      EllipseParams trial{cur.a + step(0), cur.b + step(1), cur.x0 + step(2), cur.y0 + step(3),
                          cur.theta + step(4)};
      if (!(std::abs(trial.a) > 0.0) || !(std::abs(trial.b) > 0.0)) {
        lambda *= 10.0;
        continue;
      }
      trial.a = std::abs(trial.a);
      trial.b = std::abs(trial.b);
      const double trial_obj = fit_objective(trial, pts);
      if (trial_obj < cur_obj) {
        const double rel = (cur_obj - trial_obj) / cur_obj;
        cur = trial;
        cur_obj = trial_obj;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        if (rel < opts.relative_tolerance) fit.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a (local) minimum.
      fit.converged = true;
      ++iter;
      break;
    }
    if (fit.converged) {
      ++iter;
      break;
    }
  }

  fit.params = canonicalize(cur);
  fit.objective = cur_obj;
  fit.iterations = iter;
  return fit;
}

inline EllipseFit fit_ellipse(const PointSet2D& pts) { return fit_ellipse(pts, moment_init(pts)); }

struct RoundError {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t inliers = 0;
};

struct RobustFitReport {
  EllipseParams params;
  std::vector<bool> inlier_mask;
  std::vector<RoundError> per_round_error;
  bool converged = true;

  std::size_t inlier_count() const {
    return static_cast<std::size_t>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
  }
};

namespace detail {

/// A fit whose center leaves the bounding box of its support, or whose
/// major axis exceeds the box diagonal, has run off towards a degenerate
/// huge ellipse.
inline bool plausible_for(const EllipseParams& p, const PointSet2D& pts) {
  double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
  for (const auto& q : pts) {
    x0 = std::min(x0, q.x);
    x1 = std::max(x1, q.x);
    y0 = std::min(y0, q.y);
    y1 = std::max(y1, q.y);
  }
  return p.x0 >= x0 && p.x0 <= x1 && p.y0 >= y0 && p.y0 <= y1 && p.a <= std::hypot(x1 - x0, y1 - y0);
}

}  // namespace detail

struct RobustFitOptions {
  int rounds = 5;
  double sigma_multiplier = 1.0;
  // Squared normalized residuals at or below this are never trimmed; they are
  // floating-point noise on an exact fit, not erroneous pixels.
  double residual_floor = 1e-20;
  FitOptions fit;
};

/// Iterative trimmed fit: each round fits the current inliers, then drops the
/// points whose squared normalized residual exceeds mean + k*std.
inline RobustFitReport robust_fit_ellipse(const PointSet2D& pts, const RobustFitOptions& opts = {}) {
  detail::require_fit_support(pts);

  RobustFitReport report;
  report.inlier_mask.assign(pts.size(), true);

  PointSet2D current = pts;
  std::vector<std::size_t> index(pts.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;

  // A fit that runs off towards a huge ellipse is retried from the moments
  // of the current support, and replaced by those moments if it runs off again.
  auto guarded_fit = [&](const EllipseParams& init) {
    EllipseFit fit = fit_ellipse(current, init, opts.fit);
    if (!detail::plausible_for(fit.params, current)) fit = fit_ellipse(current, moment_init(current), opts.fit);
    report.converged = fit.converged;
    return detail::plausible_for(fit.params, current) ? fit.params : moment_init(current);
  };

  EllipseParams params = moment_init(current);
  bool dirty = true;  // inliers changed since the last fit
  for (int round = 0; round < opts.rounds; ++round) {
    if (dirty) params = guarded_fit(params);
    dirty = false;

    std::vector<double> sq(current.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < current.size(); ++i) {
      const double r = normalized_residual(params, current[i]);
      sq[i] = r * r;
      mean += sq[i];
    }
    mean /= static_cast<double>(sq.size());
    double var = 0.0;
    for (double v : sq) var += (v - mean) * (v - mean);
    const double stddev = std::sqrt(var / static_cast<double>(sq.size()));
    report.per_round_error.push_back({mean, stddev, current.size()});

    const double threshold = std::max(mean + opts.sigma_multiplier * stddev, opts.residual_floor);
    PointSet2D kept;
    std::vector<std::size_t> kept_index;
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (sq[i] <= threshold) {
        kept.push_back(current[i]);
        kept_index.push_back(index[i]);
      }
    }
    if (kept.size() < 5) break;
    if (kept.size() == current.size()) continue;
    try {
      (void)moment_init(kept);
    } catch (const Error&) {
      break;  // trimming would leave a degenerate support
    }
    for (std::size_t i = 0; i < current.size(); ++i) report.inlier_mask[index[i]] = false;
    for (std::size_t i : kept_index) report.inlier_mask[i] = true;
    current = std::move(kept);
    index = std::move(kept_index);
    dirty = true;
  }
  if (dirty) params = guarded_fit(params);
  report.params = params;
  return report;
}

}  // namespace fetalreg
