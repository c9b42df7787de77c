#pragma once

// Coarse registration strategies: ellipse normalization (E), ellipse followed
// by intensity-based affine refinement (E+A), affine from identity (AFF) and
// affine started from the reference's ellipse centering (AFF+I).

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fetalreg/dataset_io.hpp"
#include "fetalreg/geometry.hpp"
#include "fetalreg/segmentation.hpp"
#include "fetalreg/transform.hpp"

namespace fetalreg {

enum class RegistrationMethod { Ellipse, EllipsePlusAffine, AffineIdentity, AffineReferenceEllipse };

inline constexpr std::array<RegistrationMethod, 4> kAllMethods = {
    RegistrationMethod::Ellipse, RegistrationMethod::EllipsePlusAffine,
    RegistrationMethod::AffineIdentity, RegistrationMethod::AffineReferenceEllipse};

inline std::string_view method_label(RegistrationMethod m) {
  switch (m) {
    case RegistrationMethod::Ellipse: return "E";
    case RegistrationMethod::EllipsePlusAffine: return "E+A";
    case RegistrationMethod::AffineIdentity: return "AFF";
    case RegistrationMethod::AffineReferenceEllipse: return "AFF+I";
  }
  return "?";
}

inline std::optional<RegistrationMethod> parse_method(std::string_view s) {
  for (auto m : kAllMethods)
    if (method_label(m) == s) return m;
  return std::nullopt;
}

struct RefineConfig {
  int max_iters = 100;         // per pyramid level
  double step_size = 2.0;      // initial step, in full-resolution pixels of displacement
  int pyramid_levels = 3;      // x4, x2, x1 for the default
  double convergence_tol = 1e-5;  // relative loss decrease that ends a level

  void validate() const {
    if (max_iters < 1 || pyramid_levels < 1 || !(step_size > 0.0) || !(convergence_tol > 0.0))
      throw Error(ErrorCode::InvalidArgument, "invalid refinement configuration");
  }
};

struct RegistrationResult {
  Affine2D transform;              // moving pixel frame -> reference pixel frame
  std::vector<double> loss_trace;  // full-resolution loss at each new best transform
  RegistrationMethod method = RegistrationMethod::Ellipse;
  bool converged = true;
};

/// Robust ellipse of a skull mask point set.
inline EllipseParams fit_skull(const PointSet2D& mask_points) {
  return robust_fit_ellipse(mask_points).params;
}

inline RegistrationResult register_ellipse(const PointSet2D& moving_mask_pts,
                                           const EllipseParams& ref_params, int w, int h) {
  const EllipseParams moving = fit_skull(moving_mask_pts);
  RegistrationResult res;
  res.method = RegistrationMethod::Ellipse;
  res.transform = compose(invert(ellipse_to_canonical(ref_params, w, h)),
                          ellipse_to_canonical(moving, w, h));
  return res;
}

namespace detail {

/// 2x2 box-average downsampling; odd trailing rows/columns are dropped.
inline GrayImage downsample2(const GrayImage& img) {
  const int w = std::max(1, img.width() / 2);
  const int h = std::max(1, img.height() / 2);
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x1 = std::min(2 * x + 1, img.width() - 1);
      const int y1 = std::min(2 * y + 1, img.height() - 1);
      out.at(x, y) = 0.25 * (img.at(2 * x, 2 * y) + img.at(x1, 2 * y) + img.at(2 * x, y1) +
                             img.at(x1, y1));
    }
  return out;
}

/// Mean squared error between the fixed image and the moving image sampled
/// through a fixed->moving affine map, over in-domain samples.
///
/// The map is parameterized in a frame reached from fixed pixels through
/// `frame`, around its center c with a length scale L so every parameter
/// moves pixels by about one unit:
///   G(p) = (q0, q1; q2, q3) / L * (frame(p) - c) + (q4, q5).
class AffineLoss {
 public:
  using Params = std::array<double, 6>;

  AffineLoss(const GrayImage& moving, const GrayImage& fixed, const Affine2D& frame = Affine2D::identity())
      : center_{0.5 * (fixed.width() - 1), 0.5 * (fixed.height() - 1)},
        scale_(0.5 * std::hypot(fixed.width(), fixed.height())),
        frame_(frame) {
    moving_.push_back(moving);
    fixed_.push_back(fixed);
  }

  void build_pyramid(int levels) {
    while (static_cast<int>(moving_.size()) < levels) {
      moving_.push_back(downsample2(moving_.back()));
      fixed_.push_back(downsample2(fixed_.back()));
    }
  }

  Params from_transform(const Affine2D& fixed_to_moving) const {
    const auto& m = fixed_to_moving.matrix();
    const Point2 t = fixed_to_moving.apply(center_);
    return {m(0, 0) * scale_, m(0, 1) * scale_, m(1, 0) * scale_, m(1, 1) * scale_, t.x, t.y};
  }

  Affine2D to_transform(const Params& q) const {
    const double a00 = q[0] / scale_, a01 = q[1] / scale_, a10 = q[2] / scale_, a11 = q[3] / scale_;
    return Affine2D::from_rows(a00, a01, q[4] - a00 * center_.x - a01 * center_.y, a10, a11,
                               q[5] - a10 * center_.x - a11 * center_.y);
  }

  /// Loss at pyramid level `level` (factor 2^level); +inf when fewer than 1%
  /// of fixed pixels map inside the moving image.
  double operator()(const Params& q, int level) const {
    const GrayImage& fixed = fixed_[static_cast<std::size_t>(level)];
    const GrayImage& moving = moving_[static_cast<std::size_t>(level)];
    const double f = std::ldexp(1.0, level);
    const double off = 0.5 * (f - 1.0);
    const Affine2D g = compose(to_transform(q), frame_);
    const double a00 = g(0, 0), a01 = g(0, 1), a10 = g(1, 0), a11 = g(1, 1);
    // coarse fixed (i, j) -> full p = f*(i, j) + off -> full moving G(p) -> coarse (G(p) - off) / f
    const double bx = (g(0, 2) + (a00 + a01 - 1.0) * off) / f;
    const double by = (g(1, 2) + (a10 + a11 - 1.0) * off) / f;
    const double mw = moving.width() - 1;
    const double mh = moving.height() - 1;
    const int mwi = moving.width();
    auto md = moving.data();
    auto fd = fixed.data();
    double sum = 0.0;
    std::size_t count = 0;
    for (int j = 0; j < fixed.height(); ++j) {
      double x = bx + a01 * j;
      double y = by + a11 * j;
      const std::size_t row = static_cast<std::size_t>(j) * fixed.width();
      for (int i = 0; i < fixed.width(); ++i, x += a00, y += a10) {
        if (!(x >= 0.0 && y >= 0.0 && x <= mw && y <= mh)) continue;
        int ix = static_cast<int>(x);
        int iy = static_cast<int>(y);
        double fx = x - ix;
        double fy = y - iy;
        if (ix >= mwi - 1) {
          ix = mwi - 2;
          fx = 1.0;
        }
        if (iy >= moving.height() - 1) {
          iy = moving.height() - 2;
          fy = 1.0;
        }
        const std::size_t k = static_cast<std::size_t>(iy) * mwi + ix;
        const double top = md[k] + fx * (md[k + 1] - md[k]);
        const double bot = md[k + mwi] + fx * (md[k + mwi + 1] - md[k + mwi]);
        const double d = fd[row + i] - (top + fy * (bot - top));
        sum += d * d;
        ++count;
      }
    }
    if (count * 100 < fd.size() || count == 0) return std::numeric_limits<double>::infinity();
    return sum / static_cast<double>(count);
  }

  int levels() const { return static_cast<int>(fixed_.size()); }

 private:
  Point2 center_;
  double scale_;
  Affine2D frame_;
  std::vector<GrayImage> moving_;
  std::vector<GrayImage> fixed_;
};

}  // namespace detail

/// Intensity-based affine refinement. Minimizes the MSE between z-scored
/// images by normalized gradient descent with backtracking line search,
/// gradients by central finite differences, coarse to fine.
/// `init` and the result map moving pixels into the frame reached from fixed
/// pixels through `frame`.
inline RegistrationResult register_affine(const GrayImage& moving, const GrayImage& fixed,
                                          const Affine2D& frame, const Affine2D& init,
                                          const RefineConfig& cfg) {
  cfg.validate();
  if (moving.width() < 2 || moving.height() < 2 || fixed.width() < 2 || fixed.height() < 2)
    throw Error(ErrorCode::DegenerateImage, "images must be at least 2x2");
  detail::AffineLoss loss(zscore(moving), zscore(fixed), frame);
  int levels = 1;
  while (levels < cfg.pyramid_levels && (fixed.width() >> levels) >= 8 &&
         (fixed.height() >> levels) >= 8 && (moving.width() >> levels) >= 8 &&
         (moving.height() >> levels) >= 8)
    ++levels;
  loss.build_pyramid(levels);

  using Params = detail::AffineLoss::Params;
  constexpr double kFdStep = 1e-4;
  constexpr double kArmijo = 1e-4;

  Params q = loss.from_transform(invert(init));
  RegistrationResult res;
  res.method = RegistrationMethod::AffineIdentity;
  res.transform = init;
  double best = loss(q, 0);
  res.loss_trace.push_back(best);
  Params best_q = q;
  res.converged = true;

  for (int level = levels - 1; level >= 0; --level) {
    const double scale = std::ldexp(1.0, level);
    double step = cfg.step_size * scale;
    const double min_step = 1e-3;
    double cur = loss(q, level);
    bool level_converged = false;
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      if (!std::isfinite(cur)) break;
      Params g{};
      double norm2 = 0.0;
      for (int k = 0; k < 6; ++k) {
        Params hi = q, lo = q;
        hi[k] += kFdStep;
        lo[k] -= kFdStep;
        const double lh = loss(hi, level);
        const double ll = loss(lo, level);
        g[k] = (std::isfinite(lh) && std::isfinite(ll)) ? (lh - ll) / (2.0 * kFdStep) : 0.0;
        norm2 += g[k] * g[k];
      }
      const double gnorm = std::sqrt(norm2);
      if (!(gnorm > 0.0)) {
        level_converged = true;
        break;
      }
      bool accepted = false;
      double trial_loss = cur;
      Params trial{};
      while (step >= min_step) {
        for (int k = 0; k < 6; ++k) trial[k] = q[k] - step * g[k] / gnorm;
        trial_loss = loss(trial, level);
        if (trial_loss <= cur - kArmijo * step * gnorm) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        level_converged = true;
        break;
      }
      const double rel = (cur - trial_loss) / std::max(cur, 1e-300);
      q = trial;
      cur = trial_loss;
      if (level == 0 && cur < best) {
        best = cur;
        best_q = q;
        res.loss_trace.push_back(best);
      }
      step = std::min(step * 1.5, 8.0 * cfg.step_size * scale);
      if (rel < cfg.convergence_tol) {
        level_converged = true;
        break;
      }
    }
    if (level > 0) {
      const double full = loss(q, 0);
      if (full < best) {
        best = full;
        best_q = q;
        res.loss_trace.push_back(best);
      }
    } else {
      res.converged = level_converged;
    }
  }
  res.transform = invert(loss.to_transform(best_q));
  return res;
}

/// `init` and the result map moving pixels to fixed pixels.
inline RegistrationResult register_affine(const GrayImage& moving, const GrayImage& fixed,
                                          const Affine2D& init, const RefineConfig& cfg) {
  return register_affine(moving, fixed, Affine2D::identity(), init, cfg);
}

/// Reference subject prepared once for a batch: its skull ellipse and
/// centering transform.
struct PreparedReference {
  const SubjectRecord* record = nullptr;
  EllipseParams ellipse;
  Affine2D centering;

  int width() const { return record->image.width(); }
  int height() const { return record->image.height(); }
};

inline BinaryMask skull_mask_of(const SubjectRecord& rec) {
  return rec.skull_mask ? *rec.skull_mask : fallback_skull_mask(rec.image);
}

inline PreparedReference prepare_reference(const SubjectRecord& reference) {
  PreparedReference ref;
  ref.record = &reference;
  ref.ellipse = fit_skull(mask_to_points(skull_mask_of(reference)));
  ref.centering = ellipse_to_canonical(ref.ellipse, reference.image.width(), reference.image.height());
  return ref;
}

/// Runs one strategy. Refinement happens in the reference's centered frame;
/// the returned transform maps moving pixels to reference pixels.
inline RegistrationResult run_method(RegistrationMethod method, const SubjectRecord& subject,
                                     const PreparedReference& ref, const RefineConfig& cfg = {}) {
  const int w = ref.width();
  const int h = ref.height();
  const Affine2D uncenter = invert(ref.centering);

  auto moving_centering = [&] {
    return ellipse_to_canonical(fit_skull(mask_to_points(skull_mask_of(subject))), w, h);
  };
  auto refine = [&](const Affine2D& init_centered) {
    RegistrationResult r = register_affine(subject.image, ref.record->image, ref.centering, init_centered, cfg);
    r.transform = compose(uncenter, r.transform);
    r.method = method;
    return r;
  };

  switch (method) {
    case RegistrationMethod::Ellipse: {
      RegistrationResult r;
      r.method = method;
      r.transform = compose(uncenter, moving_centering());
      return r;
    }
    case RegistrationMethod::EllipsePlusAffine: return refine(moving_centering());
    case RegistrationMethod::AffineIdentity: return refine(Affine2D::identity());
    case RegistrationMethod::AffineReferenceEllipse: return refine(ref.centering);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown registration method");
}

inline RegistrationResult run_method(RegistrationMethod method, const SubjectRecord& subject,
                                     const SubjectRecord& reference, const RefineConfig& cfg = {}) {
  return run_method(method, subject, prepare_reference(reference), cfg);
}

inline RegisteredPaths save_registered(const SubjectRecord& record, const RegistrationResult& result,
                                       const SubjectRecord& reference,
                                       const std::filesystem::path& out_dir,
                                       RasterFormat format = RasterFormat::Png) {
  return save_registered(record, result.transform, reference.image.width(),
                         reference.image.height(), out_dir, format);
}

}  // namespace fetalreg
