#pragma once

// Registration evaluation: point-set distances, polygon Dice, SSIM and the
// Wilcoxon signed-rank test with significance-star bands.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fetalreg/core.hpp"
#include "fetalreg/hulls.hpp"
#include "fetalreg/image.hpp"

namespace fetalreg {

namespace detail {

inline void require_nonempty(const PointSet2D& p, const PointSet2D& q) {
  if (p.empty() || q.empty()) throw Error(ErrorCode::EmptyInput, "point set is empty");
}

inline double min_distance(const Point2& p, const PointSet2D& q) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : q) best = std::min(best, squared_distance(p, r));
  return std::sqrt(best);
}

}  // namespace detail

/// Symmetric Hausdorff distance.
inline double hausdorff(const PointSet2D& p, const PointSet2D& q) {
  detail::require_nonempty(p, q);
  double d = 0.0;
  for (const auto& a : p) d = std::max(d, detail::min_distance(a, q));
  for (const auto& b : q) d = std::max(d, detail::min_distance(b, p));
  return d;
}

/// Mean over p of the distance to the nearest point of q.
inline double directed_avg_min_euclidean(const PointSet2D& p, const PointSet2D& q) {
  detail::require_nonempty(p, q);
  double sum = 0.0;
  for (const auto& a : p) sum += detail::min_distance(a, q);
  return sum / static_cast<double>(p.size());
}

/// Average of the two directed mean nearest-point distances.
inline double avg_min_euclidean(const PointSet2D& p, const PointSet2D& q) {
  return 0.5 * (directed_avg_min_euclidean(p, q) + directed_avg_min_euclidean(q, p));
}

inline double dice(const BinaryMask& a, const BinaryMask& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(ErrorCode::DimensionMismatch, "Dice of masks with different sizes");
  std::size_t inter = 0, na = 0, nb = 0;
  auto ra = a.raw();
  auto rb = b.raw();
  for (std::size_t i = 0; i < ra.size(); ++i) {
    na += ra[i];
    nb += rb[i];
    inter += ra[i] & rb[i];
  }
  if (na + nb == 0) throw Error(ErrorCode::EmptyRaster, "both rasters are empty");
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Dice between the rasterized concave hulls of two landmark sets.
inline double polygon_dsc(const PointSet2D& p, const PointSet2D& q, int w, int h,
                          AlphaPolicy alpha = kAutoAlpha) {
  return dice(rasterize(concave_hull(p, alpha), w, h), rasterize(concave_hull(q, alpha), w, h));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range L. Unset: max - min over both images (1 if that is 0).
  std::optional<double> data_range;
};

namespace detail {

/// Separable Gaussian filter, 'valid' region only.
inline std::vector<double> filter_valid(const std::vector<double>& img, int w, int h,
                                        const std::vector<double>& kernel) {
  const int k = static_cast<int>(kernel.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += kernel[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += kernel[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM with a Gaussian window, evaluated where the window fits.
inline double ssim(const GrayImage& a, const GrayImage& b, const SsimOptions& opts = {}) {
  if (a.width() != b.width() || a.height() != b.height())
    throw Error(ErrorCode::DimensionMismatch, "SSIM of images with different sizes");
  if (a.width() < opts.window || a.height() < opts.window)
    throw Error(ErrorCode::TooSmall, "SSIM needs images of at least the window size");

  double range = 1.0;
  if (opts.data_range) {
    range = *opts.data_range;
  } else {
    auto [amin, amax] = std::minmax_element(a.data().begin(), a.data().end());
    auto [bmin, bmax] = std::minmax_element(b.data().begin(), b.data().end());
    const double r = std::max(*amax, *bmax) - std::min(*amin, *bmin);
    if (r > 0.0) range = r;
  }
  const double c1 = (opts.k1 * range) * (opts.k1 * range);
  const double c2 = (opts.k2 * range) * (opts.k2 * range);

  std::vector<double> kernel(static_cast<std::size_t>(opts.window));
  const int half = opts.window / 2;
  double ksum = 0.0;
  for (int i = 0; i < opts.window; ++i) {
    const double d = i - half;
    kernel[i] = std::exp(-d * d / (2.0 * opts.sigma * opts.sigma));
    ksum += kernel[i];
  }
  for (auto& v : kernel) v /= ksum;

  const int w = a.width();
  const int h = a.height();
  const std::vector<double> x(a.data().begin(), a.data().end());
  const std::vector<double> y(b.data().begin(), b.data().end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::filter_valid(x, w, h, kernel);
  const auto my = detail::filter_valid(y, w, h, kernel);
  const auto sxx = detail::filter_valid(xx, w, h, kernel);
  const auto syy = detail::filter_valid(yy, w, h, kernel);
  const auto sxy = detail::filter_valid(xy, w, h, kernel);

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    const double num = (2.0 * (mx[i] * my[i]) + c1) * (2.0 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

namespace detail {

/// Midranks (1-based) of |d|, plus the tie-correction term sum(t^3 - t).
inline std::vector<double> midranks(const std::vector<double>& absd, double& tie_term) {
  const std::size_t n = absd.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return absd[i] < absd[j]; });
  std::vector<double> ranks(n);
  tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail

inline constexpr std::size_t kWilcoxonExactMax = 25;

struct WilcoxonResult {
  double p_value = 1.0;
  double statistic = 0.0;  // sum of ranks of positive differences
  std::size_t n = 0;       // non-zero differences used
  bool exact = false;
};

/// Two-sided paired Wilcoxon signed-rank test. Zero differences are dropped.
/// Exact null distribution (conditional on the observed midranks) up to 25
/// non-zero differences; normal approximation with tie and continuity
/// correction beyond.
inline WilcoxonResult wilcoxon_signed_rank_test(const std::vector<double>& x,
                                                const std::vector<double>& y) {
  if (x.size() != y.size())
    throw Error(ErrorCode::DimensionMismatch, "paired samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  if (d.size() < 5)
    throw Error(ErrorCode::TooFewSamples,
                "need at least 5 non-zero differences, got " + std::to_string(d.size()));

  std::vector<double> absd(d.size());
  std::transform(d.begin(), d.end(), absd.begin(), [](double v) { return std::abs(v); });
  double tie_term = 0.0;
  const auto ranks = detail::midranks(absd, tie_term);

  WilcoxonResult res;
  res.n = d.size();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.0) res.statistic += ranks[i];

  const double n = static_cast<double>(d.size());
  if (d.size() <= kWilcoxonExactMax) {
    // Midranks are multiples of 1/2: count sign assignments by doubled rank sum.
    std::vector<int> r2(d.size());
    int total = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      total += r2[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
    ways[0] = 1.0;
    int reach = 0;
    for (int r : r2) {
      for (int s = reach; s >= 0; --s)
        if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + r)] += ways[static_cast<std::size_t>(s)];
      reach += r;
    }
    const int t = static_cast<int>(std::lround(2.0 * res.statistic));
    double below = 0.0, above = 0.0;
    for (int s = 0; s <= total; ++s) {
      if (s <= t) below += ways[static_cast<std::size_t>(s)];
      if (s >= t) above += ways[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(d.size()));
    res.p_value = std::min(1.0, 2.0 * std::min(below, above) / all);
    res.exact = true;
    return res;
  }

  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  const double diff = res.statistic - mean;
  if (diff == 0.0 || var <= 0.0) {
    res.p_value = 1.0;
    return res;
  }
  const double z = (std::abs(diff) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(std::max(z, 0.0) / std::sqrt(2.0)));
  return res;
}

inline double wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
  return wilcoxon_signed_rank_test(x, y).p_value;
}

/// Significance bands: ns (p > 0.05), * (<= 0.05), ** (<= 0.01),
/// *** (<= 0.001), **** (<= 0.0001).
inline std::string significance_stars(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "p-value outside [0, 1]");
  if (p <= 1e-4) return "****";
  if (p <= 1e-3) return "***";
  if (p <= 1e-2) return "**";
  if (p <= 5e-2) return "*";
  return "ns";
}

}  // namespace fetalreg
