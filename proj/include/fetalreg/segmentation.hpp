#pragma once

#include <cmath>
#include <filesystem>
#include <vector>

#include "fetalreg/image.hpp"
#include "fetalreg/image_io.hpp"

namespace fetalreg {

/// (x - mu) / sigma over non-zero pixels; zero pixels stay exactly 0.
inline GrayImage zscore(const GrayImage& img) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : img.data())
    if (v != 0.0) {
      sum += v;
      ++n;
    }
  if (n == 0) throw Error(ErrorCode::DegenerateImage, "image has no non-zero pixel");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : img.data())
    if (v != 0.0) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(n));
  if (sigma < 1e-12) throw Error(ErrorCode::DegenerateImage, "non-zero intensities are constant");
  GrayImage out(img.width(), img.height(), 0.0);
  auto dst = out.data();
  auto src = img.data();
  for (std::size_t i = 0; i < src.size(); ++i)
    if (src[i] != 0.0) dst[i] = (src[i] - mean) / sigma;
  return out;
}

/// Loads a mask raster: pixels > 127 are foreground.
inline BinaryMask load_mask(const std::filesystem::path& path, int expected_w, int expected_h) {
  const GrayImage img = read_image(path);
  if (img.width() != expected_w || img.height() != expected_h)
    throw Error(ErrorCode::DimensionMismatch,
                path.string() + " is " + std::to_string(img.width()) + "x" +
                    std::to_string(img.height()) + ", expected " + std::to_string(expected_w) +
                    "x" + std::to_string(expected_h));
  BinaryMask mask(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) mask.set(x, y, img.at(x, y) > 127.0);
  return mask;
}

namespace morphology {

inline BinaryMask dilate(const BinaryMask& in) {
  BinaryMask out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      bool v = false;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx)
          v = in.contains(x + dx, y + dy) && in.at(x + dx, y + dy);
      out.set(x, y, v);
    }
  return out;
}

// Out-of-frame neighbours count as background.
inline BinaryMask erode(const BinaryMask& in) {
  BinaryMask out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      bool v = true;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1 && v; ++dx)
          v = in.contains(x + dx, y + dy) && in.at(x + dx, y + dy);
      out.set(x, y, v);
    }
  return out;
}

inline BinaryMask close(BinaryMask m, int iterations) {
  for (int i = 0; i < iterations; ++i) m = dilate(m);
  for (int i = 0; i < iterations; ++i) m = erode(m);
  return m;
}

inline BinaryMask open(BinaryMask m, int iterations) {
  for (int i = 0; i < iterations; ++i) m = erode(m);
  for (int i = 0; i < iterations; ++i) m = dilate(m);
  return m;
}

/// Largest 8-connected component; ties go to the component found first in
/// row-major order.
inline BinaryMask largest_component(const BinaryMask& in) {
  const int w = in.width();
  const int h = in.height();
  std::vector<int> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0);
  int best_label = 0;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!in.at(x, y) || label[static_cast<std::size_t>(y) * w + x] != 0) continue;
      ++next;
      std::size_t size = 0;
      stack.assign(1, {x, y});
      label[static_cast<std::size_t>(y) * w + x] = next;
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        ++size;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (!in.contains(nx, ny) || !in.at(nx, ny)) continue;
            auto& l = label[static_cast<std::size_t>(ny) * w + nx];
            if (l != 0) continue;
            l = next;
            stack.emplace_back(nx, ny);
          }
      }
      if (size > best_size) {
        best_size = size;
        best_label = next;
      }
    }
  BinaryMask out(w, h);
  if (best_label == 0) return out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (label[static_cast<std::size_t>(y) * w + x] == best_label) out.set(x, y, true);
  return out;
}

}  // namespace morphology

/// Classical stand-in for a learned skull segmenter: bright-pixel threshold
/// (z > 1), closing x2, opening x1, then the largest 8-connected component.
inline BinaryMask fallback_skull_mask(const GrayImage& img) {
  const GrayImage z = zscore(img);
  BinaryMask mask(img.width(), img.height());
  auto src = img.data();
  auto zd = z.data();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * img.width() + x;
      mask.set(x, y, src[i] != 0.0 && zd[i] > 1.0);
    }
  mask = morphology::close(std::move(mask), 2);
  mask = morphology::open(std::move(mask), 1);
  mask = morphology::largest_component(mask);
  if (mask.count() == 0) throw Error(ErrorCode::EmptyMask, "no pixel survived skull thresholding");
  return mask;
}

/// Coordinates of all foreground pixels in row-major order.
inline PointSet2D mask_to_points(const BinaryMask& mask) {
  PointSet2D pts;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(x, y)) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
  if (pts.empty()) throw Error(ErrorCode::EmptyMask, "mask has no foreground pixel");
  return pts;
}

}  // namespace fetalreg
