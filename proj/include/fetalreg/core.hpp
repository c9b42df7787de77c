#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fetalreg {

/// Failure categories surfaced by the library. Every thrown fetalreg::Error
/// carries one of these so callers (and the CLI) can branch on the kind.
enum class ErrorCode {
  DegenerateInput,
  Singular,
  DegenerateImage,
  EmptyMask,
  EmptyInput,
  EmptyRaster,
  IoError,
  ParseError,
  DimensionMismatch,
  AlphaTooLarge,
  UnsupportedStructure,
  MissingStructure,
  SchemaViolation,
  ReferenceNotFound,
  TooSmall,
  TooFewSamples,
  InvalidSpec,
  InvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::Singular: return "Singular";
    case ErrorCode::DegenerateImage: return "DegenerateImage";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyRaster: return "EmptyRaster";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::AlphaTooLarge: return "AlphaTooLarge";
    case ErrorCode::UnsupportedStructure: return "UnsupportedStructure";
    case ErrorCode::MissingStructure: return "MissingStructure";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::ReferenceNotFound: return "ReferenceNotFound";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Planar point in pixel coordinates. Pixel (i, j) has its sample at (i, j);
/// only rasterization uses pixel-center (i + 0.5, j + 0.5) sampling.
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

using PointSet2D = std::vector<Point2>;

inline double distance(const Point2& p, const Point2& q) {
  return std::hypot(p.x - q.x, p.y - q.y);
}

inline double squared_distance(const Point2& p, const Point2& q) {
  const double dx = p.x - q.x;
  const double dy = p.y - q.y;
  return dx * dx + dy * dy;
}

inline Point2 centroid(const PointSet2D& pts) {
  Point2 c;
  if (pts.empty()) return c;
  for (const auto& p : pts) {
    c.x += p.x;
    c.y += p.y;
  }
  c.x /= static_cast<double>(pts.size());
  c.y /= static_cast<double>(pts.size());
  return c;
}

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace fetalreg
