#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "fetalreg/core.hpp"

namespace fetalreg {

enum class Structure { Skull, Thalami, Cerebellum, Cavum, Sylvius, Midline };

inline constexpr std::array<Structure, 6> kAllStructures = {
    Structure::Skull, Structure::Thalami, Structure::Cerebellum,
    Structure::Cavum, Structure::Sylvius, Structure::Midline};

/// Structures that lie inside the skull (the ones refinement should improve).
inline constexpr std::array<Structure, 4> kInteriorStructures = {
    Structure::Thalami, Structure::Cerebellum, Structure::Cavum, Structure::Sylvius};

inline std::string_view structure_name(Structure s) {
  switch (s) {
    case Structure::Skull: return "skull";
    case Structure::Thalami: return "thalami";
    case Structure::Cerebellum: return "cerebellum";
    case Structure::Cavum: return "cavum";
    case Structure::Sylvius: return "sylvius";
    case Structure::Midline: return "midline";
  }
  return "?";
}

inline std::optional<Structure> parse_structure(std::string_view name) {
  for (Structure s : kAllStructures)
    if (structure_name(s) == name) return s;
  return std::nullopt;
}

/// Annotation protocol: number of landmarks per structure.
inline std::size_t expected_points(Structure s) {
  switch (s) {
    case Structure::Skull: return 4;
    case Structure::Thalami: return 3;
    case Structure::Cerebellum: return 8;
    case Structure::Cavum: return 4;
    case Structure::Sylvius: return 3;
    case Structure::Midline: return 2;
  }
  return 0;
}

/// Structures with more than two landmarks admit a hull (all but the midline).
inline bool has_area(Structure s) { return expected_points(s) > 2; }

class LandmarkSet {
 public:
  using Map = std::map<Structure, PointSet2D>;

  void set(Structure s, PointSet2D pts) {
    if (pts.size() != expected_points(s))
      throw Error(ErrorCode::SchemaViolation,
                  std::string(structure_name(s)) + " expects " +
                      std::to_string(expected_points(s)) + " points, got " +
                      std::to_string(pts.size()));
    for (const auto& p : pts)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw Error(ErrorCode::SchemaViolation,
                    std::string(structure_name(s)) + " has a non-finite coordinate");
    points_[s] = std::move(pts);
  }

  bool has(Structure s) const { return points_.count(s) != 0; }

  const PointSet2D& get(Structure s) const {
    auto it = points_.find(s);
    if (it == points_.end())
      throw Error(ErrorCode::MissingStructure, std::string(structure_name(s)) + " not annotated");
    return it->second;
  }

  const Map& all() const noexcept { return points_; }
  bool empty() const noexcept { return points_.empty(); }

  /// Every point must satisfy 0 <= x < width and 0 <= y < height.
  void validate_bounds(int width, int height) const {
    for (const auto& [s, pts] : points_)
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < width && p.y < height))
          throw Error(ErrorCode::SchemaViolation,
                      std::string(structure_name(s)) + " point " + std::to_string(i) +
                          " lies outside the " + std::to_string(width) + "x" +
                          std::to_string(height) + " image");
      }
  }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  Map points_;
};

}  // namespace fetalreg
