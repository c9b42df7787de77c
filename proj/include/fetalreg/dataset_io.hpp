#pragma once

// Subject records on disk: images, landmark CSVs ("structure,point_index,x,y"),
// transform files and the "<id>[.<scan>]_registered" naming scheme.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fetalreg/image_io.hpp"
#include "fetalreg/landmarks.hpp"
#include "fetalreg/segmentation.hpp"
#include "fetalreg/transform.hpp"

namespace fetalreg {

/// "36" is subject 36 scan 0, "36.1" is subject 36 scan 1.
struct SubjectId {
  int subject = 0;
  int scan = 0;

  std::string str() const {
    return scan == 0 ? std::to_string(subject) : std::to_string(subject) + "." + std::to_string(scan);
  }

  static std::optional<SubjectId> parse(std::string_view s) {
    auto parse_int = [](std::string_view t) -> std::optional<int> {
      if (t.empty() || t.size() > 9) return std::nullopt;
      int v = 0;
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || ptr != t.data() + t.size() || v < 0) return std::nullopt;
      if (t.size() > 1 && t[0] == '0') return std::nullopt;  // no leading zeros: keeps str() exact
      return v;
    };
    const auto dot = s.find('.');
    const auto subject = parse_int(s.substr(0, dot));
    if (!subject) return std::nullopt;
    if (dot == std::string_view::npos) return SubjectId{*subject, 0};
    const auto scan = parse_int(s.substr(dot + 1));
    if (!scan || *scan == 0) return std::nullopt;
    return SubjectId{*subject, *scan};
  }

  friend auto operator<=>(const SubjectId&, const SubjectId&) = default;
};

struct SubjectRecord {
  SubjectId id;
  GrayImage image;
  LandmarkSet landmarks;
  std::optional<BinaryMask> skull_mask;
};

inline constexpr std::string_view kLandmarkHeader = "structure,point_index,x,y";

inline LandmarkSet parse_landmarks_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, origin + ": empty landmark file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kLandmarkHeader)
    throw Error(ErrorCode::ParseError, origin + ": expected header '" + std::string(kLandmarkHeader) + "'");

  std::map<Structure, std::vector<std::pair<std::size_t, Point2>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      cols.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    const std::string where = origin + ":" + std::to_string(lineno);
    if (cols.size() != 4) throw Error(ErrorCode::ParseError, where + ": expected 4 columns");
    const auto structure = parse_structure(cols[0]);
    if (!structure)
      throw Error(ErrorCode::SchemaViolation, where + ": unknown structure '" + std::string(cols[0]) + "'");
    std::size_t index = 0;
    double x = 0.0, y = 0.0;
    auto whole = [](std::string_view t, auto& v) {
      auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      return !t.empty() && ec == std::errc() && ptr == t.data() + t.size();
    };
    if (!whole(cols[1], index) || !whole(cols[2], x) || !whole(cols[3], y) || !std::isfinite(x) ||
        !std::isfinite(y))
      throw Error(ErrorCode::ParseError, where + ": malformed number");
    rows[*structure].push_back({index, {x, y}});
  }

  LandmarkSet lm;
  for (auto& [s, list] : rows) {
    std::sort(list.begin(), list.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    PointSet2D pts;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i].first != i)
        throw Error(ErrorCode::SchemaViolation,
                    origin + ": " + std::string(structure_name(s)) +
                        " point indices must be 0..n-1 without gaps or repeats");
      pts.push_back(list[i].second);
    }
    if (pts.size() != expected_points(s))
      throw Error(ErrorCode::SchemaViolation,
                  origin + ": " + std::string(structure_name(s)) + " has " +
                      std::to_string(pts.size()) + " points, expected " +
                      std::to_string(expected_points(s)));
    lm.set(s, std::move(pts));
  }
  return lm;
}

inline LandmarkSet read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse_landmarks_csv(in, path.string());
}

inline std::string format_landmarks_csv(const LandmarkSet& lm) {
  std::string out(kLandmarkHeader);
  out += '\n';
  for (Structure s : kAllStructures) {
    if (!lm.has(s)) continue;
    const auto& pts = lm.get(s);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      out += structure_name(s);
      out += ',' + std::to_string(i) + ',' + format_double(pts[i].x) + ',' + format_double(pts[i].y) + '\n';
    }
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

inline void write_landmarks(const std::filesystem::path& path, const LandmarkSet& lm) {
  write_text(path, format_landmarks_csv(lm));
}

/// 3x3 row-major matrix, one row per line.
inline std::string format_transform(const Affine2D& t) {
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (c) out += ' ';
      out += format_double(t(r, c) == 0.0 ? 0.0 : t(r, c));
    }
    out += '\n';
  }
  return out;
}

inline Affine2D read_transform(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<double> v;
  std::string tok;
  while (in >> tok) {
    double d = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw Error(ErrorCode::ParseError, path.string() + ": malformed number '" + tok + "'");
    v.push_back(d);
  }
  if (v.size() != 9) throw Error(ErrorCode::ParseError, path.string() + ": expected 9 numbers");
  Eigen::Matrix3d m;
  m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  return Affine2D(m);
}

inline SubjectId subject_id_from_path(const std::filesystem::path& path) {
  const auto id = SubjectId::parse(path.stem().string());
  if (!id)
    throw Error(ErrorCode::ParseError,
                path.string() + ": file name is not of the form <id> or <id>.<scan>");
  return *id;
}

/// Reads the image and landmark CSV of one subject and validates the
/// landmark schema and bounds.
inline SubjectRecord load_subject(const std::filesystem::path& image_path,
                                  const std::filesystem::path& landmarks_path) {
  SubjectRecord rec;
  rec.id = subject_id_from_path(landmarks_path);
  rec.image = read_image(image_path);
  rec.landmarks = read_landmarks(landmarks_path);
  rec.landmarks.validate_bounds(rec.image.width(), rec.image.height());
  return rec;
}

inline constexpr std::array<std::string_view, 4> kImageExtensions = {".png", ".pgm", ".jpeg", ".jpg"};

/// Every "<id>.csv" in `dir` with a sibling image; "<id>_mask.png" is loaded
/// as the skull mask when present. Sorted by id.
inline std::vector<SubjectRecord> load_cohort(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<SubjectRecord> out;
  std::vector<fs::path> csvs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv" &&
        SubjectId::parse(entry.path().stem().string()))
      csvs.push_back(entry.path());
  std::sort(csvs.begin(), csvs.end(), [](const fs::path& a, const fs::path& b) {
    return *SubjectId::parse(a.stem().string()) < *SubjectId::parse(b.stem().string());
  });
  for (const auto& csv : csvs) {
    const std::string stem = csv.stem().string();
    std::optional<fs::path> image;
    for (auto ext : kImageExtensions) {
      const fs::path candidate = dir / (stem + std::string(ext));
      if (fs::exists(candidate)) {
        image = candidate;
        break;
      }
    }
    if (!image) throw Error(ErrorCode::IoError, "no image found for subject " + stem);
    SubjectRecord rec = load_subject(*image, csv);
    for (auto ext : kImageExtensions) {
      const fs::path mask = dir / (stem + "_mask" + std::string(ext));
      if (fs::exists(mask)) {
        rec.skull_mask = load_mask(mask, rec.image.width(), rec.image.height());
        break;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline constexpr int kDefaultReferenceId = 10;

inline const SubjectRecord& select_reference(const std::vector<SubjectRecord>& cohort,
                                             std::optional<int> id = std::nullopt) {
  if (cohort.empty()) throw Error(ErrorCode::ReferenceNotFound, "cohort is empty");
  const SubjectId want{id.value_or(kDefaultReferenceId), 0};
  for (const auto& rec : cohort)
    if (rec.id == want) return rec;
  throw Error(ErrorCode::ReferenceNotFound, "subject " + want.str() + " not in cohort");
}

struct RegisteredPaths {
  std::filesystem::path image;
  std::filesystem::path landmarks;
  std::filesystem::path transform;
};

inline RegisteredPaths registered_paths(const SubjectId& id, const std::filesystem::path& out_dir,
                                        RasterFormat format = RasterFormat::Png) {
  const std::string base = id.str();
  return {out_dir / (base + "_registered" + std::string(extension_of(format))),
          out_dir / (base + "_registered.csv"), out_dir / (base + "_transform.txt")};
}

/// Writes the image warped into the out_w x out_h reference frame, the
/// warped landmarks and the transform.
inline RegisteredPaths save_registered(const SubjectRecord& record, const Affine2D& transform,
                                       int out_w, int out_h, const std::filesystem::path& out_dir,
                                       RasterFormat format = RasterFormat::Png) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw Error(ErrorCode::IoError, "cannot create output directory " + out_dir.string());
  const RegisteredPaths paths = registered_paths(record.id, out_dir, format);
  write_image(paths.image, warp_image(record.image, transform, out_w, out_h));
  write_landmarks(paths.landmarks, warp_landmarks(transform, record.landmarks));
  write_text(paths.transform, format_transform(transform));
  return paths;
}

}  // namespace fetalreg
