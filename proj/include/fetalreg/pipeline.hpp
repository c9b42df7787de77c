#pragma once

// The batch commands behind the fetalreg executable: synth, segment, fit,
// register, maps, evaluate and report. Each reads and writes the on-disk
// dataset layout and throws on fatal errors.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fetalreg/dataset_io.hpp"
#include "fetalreg/hulls.hpp"
#include "fetalreg/metrics.hpp"
#include "fetalreg/phantom.hpp"
#include "fetalreg/registration.hpp"

namespace fetalreg {

/// Bad command-line or configuration values (exit status 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path registered;  // evaluate: directory written by register
  int reference_id = kDefaultReferenceId;
  std::vector<RegistrationMethod> methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<Structure> structures;  // maps: empty means every structure with an area
  RefineConfig refine;
  AlphaPolicy alpha = kAutoAlpha;
  int jobs = 1;
  std::uint64_t seed = 7;
  bool keep_going = false;
  RasterFormat format = RasterFormat::Png;
  // synth
  int count = 50;
  int width = 800;
  int height = 540;
  double speckle = 0.1;

  void validate() const {
    if (methods.empty()) throw UsageError("method list is empty");
    if (jobs < 1) throw UsageError("--jobs must be at least 1");
    if (alpha && *alpha < 0.0) throw UsageError("--alpha must be 'auto' or >= 0");
    try {
      refine.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
};

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

inline void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex());
  std::cerr << "warning: " << msg << '\n';
}

namespace detail {

/// Runs f(0..n-1) on `jobs` threads. f must not throw.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, jobs)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) f(i);
    });
  for (auto& th : pool) th.join();
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorCode::IoError, "cannot create output directory " + dir.string());
}

inline std::string csv_row(std::initializer_list<std::string> cols) {
  std::string out;
  bool first = true;
  for (const auto& c : cols) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  out += '\n';
  return out;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> cols;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) cols.push_back(cur);
  if (!line.empty() && line.back() == sep) cols.emplace_back();
  return cols;
}

inline double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::ParseError, where + ": malformed number '" + s + "'");
  return v;
}

inline Affine2D mirror_x(int width) { return Affine2D::from_rows(-1, 0, width - 1, 0, 1, 0); }

/// Subject flipped to the anterior-left convention, with the flip as a transform.
struct Oriented {
  SubjectRecord record;
  Affine2D flip;
  bool mirrored = false;
};

inline Oriented orient(const SubjectRecord& rec) {
  MirrorResult m = mirror_to_convention(rec.image, rec.landmarks);
  Oriented out{SubjectRecord{rec.id, std::move(m.image), std::move(m.landmarks), rec.skull_mask},
               Affine2D::identity(), m.mirrored};
  if (m.mirrored) {
    const int w = rec.image.width();
    out.flip = mirror_x(w);
    if (rec.skull_mask) {
      BinaryMask flipped(w, rec.image.height());
      for (int y = 0; y < flipped.height(); ++y)
        for (int x = 0; x < w; ++x) flipped.set(x, y, rec.skull_mask->at(w - 1 - x, y));
      out.record.skull_mask = std::move(flipped);
    }
  }
  return out;
}

inline std::string method_dir_name(RegistrationMethod m) { return std::string(method_label(m)); }

/// Small RGB raster for overlays and plots.
class Canvas {
 public:
  Canvas(int w, int h, std::uint8_t fill = 255)
      : w_(w), h_(h), rgb_(static_cast<std::size_t>(w) * h * 3, fill) {}

  static Canvas from_gray(const GrayImage& img) {
    Canvas c(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const std::uint8_t v = to_byte(img.at(x, y));
        c.put(x, y, {v, v, v});
      }
    return c;
  }

  void put(int x, int y, std::array<std::uint8_t, 3> col) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
    rgb_[i] = col[0];
    rgb_[i + 1] = col[1];
    rgb_[i + 2] = col[2];
  }

  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> col) {
    const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))));
    for (int k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      put(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), col);
    }
  }

  void rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> col, bool filled) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (filled || x == x0 || x == x1 || y == y0 || y == y1) put(x, y, col);
  }

  void save(const std::filesystem::path& path) const { write_rgb_png(path, w_, h_, rgb_); }

 private:
  int w_, h_;
  std::vector<std::uint8_t> rgb_;
};

inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette = {{
    {128, 128, 128}, {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}}};

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Phantom cohort in dataset layout plus ground_truth_transforms.csv
/// (subject frame -> reference frame, first two rows).
inline void cmd_synth(const PipelineConfig& cfg) {
  if (cfg.count < 1) throw UsageError("synth needs --count >= 1");
  if (cfg.width < 16 || cfg.height < 16) throw UsageError("synth frame must be at least 16x16");
  CohortOptions opt;
  opt.n = cfg.count;
  opt.seed = cfg.seed;
  opt.width = cfg.width;
  opt.height = cfg.height;
  opt.reference_id = cfg.reference_id;
  opt.speckle_sigma = cfg.speckle;
  detail::ensure_dir(cfg.output);

  const auto cohort = generate_cohort(opt);
  std::string gt = "subject_id,m00,m01,m02,m10,m11,m12\n";
  for (const auto& s : cohort) {
    const std::string id = s.record.id.str();
    write_image(cfg.output / (id + ".png"), s.record.image);
    write_landmarks(cfg.output / (id + ".csv"), s.record.landmarks);
    write_mask(cfg.output / (id + "_mask.png"), *s.record.skull_mask);
    const Affine2D& t = s.ground_truth;
    gt += detail::csv_row({id, format_double(t(0, 0)), format_double(t(0, 1)), format_double(t(0, 2)),
                           format_double(t(1, 0)), format_double(t(1, 1)), format_double(t(1, 2))});
  }
  write_text(cfg.output / "ground_truth_transforms.csv", gt);
}

// ---------------------------------------------------------------------------
// segment / fit

/// Fallback skull masks for every subject: <id>_mask.png.
inline void cmd_segment(const PipelineConfig& cfg) {
  const auto cohort = load_cohort(cfg.input);
  detail::ensure_dir(cfg.output);
  std::vector<std::string> failures(cohort.size());
  detail::parallel_for(cohort.size(), cfg.jobs, [&](std::size_t i) {
    try {
      write_mask(cfg.output / (cohort[i].id.str() + "_mask.png"), fallback_skull_mask(cohort[i].image));
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (failures[i].empty()) continue;
    if (!cfg.keep_going) throw Error(ErrorCode::EmptyMask, cohort[i].id.str() + ": " + failures[i]);
    warn("subject " + cohort[i].id.str() + " skipped: " + failures[i]);
  }
}

/// Robust skull ellipse per subject: fits.csv plus <id>_fit.png overlays
/// (mask inliers green, outliers red, fitted ellipse yellow).
inline void cmd_fit(const PipelineConfig& cfg) {
  const auto cohort = load_cohort(cfg.input);
  detail::ensure_dir(cfg.output);
  std::vector<std::string> rows(cohort.size()), failures(cohort.size());
  detail::parallel_for(cohort.size(), cfg.jobs, [&](std::size_t i) {
    try {
      const auto& rec = cohort[i];
      const PointSet2D pts = mask_to_points(skull_mask_of(rec));
      const RobustFitReport fit = robust_fit_ellipse(pts);
      const EllipseParams& p = fit.params;
      rows[i] = detail::csv_row({std::to_string(rec.id.subject), std::to_string(rec.id.scan),
                                 format_double(p.a), format_double(p.b), format_double(p.x0),
                                 format_double(p.y0), format_double(p.theta),
                                 std::to_string(pts.size()), std::to_string(fit.inlier_count()),
                                 fit.converged ? "1" : "0"});
      auto canvas = detail::Canvas::from_gray(rec.image);
      for (std::size_t k = 0; k < pts.size(); ++k)
        canvas.put(static_cast<int>(pts[k].x), static_cast<int>(pts[k].y),
                   fit.inlier_mask[k] ? std::array<std::uint8_t, 3>{0, 200, 0}
                                      : std::array<std::uint8_t, 3>{220, 0, 0});
      const PointSet2D outline = sample_boundary(p, 720);
      for (std::size_t k = 0; k < outline.size(); ++k) {
        const auto& a = outline[k];
        const auto& b = outline[(k + 1) % outline.size()];
        canvas.line(a.x, a.y, b.x, b.y, {255, 220, 0});
      }
      canvas.save(cfg.output / (rec.id.str() + "_fit.png"));
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });
  std::string out = "subject_id,scan_index,a,b,x0,y0,theta,points,inliers,converged\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (!failures[i].empty()) {
      if (!cfg.keep_going) throw Error(ErrorCode::DegenerateInput, cohort[i].id.str() + ": " + failures[i]);
      warn("subject " + cohort[i].id.str() + " skipped: " + failures[i]);
      continue;
    }
    out += rows[i];
  }
  write_text(cfg.output / "fits.csv", out);
}

// ---------------------------------------------------------------------------
// register

/// Registers every subject to the reference with each requested method.
/// Layout: <output>/<method>/<id>_registered.<ext|csv>, <id>_transform.txt,
/// and <output>/manifest.csv. The reference itself is written with its
/// orientation transform so that maps include it.
inline void cmd_register(const PipelineConfig& cfg) {
  cfg.validate();
  const auto cohort = load_cohort(cfg.input);
  const SubjectRecord& ref_raw = select_reference(cohort, cfg.reference_id);
  const detail::Oriented ref = detail::orient(ref_raw);
  const PreparedReference prepared = prepare_reference(ref.record);
  const int w = ref_raw.image.width();
  const int h = ref_raw.image.height();
  detail::ensure_dir(cfg.output);
  for (auto m : cfg.methods) {
    const auto dir = cfg.output / detail::method_dir_name(m);
    save_registered(ref_raw, ref.flip, w, h, dir, cfg.format);
  }

  std::vector<const SubjectRecord*> todo;
  for (const auto& rec : cohort)
    if (&rec != &ref_raw) todo.push_back(&rec);

  struct Outcome {
    std::vector<std::string> rows;
    std::optional<Error> error;
  };
  std::vector<Outcome> outcomes(todo.size());
  std::atomic<bool> stop{false};
  detail::parallel_for(todo.size(), cfg.jobs, [&](std::size_t i) {
    if (stop) return;
    const SubjectRecord& rec = *todo[i];
    try {
      const detail::Oriented mov = detail::orient(rec);
      for (auto m : cfg.methods) {
        RegistrationResult r = run_method(m, mov.record, prepared, cfg.refine);
        const Affine2D total = compose(r.transform, mov.flip);
        save_registered(rec, total, w, h, cfg.output / detail::method_dir_name(m), cfg.format);
        const auto& tr = r.loss_trace;
        outcomes[i].rows.push_back(detail::csv_row(
            {std::to_string(rec.id.subject), std::to_string(rec.id.scan), std::string(method_label(m)),
             "ok", r.converged ? "1" : "0", mov.mirrored ? "1" : "0",
             std::to_string(tr.size()), tr.empty() ? "" : format_double(tr.front()),
             tr.empty() ? "" : format_double(tr.back())}));
      }
    } catch (const Error& e) {
      outcomes[i].error = e;
    } catch (const std::exception& e) {
      outcomes[i].error = Error(ErrorCode::InvalidArgument, e.what());
    }
    if (outcomes[i].error && !cfg.keep_going) stop = true;
  });

  std::string manifest = "subject_id,scan_index,method,status,converged,mirrored,trace_length,initial_loss,final_loss\n";
  for (std::size_t i = 0; i < todo.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.error) {
      if (!cfg.keep_going)
        throw Error(o.error->code(), "subject " + todo[i]->id.str() + ": " + o.error->what());
      warn("subject " + todo[i]->id.str() + " skipped: " + o.error->what());
      manifest += detail::csv_row({std::to_string(todo[i]->id.subject), std::to_string(todo[i]->id.scan),
                                   "", "failed", "", "", "", "", ""});
      continue;
    }
    for (const auto& row : o.rows) manifest += row;
  }
  write_text(cfg.output / "manifest.csv", manifest);
}

// ---------------------------------------------------------------------------
// maps

/// Registered landmark sets of one method directory, sorted by id.
inline std::vector<std::pair<SubjectId, LandmarkSet>> load_registered_landmarks(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  const std::string suffix = "_registered";
  std::vector<std::pair<SubjectId, LandmarkSet>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (!entry.is_regular_file() || p.extension() != ".csv") continue;
    const std::string stem = p.stem().string();
    if (stem.size() <= suffix.size() || stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const auto id = SubjectId::parse(stem.substr(0, stem.size() - suffix.size()));
    if (!id) continue;
    out.emplace_back(*id, read_landmarks(p));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

/// Probability maps per method and structure:
/// <output>/<method>/<structure>_map.png, _map.csv and _overlay.png.
inline void cmd_maps(const PipelineConfig& cfg) {
  cfg.validate();
  std::vector<Structure> structures;
  if (cfg.structures.empty()) {
    for (Structure s : kAllStructures)
      if (has_area(s)) structures.push_back(s);
  } else {
    for (Structure s : cfg.structures) {
      if (!has_area(s)) {
        warn(std::string(structure_name(s)) + " has only " + std::to_string(expected_points(s)) +
             " landmarks; no map is built for it");
        continue;
      }
      structures.push_back(s);
    }
  }

  for (auto m : cfg.methods) {
    const auto in_dir = cfg.input / detail::method_dir_name(m);
    const auto out_dir = cfg.output / detail::method_dir_name(m);
    const auto subjects = load_registered_landmarks(in_dir);
    if (subjects.empty()) throw Error(ErrorCode::EmptyInput, "no registered landmarks in " + in_dir.string());
    const auto ref_paths = registered_paths(SubjectId{cfg.reference_id, 0}, in_dir, cfg.format);
    if (!std::filesystem::exists(ref_paths.image))
      throw Error(ErrorCode::IoError, "registered reference image missing: " + ref_paths.image.string());
    const GrayImage background = read_image(ref_paths.image);
    std::vector<LandmarkSet> sets;
    for (const auto& [id, lm] : subjects) sets.push_back(lm);
    detail::ensure_dir(out_dir);

    std::vector<std::optional<std::string>> failures(structures.size());
    detail::parallel_for(structures.size(), cfg.jobs, [&](std::size_t k) {
      try {
        const Structure s = structures[k];
        const StructureMap sm = build_structure_map(sets, s, background.width(), background.height(), cfg.alpha);
        for (const auto& skip : sm.skipped)
          warn(std::string(method_label(m)) + "/" + std::string(structure_name(s)) + ": subject " +
               subjects[skip.index].first.str() + " skipped: " + skip.reason);
        const std::string base(structure_name(s));
        write_image(out_dir / (base + "_map.png"), map_to_image(sm.map));
        write_map_csv(out_dir / (base + "_map.csv"), sm.map);
        write_heatmap_overlay(out_dir / (base + "_overlay.png"), sm.map, background);
      } catch (const std::exception& e) {
        failures[k] = e.what();
      }
    });
    for (std::size_t k = 0; k < structures.size(); ++k)
      if (failures[k]) throw Error(ErrorCode::IoError, std::string(structure_name(structures[k])) + ": " + *failures[k]);
  }
}

// ---------------------------------------------------------------------------
// evaluate

inline constexpr std::string_view kOriginalLabel = "Original";

struct MetricRow {
  SubjectId id;
  std::string method;
  std::string structure;
  std::string metric;
  double value = 0.0;
};

namespace detail {

inline void append_structure_metrics(std::vector<MetricRow>& rows, const SubjectId& id,
                                     const std::string& method, const LandmarkSet& moving,
                                     const LandmarkSet& fixed, int w, int h, AlphaPolicy alpha) {
  for (Structure s : kAllStructures) {
    if (!moving.has(s) || !fixed.has(s)) continue;
    const auto& p = moving.get(s);
    const auto& q = fixed.get(s);
    const std::string name(structure_name(s));
    rows.push_back({id, method, name, "hausdorff", hausdorff(p, q)});
    rows.push_back({id, method, name, "avg_min_euclidean", avg_min_euclidean(p, q)});
    if (has_area(s)) {
      try {
        rows.push_back({id, method, name, "polygon_dsc", polygon_dsc(p, q, w, h, alpha)});
      } catch (const Error& e) {
        warn("subject " + id.str() + " " + method + "/" + name + ": no DSC: " + e.what());
      }
    }
  }
}

}  // namespace detail

/// Per-subject metrics for the unregistered baseline and every method,
/// computed from the original images through the stored transforms, plus
/// paired Wilcoxon comparisons between requested methods.
/// Writes metrics.csv and comparisons.csv.
inline void cmd_evaluate(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.registered.empty()) throw UsageError("evaluate needs --registered <register output dir>");
  const auto cohort = load_cohort(cfg.input);
  const SubjectRecord& ref = select_reference(cohort, cfg.reference_id);
  const int w = ref.image.width();
  const int h = ref.image.height();
  const SsimOptions ssim_opts;

  struct MethodRef {
    std::string label;
    std::filesystem::path dir;
    Affine2D ref_transform;
    LandmarkSet ref_landmarks;
    GrayImage ref_image;
  };
  std::vector<MethodRef> methods;
  for (auto m : cfg.methods) {
    MethodRef mr;
    mr.label = method_label(m);
    mr.dir = cfg.registered / detail::method_dir_name(m);
    mr.ref_transform = read_transform(registered_paths(ref.id, mr.dir).transform);
    mr.ref_landmarks = warp_landmarks(mr.ref_transform, ref.landmarks);
    mr.ref_image = warp_image(ref.image, mr.ref_transform, w, h);
    methods.push_back(std::move(mr));
  }

  std::vector<const SubjectRecord*> todo;
  for (const auto& rec : cohort)
    if (&rec != &ref) todo.push_back(&rec);
  std::vector<std::vector<MetricRow>> per_subject(todo.size());
  std::vector<std::optional<Error>> errors(todo.size());
  detail::parallel_for(todo.size(), cfg.jobs, [&](std::size_t i) {
    const SubjectRecord& rec = *todo[i];
    auto& rows = per_subject[i];
    try {
      const std::string original(kOriginalLabel);
      detail::append_structure_metrics(rows, rec.id, original, rec.landmarks, ref.landmarks, w, h, cfg.alpha);
      if (rec.image.width() == w && rec.image.height() == h)
        rows.push_back({rec.id, original, "image", "ssim", ssim(rec.image, ref.image, ssim_opts)});
      for (const auto& mr : methods) {
        const auto tpath = registered_paths(rec.id, mr.dir).transform;
        if (!std::filesystem::exists(tpath)) {
          if (!cfg.keep_going) throw Error(ErrorCode::IoError, "missing " + tpath.string());
          warn("subject " + rec.id.str() + " has no " + mr.label + " result; skipped");
          continue;
        }
        const Affine2D t = read_transform(tpath);
        detail::append_structure_metrics(rows, rec.id, mr.label, warp_landmarks(t, rec.landmarks),
                                         mr.ref_landmarks, w, h, cfg.alpha);
        rows.push_back({rec.id, mr.label, "image", "ssim", ssim(warp_image(rec.image, t, w, h), mr.ref_image, ssim_opts)});
      }
    } catch (const Error& e) {
      errors[i] = e;
    } catch (const std::exception& e) {
      errors[i] = Error(ErrorCode::InvalidArgument, e.what());
    }
  });

  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (errors[i]) throw Error(errors[i]->code(), "subject " + todo[i]->id.str() + ": " + errors[i]->what());
    rows.insert(rows.end(), per_subject[i].begin(), per_subject[i].end());
  }

  detail::ensure_dir(cfg.output);
  std::string metrics_csv = "subject_id,scan_index,method,structure,metric,value\n";
  for (const auto& r : rows)
    metrics_csv += detail::csv_row({std::to_string(r.id.subject), std::to_string(r.id.scan), r.method,
                                    r.structure, r.metric, format_double(r.value)});
  write_text(cfg.output / "metrics.csv", metrics_csv);

  // (method, structure, metric) -> subject -> value
  std::map<std::tuple<std::string, std::string, std::string>, std::map<SubjectId, double>> table;
  std::vector<std::pair<std::string, std::string>> keys;  // (structure, metric) in first-seen order
  for (const auto& r : rows) {
    table[{r.method, r.structure, r.metric}][r.id] = r.value;
    if (std::find(keys.begin(), keys.end(), std::pair{r.structure, r.metric}) == keys.end())
      keys.emplace_back(r.structure, r.metric);
  }
  std::string cmp = "method_a,method_b,metric,structure,p_value,stars\n";
  for (std::size_t a = 0; a < methods.size(); ++a)
    for (std::size_t b = a + 1; b < methods.size(); ++b)
      for (const auto& [structure, metric] : keys) {
        const auto& va = table[{methods[a].label, structure, metric}];
        const auto& vb = table[{methods[b].label, structure, metric}];
        std::vector<double> x, y;
        for (const auto& [id, v] : va)
          if (auto it = vb.find(id); it != vb.end()) {
            x.push_back(v);
            y.push_back(it->second);
          }
        try {
          const WilcoxonResult res = wilcoxon_signed_rank_test(x, y);
          cmp += detail::csv_row({methods[a].label, methods[b].label, metric, structure,
                                  format_double(res.p_value), significance_stars(res.p_value)});
        } catch (const Error& e) {
          warn(methods[a].label + " vs " + methods[b].label + " " + structure + "/" + metric + ": " + e.what());
        }
      }
  write_text(cfg.output / "comparisons.csv", cmp);
}

// ---------------------------------------------------------------------------
// report

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) throw Error(ErrorCode::EmptyInput, "quantile of empty data");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "subject_id,scan_index,method,structure,metric,value")
    throw Error(ErrorCode::ParseError, path.string() + ": unexpected header");
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = detail::split(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cols.size() != 6) throw Error(ErrorCode::ParseError, where + ": expected 6 columns");
    MetricRow r;
    r.id = {static_cast<int>(detail::parse_number(cols[0], where)),
            static_cast<int>(detail::parse_number(cols[1], where))};
    r.method = cols[2];
    r.structure = cols[3];
    r.metric = cols[4];
    r.value = detail::parse_number(cols[5], where);
    rows.push_back(std::move(r));
  }
  return rows;
}

/// summary.csv (median and quartiles per method/structure/metric), a
/// markdown table and one box plot per (metric, structure). Boxes follow
/// the method order of summary.csv, colored as listed in report.md.
inline void cmd_report(const PipelineConfig& cfg) {
  const auto rows = read_metrics_csv(cfg.input / "metrics.csv");
  std::vector<std::string> method_order;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::vector<double>>> groups;
  std::vector<std::pair<std::string, std::string>> group_order;
  for (const auto& r : rows) {
    if (std::find(method_order.begin(), method_order.end(), r.method) == method_order.end())
      method_order.push_back(r.method);
    const std::pair key{r.metric, r.structure};
    if (!groups.count(key)) group_order.push_back(key);
    groups[key][r.method].push_back(r.value);
  }
  detail::ensure_dir(cfg.output);

  std::string summary = "method,structure,metric,n,median,q1,q3,min,max\n";
  std::string md = "| method | structure | metric | n | median | q1 | q3 |\n|---|---|---|---|---|---|---|\n";
  for (const auto& key : group_order) {
    auto& by_method = groups[key];
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (auto& [m, v] : by_method) {
      std::sort(v.begin(), v.end());
      lo = std::min(lo, v.front());
      hi = std::max(hi, v.back());
    }
    for (const auto& m : method_order) {
      auto it = by_method.find(m);
      if (it == by_method.end()) continue;
      const auto& v = it->second;
      const std::string n = std::to_string(v.size());
      const std::string med = format_double(quantile_sorted(v, 0.5));
      const std::string q1 = format_double(quantile_sorted(v, 0.25));
      const std::string q3 = format_double(quantile_sorted(v, 0.75));
      summary += detail::csv_row({m, key.second, key.first, n, med, q1, q3, format_double(v.front()),
                                  format_double(v.back())});
      md += "| " + m + " | " + key.second + " | " + key.first + " | " + n + " | " + med + " | " + q1 +
            " | " + q3 + " |\n";
    }

    // Box plot: whiskers min..max, box q1..q3, median line.
    const int W = 80 + 70 * static_cast<int>(method_order.size());
    const int H = 320;
    const int top = 20, bottom = H - 20;
    detail::Canvas canvas(W, H);
    const double span = hi > lo ? hi - lo : 1.0;
    auto ypix = [&](double v) { return static_cast<int>(std::lround(bottom - (v - lo) / span * (bottom - top))); };
    canvas.line(40, top, 40, bottom, {0, 0, 0});
    canvas.line(40, bottom, W - 20, bottom, {0, 0, 0});
    for (std::size_t k = 0; k < method_order.size(); ++k) {
      auto it = by_method.find(method_order[k]);
      if (it == by_method.end()) continue;
      const auto& v = it->second;
      const auto col = detail::kPalette[k % detail::kPalette.size()];
      const int cx = 80 + 70 * static_cast<int>(k);
      const int q1 = ypix(quantile_sorted(v, 0.25)), q3 = ypix(quantile_sorted(v, 0.75));
      canvas.line(cx, ypix(v.front()), cx, ypix(v.back()), {0, 0, 0});
      canvas.rect(cx - 20, q3, cx + 20, q1, col, true);
      canvas.rect(cx - 20, q3, cx + 20, q1, {0, 0, 0}, false);
      const int med = ypix(quantile_sorted(v, 0.5));
      canvas.line(cx - 20, med, cx + 20, med, {0, 0, 0});
    }
    canvas.save(cfg.output / ("boxplot_" + key.first + "_" + key.second + ".png"));
  }
  write_text(cfg.output / "summary.csv", summary);

  std::string legend = "# Registration evaluation summary\n\nBox colors, left to right:\n\n";
  for (std::size_t k = 0; k < method_order.size(); ++k) {
    const auto c = detail::kPalette[k % detail::kPalette.size()];
    legend += "- " + method_order[k] + ": rgb(" + std::to_string(c[0]) + ", " + std::to_string(c[1]) + ", " +
              std::to_string(c[2]) + ")\n";
  }
  const auto cmp_path = cfg.input / "comparisons.csv";
  std::string cmp_md;
  if (std::filesystem::exists(cmp_path)) {
    std::ifstream in(cmp_path, std::ios::binary);
    std::string line;
    std::getline(in, line);
    cmp_md = "\n## Paired comparisons\n\n| method_a | method_b | metric | structure | p | stars |\n|---|---|---|---|---|---|\n";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::string row = "|";
      for (const auto& c : detail::split(line)) row += " " + c + " |";
      cmp_md += row + "\n";
    }
  }
  write_text(cfg.output / "report.md", legend + "\n## Medians\n\n" + md + cmp_md);
}

}  // namespace fetalreg
