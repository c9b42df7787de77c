#pragma once

// Synthetic ultrasound-like head phantoms with exact ground truth: a bright
// elliptical skull ring, interior structures at template positions,
// multiplicative log-normal speckle, optional shadowed ring arcs and
// extra-cranial clutter.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "fetalreg/dataset_io.hpp"
#include "fetalreg/geometry.hpp"
#include "fetalreg/hulls.hpp"
#include "fetalreg/transform.hpp"

namespace fetalreg {

struct ShadowArc {
  double begin = 0.0;        // canonical ellipse angle, radians
  double end = 0.0;
  double attenuation = 0.8;  // fraction of ring intensity removed
};

struct ClutterBlob {
  EllipseParams shape;
  double intensity = 120.0;
};

/// Landmark templates live in skull-normalized coordinates: (u, v) maps to
/// center + R(theta) (u a, v b). Negative u is anterior, positive v inferior.
using StructureTemplate = std::map<Structure, PointSet2D>;

inline StructureTemplate default_structure_template() {
  const double uc = -0.2;  // level of the posterior cavum corners
  const double vc = 0.95 * std::sqrt(1.0 - uc * uc);
  return {
      {Structure::Skull, {{-0.95, 0.0}, {0.95, 0.0}, {uc, -vc}, {uc, vc}}},
      {Structure::Thalami, {{0.02, 0.0}, {0.2, -0.2}, {0.2, 0.2}}},
      {Structure::Cerebellum,
       {{0.42, 0.0}, {0.66, 0.0}, {0.52, -0.3}, {0.52, 0.3}, {0.45, -0.16}, {0.6, -0.2},
        {0.45, 0.16}, {0.6, 0.2}}},
      {Structure::Cavum, {{-0.42, -0.07}, {-0.22, -0.07}, {-0.22, 0.07}, {-0.42, 0.07}}},
      {Structure::Sylvius, {{-0.25, 0.55}, {-0.05, 0.45}, {0.15, 0.58}}},
      {Structure::Midline, {{-0.9, 0.0}, {-0.42, 0.0}}},
  };
}

struct PhantomIntensities {
  double background = 25.0;
  double brain = 55.0;
  double ring = 210.0;
  double thalami = 120.0;
  double cerebellum = 150.0;
  double cavum = 12.0;
  double sylvius = 140.0;
  double midline = 95.0;
};

struct PhantomSpec {
  int width = 800;
  int height = 540;
  EllipseParams skull{200.0, 145.0, 400.0, 270.0, 0.0};
  double ring_thickness = 10.0;
  double ring_softness = 0.0;  // 0: flat band; 0.5: smooth ramp over the whole band
  StructureTemplate structures = default_structure_template();
  PhantomIntensities intensities;
  double speckle_sigma = 0.0;
  std::vector<ShadowArc> shadow_arcs;
  std::vector<ClutterBlob> clutter;
  std::uint64_t seed = 0;
};

struct Phantom {
  GrayImage image;
  LandmarkSet landmarks;
  BinaryMask mask;
};

namespace detail {

inline double angle_in(double t, double begin, double end) {
  // true if t lies on the counter-clockwise arc from begin to end
  const double two_pi = 2.0 * kPi;
  const double span = std::fmod(std::fmod(end - begin, two_pi) + two_pi, two_pi);
  const double off = std::fmod(std::fmod(t - begin, two_pi) + two_pi, two_pi);
  return off <= span;
}

inline Point2 template_to_pixel(const EllipseParams& skull, const Point2& uv) {
  const double c = std::cos(skull.theta);
  const double s = std::sin(skull.theta);
  const double x = uv.x * skull.a;
  const double y = uv.y * skull.b;
  return {skull.x0 + c * x - s * y, skull.y0 + s * x + c * y};
}

inline double segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

/// Analytic scene in the phantom's own (reference) coordinates.
class Scene {
 public:
  explicit Scene(const PhantomSpec& spec) : spec_(spec) {
    const double half = 0.5 * spec.ring_thickness;
    inner_ = {spec.skull.a - half, spec.skull.b - half, spec.skull.x0, spec.skull.y0, spec.skull.theta};
    outer_ = {spec.skull.a + half, spec.skull.b + half, spec.skull.x0, spec.skull.y0, spec.skull.theta};
    for (Structure s : {Structure::Cavum, Structure::Thalami, Structure::Cerebellum}) {
      auto it = spec.structures.find(s);
      if (it == spec.structures.end()) continue;
      PointSet2D px;
      for (const auto& uv : it->second) px.push_back(template_to_pixel(spec.skull, uv));
      polygons_.emplace_back(s, Polygon2D(convex_hull_ring(px)));
    }
    for (Structure s : {Structure::Sylvius, Structure::Midline}) {
      auto it = spec.structures.find(s);
      if (it == spec.structures.end()) continue;
      PointSet2D px;
      for (const auto& uv : it->second) px.push_back(template_to_pixel(spec.skull, uv));
      curves_.emplace_back(s, std::move(px));
    }
  }

  bool on_ring(const Point2& p) const {
    const Point2 c = to_canonical(spec_.skull, p.x, p.y);
    const double qo = c.x * c.x / (outer_.a * outer_.a) + c.y * c.y / (outer_.b * outer_.b);
    const double qi = c.x * c.x / (inner_.a * inner_.a) + c.y * c.y / (inner_.b * inner_.b);
    return qo < 1.0 && qi > 1.0;
  }

  double intensity(const Point2& p) const {
    const auto& I = spec_.intensities;
    const Point2 c = to_canonical(spec_.skull, p.x, p.y);
    const double qi = c.x * c.x / (inner_.a * inner_.a) + c.y * c.y / (inner_.b * inner_.b);
    const double qo = c.x * c.x / (outer_.a * outer_.a) + c.y * c.y / (outer_.b * outer_.b);
    if (qo < 1.0 && qi > 1.0) {
      // lambda runs 0 (inner edge) to 1 (outer edge) along the ray from the
      // center; intensity ramps up over `ring_softness` of the band at each edge.
      const double ri = 1.0 / std::sqrt(qi);
      const double ro = 1.0 / std::sqrt(qo);
      const double lambda = (1.0 - ri) / (ro - ri);
      double peak = I.ring;
      const double t = std::atan2(c.y / spec_.skull.b, c.x / spec_.skull.a);
      for (const auto& arc : spec_.shadow_arcs)
        if (angle_in(t, arc.begin, arc.end)) peak *= 1.0 - arc.attenuation;
      const double base = lambda < 0.5 ? interior(p) : exterior(p);
      double w = 1.0;
      if (spec_.ring_softness > 0.0) {
        const double t = std::min(1.0, std::min(lambda, 1.0 - lambda) / spec_.ring_softness);
        w = std::sin(0.5 * kPi * t);
      }
      return base + (peak - base) * w * w;
    }
    if (qo >= 1.0) return exterior(p);
    return interior(p);
  }

 private:
  double exterior(const Point2& p) const {
    double v = spec_.intensities.background;
    for (const auto& blob : spec_.clutter)
      if (normalized_residual(blob.shape, p) <= 0.0) v = blob.intensity;
    return v;
  }

  double interior(const Point2& p) const {
    const auto& I = spec_.intensities;
    double v = I.brain;
    for (const auto& [s, pts] : curves_) {
      const double width = s == Structure::Sylvius ? 4.0 : 1.5;
      for (std::size_t k = 0; k + 1 < pts.size(); ++k)
        if (segment_distance(p, pts[k], pts[k + 1]) <= width)
          v = s == Structure::Sylvius ? I.sylvius : I.midline;
    }
    for (const auto& [s, poly] : polygons_)
      if (contains(poly, p, 0.0)) {
        switch (s) {
          case Structure::Cavum: v = I.cavum; break;
          case Structure::Thalami: v = I.thalami; break;
          case Structure::Cerebellum: v = I.cerebellum; break;
          default: break;
        }
      }
    return v;
  }

  const PhantomSpec& spec_;
  EllipseParams inner_, outer_;
  std::vector<std::pair<Structure, Polygon2D>> polygons_;
  std::vector<std::pair<Structure, PointSet2D>> curves_;
};

inline void validate_spec(const PhantomSpec& spec) {
  if (spec.width < 16 || spec.height < 16)
    throw Error(ErrorCode::InvalidSpec, "phantom frame must be at least 16x16");
  if (!(spec.speckle_sigma >= 0.0)) throw Error(ErrorCode::InvalidSpec, "speckle_sigma must be >= 0");
  if (!(spec.ring_softness >= 0.0 && spec.ring_softness <= 0.5))
    throw Error(ErrorCode::InvalidSpec, "ring_softness must lie in [0, 0.5]");
  if (!(spec.ring_thickness > 0.0) || spec.ring_thickness >= 2.0 * spec.skull.b)
    throw Error(ErrorCode::InvalidSpec, "ring thickness must be positive and below the minor axis");
  if (!(spec.skull.a > 0.0) || !(spec.skull.b > 0.0))
    throw Error(ErrorCode::InvalidSpec, "skull axes must be positive");
  for (Structure s : kAllStructures) {
    auto it = spec.structures.find(s);
    if (it == spec.structures.end())
      throw Error(ErrorCode::InvalidSpec, "template lacks " + std::string(structure_name(s)));
    if (it->second.size() != expected_points(s))
      throw Error(ErrorCode::InvalidSpec,
                  "template for " + std::string(structure_name(s)) + " has wrong point count");
  }
}

/// The outer ring boundary mapped through `world` must keep a 5 px margin.
inline void check_inside_frame(const PhantomSpec& spec, const Affine2D& world) {
  const double half = 0.5 * spec.ring_thickness;
  const EllipseParams outer{spec.skull.a + half, spec.skull.b + half, spec.skull.x0, spec.skull.y0,
                            spec.skull.theta};
  constexpr double margin = 5.0;
  for (const auto& p : sample_boundary(outer, 720)) {
    const Point2 q = world.apply(p);
    if (!(q.x >= margin && q.y >= margin && q.x <= spec.width - 1 - margin &&
          q.y <= spec.height - 1 - margin))
      throw Error(ErrorCode::InvalidSpec, "skull ellipse is not inside the frame with a 5 px margin");
  }
}

/// Renders the scene after mapping it through `world` (scene -> pixel).
inline Phantom render(const PhantomSpec& spec, const Affine2D& world) {
  validate_spec(spec);
  check_inside_frame(spec, world);
  const Scene scene(spec);
  const Affine2D back = invert(world);

  Phantom out{GrayImage(spec.width, spec.height), {}, BinaryMask(spec.width, spec.height)};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const Point2 p = back.apply({static_cast<double>(x), static_cast<double>(y)});
      double v = scene.intensity(p);
      if (spec.speckle_sigma > 0.0) v *= std::exp(spec.speckle_sigma * normal(rng));
      out.image.at(x, y) = v;
      out.mask.set(x, y, scene.on_ring(p));
    }
  for (const auto& [s, uv] : spec.structures) {
    PointSet2D pts;
    for (const auto& q : uv) pts.push_back(world.apply(template_to_pixel(spec.skull, q)));
    out.landmarks.set(s, std::move(pts));
  }
  return out;
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec) {
  return detail::render(spec, Affine2D::identity());
}

struct PhantomPair {
  SubjectRecord reference;
  SubjectRecord moving;
  Affine2D ground_truth;  // moving pixel frame -> reference pixel frame
};

/// Reference from `spec`; moving re-rendered with the scene mapped through
/// `rel`. The moving record uses seed + 1 so the two speckle fields differ.
inline PhantomPair generate_pair(const PhantomSpec& spec, const Affine2D& rel) {
  Phantom ref = generate_phantom(spec);
  PhantomSpec moving_spec = spec;
  moving_spec.seed = spec.seed + 1;
  Phantom mov = detail::render(moving_spec, rel);
  PhantomPair pair;
  pair.reference = {SubjectId{kDefaultReferenceId, 0}, std::move(ref.image), std::move(ref.landmarks),
                    std::move(ref.mask)};
  pair.moving = {SubjectId{1, 0}, std::move(mov.image), std::move(mov.landmarks), std::move(mov.mask)};
  pair.ground_truth = invert(rel);
  return pair;
}

/// rel = translate(tx, ty) * rotate(angle) * scale(s), all about the origin
/// of `pivot` (so rotation/scaling keep `pivot` fixed before translating).
inline Affine2D similarity_about(const Point2& pivot, double angle, double scale, double tx, double ty) {
  return compose(Affine2D::translation(pivot.x + tx, pivot.y + ty),
                 compose(Affine2D::rotation(angle),
                         compose(Affine2D::scaling(scale, scale),
                                 Affine2D::translation(-pivot.x, -pivot.y))));
}

struct CohortOptions {
  int n = 50;
  std::uint64_t seed = 7;
  int width = 800;
  int height = 540;
  int reference_id = kDefaultReferenceId;
  double speckle_sigma = 0.1;
  double max_rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double max_translation = 40.0;  // px at 800 wide, scaled with the frame
  // Anatomical variability of the interior relative to the skull, in
  // skull-normalized units: common shift and per-landmark jitter.
  double anatomy_shift = 0.04;
  double anatomy_jitter = 0.01;
  int clutter_blobs = 6;
  bool shadows = true;
};

struct CohortSubject {
  SubjectRecord record;
  Affine2D ground_truth;  // subject pixel frame -> reference pixel frame
};

/// Base (reference) spec for a cohort frame: skull centered, filling about
/// half of the frame width.
inline PhantomSpec cohort_base_spec(const CohortOptions& opt) {
  PhantomSpec spec;
  spec.width = opt.width;
  spec.height = opt.height;
  const double k = opt.width / 800.0;
  spec.skull = {200.0 * k, 145.0 * k, 0.5 * (opt.width - 1), 0.5 * (opt.height - 1), 0.05};
  spec.ring_thickness = std::max(3.0, 10.0 * k);
  spec.ring_softness = 0.5;
  spec.speckle_sigma = opt.speckle_sigma;
  return spec;
}

/// Deterministic phantom cohort: ids 1..n; the reference subject (if in
/// range) is rendered with the identity, every other subject with a random
/// similarity, its own interior anatomy, clutter, shadows and speckle.
inline std::vector<CohortSubject> generate_cohort(const CohortOptions& opt) {
  if (opt.n < 1) throw Error(ErrorCode::InvalidSpec, "cohort size must be at least 1");
  const PhantomSpec base = cohort_base_spec(opt);
  const double k = opt.width / 800.0;
  std::vector<CohortSubject> out;
  for (int id = 1; id <= opt.n; ++id) {
    std::mt19937_64 rng(opt.seed * 1000003ULL + static_cast<std::uint64_t>(id));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    PhantomSpec spec = base;
    spec.seed = rng();

    const bool is_reference = id == opt.reference_id;
    // Interior anatomy: everything but the skull landmarks moves.
    const Point2 shift{opt.anatomy_shift * normal(rng), opt.anatomy_shift * normal(rng)};
    for (auto& [s, pts] : spec.structures) {
      if (s == Structure::Skull || is_reference) continue;
      for (auto& p : pts) {
        p.x += shift.x + opt.anatomy_jitter * normal(rng);
        p.y += shift.y + opt.anatomy_jitter * normal(rng);
      }
    }
    for (int c = 0; c < opt.clutter_blobs; ++c) {
      // Blobs hug the frame border, outside the skull.
      const double ang = kPi * unit(rng);
      const double r = std::max(opt.width, opt.height);
      const double cx = base.skull.x0 + 0.42 * r * std::cos(ang);
      const double cy = base.skull.y0 + 0.42 * r * std::sin(ang) * opt.height / opt.width;
      spec.clutter.push_back({canonicalize({(30.0 + 25.0 * std::abs(unit(rng))) * k,
                                            (12.0 + 8.0 * std::abs(unit(rng))) * k, cx, cy,
                                            kPi * unit(rng)}),
                              90.0 + 60.0 * std::abs(unit(rng))});
    }
    if (opt.shadows && !is_reference && unit(rng) > 0.0) {
      const double t0 = kPi * unit(rng);
      spec.shadow_arcs.push_back({t0, t0 + 0.6 + 0.4 * std::abs(unit(rng)), 0.7});
    }

    Affine2D rel;
    if (!is_reference) {
      const double angle = opt.max_rotation_deg * kPi / 180.0 * unit(rng);
      const double scale = opt.scale_min + (opt.scale_max - opt.scale_min) * 0.5 * (1.0 + unit(rng));
      const double tr = opt.max_translation * k * std::sqrt(std::abs(unit(rng)));
      const double tdir = kPi * unit(rng);
      rel = similarity_about({base.skull.x0, base.skull.y0}, angle, scale, tr * std::cos(tdir),
                             tr * std::sin(tdir));
    }
    Phantom ph = detail::render(spec, rel);
    out.push_back({SubjectRecord{SubjectId{id, 0}, std::move(ph.image), std::move(ph.landmarks),
                                 std::move(ph.mask)},
                   invert(rel)});
  }
  return out;
}

}  // namespace fetalreg
