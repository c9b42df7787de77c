// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "fetalreg/pipeline.hpp"

using namespace fetalreg;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(int n, bool ok, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", n, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double angle_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), kPi);
  return std::min(d, kPi - d);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

const EllipseParams kTruth{150, 100, 400, 270, 0.3};

bool within_tolerance(const EllipseParams& p) {
  return distance({p.x0, p.y0}, {kTruth.x0, kTruth.y0}) <= 1.0 && std::abs(p.a - kTruth.a) <= 0.01 * kTruth.a &&
         std::abs(p.b - kTruth.b) <= 0.01 * kTruth.b && angle_gap(p.theta, kTruth.theta) <= kPi / 180;
}

PointSet2D noisy_boundary(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 0.5);
  PointSet2D pts = sample_boundary(kTruth, 200);
  for (auto& p : pts) p = {p.x + g(rng), p.y + g(rng)};
  return pts;
}

void criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> axis(5, 400), cx(0, 800), cy(0, 540), ang(-kPi, kPi);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const EllipseParams p = make_ellipse(axis(rng), axis(rng), cx(rng), cy(rng), ang(rng));
    const EllipseCoeffs k = params_to_coeffs(p);
    for (const auto& q : sample_boundary(p, 64))
      worst = std::max(worst, std::abs(eval_conic(k, q.x, q.y)) / (p.a * p.a * p.b * p.b));
  }
  const double dt = seconds_since(t0);
  report(1, worst <= 1e-9 && dt < 5, "ellipse algebra round trip", fmt("max |f|/(a^2 b^2) = %.3g", worst) + fmt(", %.2f s", dt));
}

void criterion2() {
  const auto t0 = Clock::now();
  int pass = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(2000 + seed);
    pass += within_tolerance(fit_ellipse(noisy_boundary(rng)).params);
  }
  const double dt = seconds_since(t0);
  report(2, pass >= 99 && dt < 10, "fit recovery under noise", std::to_string(pass) + "/100 seeds" + fmt(", %.2f s", dt));
}

void criterion3() {
  int robust_pass = 0, plain_fail = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(3000 + seed);
    PointSet2D pts = noisy_boundary(rng);
    std::uniform_real_distribution<double> ux(0, 800), uy(0, 540);
    for (int i = 0; i < 20; ++i) pts.push_back({ux(rng), uy(rng)});
    std::shuffle(pts.begin(), pts.end(), rng);
    robust_pass += within_tolerance(robust_fit_ellipse(pts).params);
    plain_fail += !within_tolerance(fit_ellipse(pts).params);
  }
  report(3, robust_pass >= 99 && plain_fail >= 80, "robust trimming with 10% outliers",
         "robust " + std::to_string(robust_pass) + "/100 pass, single fit " + std::to_string(plain_fail) +
             "/100 fail");
}

void criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> axis(5, 400), pos(-200, 1000), ang(-4, 4);
  double worst = 0;
  const Point2 want[5] = {{400, 270}, {800, 270}, {0, 270}, {400, 540}, {400, 0}};
  for (int i = 0; i < 1000; ++i) {
    const EllipseParams p = make_ellipse(axis(rng), axis(rng), pos(rng), pos(rng), ang(rng));
    const Affine2D f = ellipse_to_canonical(p, 800, 540);
    const Point2 src[5] = {{p.x0, p.y0}, ellipse_point(p, 0), ellipse_point(p, kPi), ellipse_point(p, kPi / 2),
                           ellipse_point(p, -kPi / 2)};
    for (int k = 0; k < 5; ++k) worst = std::max(worst, distance(f.apply(src[k]), want[k]));
  }
  report(4, worst <= 1e-9, "centering transform contract", fmt("max endpoint error %.3g px", worst));
}

void criterion5() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0, 600);
  std::uniform_int_distribution<int> len(1, 40);
  bool exact = true, ordered = true;
  for (int i = 0; i < 1000; ++i) {
    PointSet2D p(len(rng)), q(len(rng));
    for (auto& v : p) v = {u(rng), u(rng)};
    for (auto& v : q) v = {u(rng), u(rng)};
    double h = 0, sp = 0, sq = 0;
    for (const auto& a : p) {
      double m = 1e300;
      for (const auto& b : q) m = std::min(m, std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)));
      h = std::max(h, m);
      sp += m;
    }
    for (const auto& b : q) {
      double m = 1e300;
      for (const auto& a : p) m = std::min(m, std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)));
      h = std::max(h, m);
      sq += m;
    }
    const double e = 0.5 * (sp / p.size() + sq / q.size());
    exact = exact && hausdorff(p, q) == h && avg_min_euclidean(p, q) == e;
    ordered = ordered && avg_min_euclidean(p, q) <= hausdorff(p, q);
  }
  const PointSet2D a = {{0, 0}, {1, 0}}, b = {{0, 0}, {3, 0}};
  const bool hand = hausdorff(a, b) == 2.0 && avg_min_euclidean(a, b) == 0.75;
  report(5, exact && ordered && hand, "point-set metric oracles",
         std::string("brute force ") + (exact ? "exact" : "MISMATCH") + ", avg<=H " + (ordered ? "yes" : "NO") +
             ", hand example " + (hand ? "(2, 0.75)" : "wrong"));
}

void criterion6() {
  auto square = [](double x, double y) { return PointSet2D{{x, y}, {x + 50, y}, {x + 50, y + 50}, {x, y + 50}}; };
  const double same = polygon_dsc(square(20, 20), square(20, 20), 120, 100);
  const double disjoint = polygon_dsc(square(10, 20), square(60, 20), 120, 100);
  const double half = polygon_dsc(square(20, 20), square(45, 20), 120, 100);
  report(6, same == 1.0 && disjoint == 0.0 && std::abs(half - 0.5) <= 0.02, "polygon DSC sanity",
         fmt("identical %.4f", same) + fmt(", disjoint %.4f", disjoint) + fmt(", half overlap %.4f", half));
}

void criterion7() {
  const GrayImage img = generate_phantom(PhantomSpec{}).image;
  const double self = ssim(img, img);
  SsimOptions unit;
  unit.data_range = 1.0;
  const double constant = ssim(GrayImage(64, 64, 0.25), GrayImage(64, 64, 0.5), unit);
  auto [mn, mx] = std::minmax_element(img.data().begin(), img.data().end());
  const double L = *mx - *mn;
  SsimOptions fixed;
  fixed.data_range = L;
  std::vector<double> sweep;
  for (double s : {0.05, 0.1, 0.2}) {
    std::mt19937_64 rng(707);
    std::normal_distribution<double> g(0, s * L);
    GrayImage n = img;
    for (auto& v : n.data()) v += g(rng);
    sweep.push_back(ssim(img, n, fixed));
  }
  const bool mono = sweep[0] < 1.0 && sweep[1] < sweep[0] && sweep[2] < sweep[1];
  report(7, self == 1.0 && std::abs(constant - 0.8004) <= 1e-3 && mono, "SSIM",
         fmt("self %.17g", self) + fmt(", constant pair %.5f", constant) + fmt(", sweep %.4f", sweep[0]) +
             fmt(" > %.4f", sweep[1]) + fmt(" > %.4f", sweep[2]));
}

double enumerate_p(const std::vector<double>& d) {
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2;
  }
  double w = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w += rank[i];
  double below = 0, above = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) s += rank[i];
    below += s <= w + 1e-9;
    above += s >= w - 1e-9;
  }
  return std::min(1.0, 2 * std::min(below, above) / std::ldexp(1.0, static_cast<int>(n)));
}

void criterion8() {
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<int> len(5, 10), small(-5, 5);
  std::normal_distribution<double> g(0, 1);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<double> x(n), y(n, 0.0), d;
    for (int i = 0; i < n; ++i) {
      do x[i] = trial % 2 ? small(rng) : g(rng);
      while (x[i] == 0.0);
      d.push_back(x[i]);
    }
    worst = std::max(worst, std::abs(wilcoxon_signed_rank(x, y) - enumerate_p(d)));
  }
  const double p6 = wilcoxon_signed_rank({1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0});
  const bool stars = significance_stars(0.3) == "ns" && significance_stars(0.05) == "*" &&
                     significance_stars(0.0500001) == "ns" && significance_stars(0.01) == "**" &&
                     significance_stars(0.0100001) == "*" && significance_stars(0.001) == "***" &&
                     significance_stars(0.0010001) == "**" && significance_stars(1e-4) == "****" &&
                     significance_stars(0.0001001) == "***" && significance_stars(0.005) == "**";
  report(8, worst <= 1e-12 && p6 == 0.03125 && stars, "Wilcoxon signed-rank",
         fmt("max |exact - enumeration| %.3g", worst) + fmt(", n=6 all positive p=%.5f", p6) +
             ", star bands " + (stars ? "ok" : "WRONG"));
}

void criterion9() {
  const auto t0 = Clock::now();
  CohortOptions opt;
  opt.n = 51;
  const auto cohort = generate_cohort(opt);
  const SubjectRecord* ref = nullptr;
  for (const auto& s : cohort)
    if (s.record.id.subject == opt.reference_id) ref = &s.record;
  const PreparedReference prepared = prepare_reference(*ref);

  std::map<RegistrationMethod, std::vector<double>> skull;
  std::map<RegistrationMethod, std::map<Structure, std::vector<double>>> interior;
  int improved_pairs = 0, pairs = 0;
  for (const auto& s : cohort) {
    if (&s.record == ref) continue;
    std::map<RegistrationMethod, std::map<Structure, double>> per;
    for (RegistrationMethod m : kAllMethods) {
      const RegistrationResult r = run_method(m, s.record, prepared);
      const LandmarkSet moved = warp_landmarks(r.transform, s.record.landmarks);
      skull[m].push_back(hausdorff(moved.get(Structure::Skull), ref->landmarks.get(Structure::Skull)));
      for (Structure st : kInteriorStructures) {
        const double d = avg_min_euclidean(moved.get(st), ref->landmarks.get(st));
        interior[m][st].push_back(d);
        per[m][st] = d;
      }
    }
    for (Structure st : kInteriorStructures) {
      ++pairs;
      improved_pairs += per[RegistrationMethod::EllipsePlusAffine][st] <= per[RegistrationMethod::Ellipse][st];
    }
  }
  const double dt = seconds_since(t0);
  const double hE = median(skull[RegistrationMethod::Ellipse]);
  const double hEA = median(skull[RegistrationMethod::EllipsePlusAffine]);
  const double hAI = median(skull[RegistrationMethod::AffineReferenceEllipse]);
  const double hA = median(skull[RegistrationMethod::AffineIdentity]);
  int better = 0;
  std::string interior_detail;
  for (Structure st : kInteriorStructures) {
    const double e = median(interior[RegistrationMethod::Ellipse][st]);
    const double ea = median(interior[RegistrationMethod::EllipsePlusAffine][st]);
    better += ea < e;
    interior_detail += std::string(", ") + std::string(structure_name(st)) + fmt(" %.2f", e) + fmt("->%.2f", ea);
  }
  const bool order = hE <= hEA && hEA <= hAI && hAI <= hA;
  report(9, order && better >= 3 && dt < 600, "method ordering on the 50-pair phantom suite",
         fmt("skull median H: E %.2f", hE) + fmt(" <= E+A %.2f", hEA) + fmt(" <= AFF+I %.2f", hAI) +
             fmt(" <= AFF %.2f", hA) + "; E+A better on " + std::to_string(better) + "/4 interiors" +
             interior_detail + fmt("; %.0f s", dt));
  std::printf("     info: E+A <= E on %d/%d (pair, structure) cases\n", improved_pairs, pairs);
  for (const auto& [a, b] : {std::pair{RegistrationMethod::EllipsePlusAffine, RegistrationMethod::AffineIdentity},
                             std::pair{RegistrationMethod::Ellipse, RegistrationMethod::EllipsePlusAffine}}) {
    const double p = wilcoxon_signed_rank(skull[a], skull[b]);
    std::printf("     info: skull Hausdorff %s vs %s: p=%.3g %s\n", std::string(method_label(a)).c_str(),
                std::string(method_label(b)).c_str(), p, significance_stars(p).c_str());
  }
}

void criterion10() {
  const Phantom ph = generate_phantom(PhantomSpec{});
  const std::vector<LandmarkSet> same(50, ph.landmarks);
  const StructureMap sm = build_structure_map(same, Structure::Cerebellum, 800, 540);
  const BinaryMask hull = rasterize(concave_hull(ph.landmarks.get(Structure::Cerebellum)), 800, 540);
  bool plateau = sm.map.n_subjects() == 50;
  for (int y = 0; y < 540; ++y)
    for (int x = 0; x < 800; ++x) plateau = plateau && (sm.map.at(x, y) == 1.0) == hull.at(x, y);

  CohortOptions opt;
  opt.n = 50;
  opt.width = 400;
  opt.height = 270;
  std::vector<LandmarkSet> varied;
  for (const auto& s : generate_cohort(opt)) varied.push_back(warp_landmarks(s.ground_truth, s.record.landmarks));
  const StructureMap vm = build_structure_map(varied, Structure::Cerebellum, 400, 270);
  bool multiples = vm.map.n_subjects() == 50;
  std::size_t partial = 0;
  for (int y = 0; y < 270; ++y)
    for (int x = 0; x < 400; ++x) {
      const double v = vm.map.at(x, y);
      multiples = multiples && v == static_cast<double>(vm.map.count(x, y)) / 50.0 &&
                  std::abs(v * 50 - std::round(v * 50)) < 1e-9;
      partial += v > 0 && v < 1;
    }
  bool midline = false;
  try {
    build_structure_map(same, Structure::Midline, 800, 540);
  } catch (const Error& e) {
    midline = e.code() == ErrorCode::UnsupportedStructure;
  }
  report(10, plateau && multiples && midline, "probabilistic maps",
         std::string("plateau ") + (plateau ? "equals hull raster" : "DIFFERS") + ", values multiples of 1/50 " +
             (multiples ? "yes" : "NO") + " (" + std::to_string(partial) + " partial pixels), midline " +
             (midline ? "rejected" : "ACCEPTED"));
}

std::map<std::string, std::string> collect(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".csv" && ext != ".txt") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

void run_pipeline(const fs::path& root) {
  fs::remove_all(root);
  PipelineConfig cfg;
  cfg.count = 12;
  cfg.width = 400;
  cfg.height = 270;
  cfg.seed = 11;
  cfg.jobs = 2;
  cfg.output = root / "synth";
  cmd_synth(cfg);
  cfg.input = root / "synth";
  cfg.output = root / "registered";
  cmd_register(cfg);
  cfg.input = root / "registered";
  cfg.output = root / "maps";
  cmd_maps(cfg);
  cfg.input = root / "synth";
  cfg.registered = root / "registered";
  cfg.output = root / "evaluation";
  cmd_evaluate(cfg);
}

void criterion11() {
  const fs::path base = fs::temp_directory_path() / "fetalreg_acceptance";
  run_pipeline(base / "a");
  run_pipeline(base / "b");
  const auto a = collect(base / "a"), b = collect(base / "b");
  std::size_t transforms = 0, grids = 0;
  for (const auto& [name, _] : a) {
    transforms += name.find("_transform.txt") != std::string::npos;
    grids += name.find("_map.csv") != std::string::npos;
  }
  const bool same = a == b && transforms > 0 && grids > 0 && a.count("evaluation/metrics.csv");
  report(11, same, "pipeline determinism",
         std::to_string(a.size()) + " files compared (" + std::to_string(transforms) + " transforms, " +
             std::to_string(grids) + " map grids): " + (a == b ? "byte-identical" : "DIFFER"));
  fs::remove_all(base);
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                       criterion5, criterion6, criterion7, criterion8,
                                                       criterion9, criterion10, criterion11};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i) + 1, false, "threw", e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
