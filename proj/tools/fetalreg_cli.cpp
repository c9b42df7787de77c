// fetalreg: command-line driver for the registration pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "fetalreg/pipeline.hpp"

namespace {

using namespace fetalreg;

struct RawOptions {
  std::string input, output, registered;
  int reference_id = kDefaultReferenceId;
  std::vector<std::string> methods;
  std::vector<std::string> structures;
  std::string alpha = "auto";
  int jobs = 1;
  std::uint64_t seed = 7;
  bool keep_going = false;
  std::string format = "png";
  int count = 50;
  int width = 800;
  int height = 540;
  double speckle = 0.1;
  RefineConfig refine;
};

PipelineConfig to_config(const RawOptions& raw) {
  PipelineConfig cfg;
  cfg.input = raw.input;
  cfg.output = raw.output;
  cfg.registered = raw.registered;
  cfg.reference_id = raw.reference_id;
  if (!raw.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : raw.methods) {
      const auto parsed = parse_method(m);
      if (!parsed) throw UsageError("unknown method '" + m + "' (expected E, E+A, AFF or AFF+I)");
      if (std::find(cfg.methods.begin(), cfg.methods.end(), *parsed) == cfg.methods.end())
        cfg.methods.push_back(*parsed);
    }
  }
  for (const auto& s : raw.structures) {
    const auto parsed = parse_structure(s);
    if (!parsed) throw UsageError("unknown structure '" + s + "'");
    cfg.structures.push_back(*parsed);
  }
  if (raw.alpha != "auto") {
    double a = 0.0;
    auto [ptr, ec] = std::from_chars(raw.alpha.data(), raw.alpha.data() + raw.alpha.size(), a);
    if (raw.alpha.empty() || ec != std::errc() || ptr != raw.alpha.data() + raw.alpha.size())
      throw UsageError("--alpha must be 'auto' or a number >= 0");
    cfg.alpha = a;
  }
  cfg.jobs = raw.jobs;
  cfg.seed = raw.seed;
  cfg.keep_going = raw.keep_going;
  cfg.format = raw.format == "jpeg" ? RasterFormat::Jpeg : RasterFormat::Png;
  cfg.count = raw.count;
  cfg.width = raw.width;
  cfg.height = raw.height;
  cfg.speckle = raw.speckle;
  cfg.refine = raw.refine;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* sub, RawOptions& raw, bool needs_input = true) {
  auto* in = sub->add_option("--input", raw.input, "Input directory");
  if (needs_input) in->required();
  sub->add_option("--output", raw.output, "Output directory")->required();
  sub->add_option("--reference-id", raw.reference_id, "Reference subject id")->capture_default_str();
  sub->add_option("--jobs", raw.jobs, "Worker threads")->capture_default_str();
  sub->add_option("--seed", raw.seed, "Random seed")->capture_default_str();
  sub->add_flag("--keep-going", raw.keep_going, "Skip failing subjects instead of stopping");
}

void add_methods(CLI::App* sub, RawOptions& raw) {
  sub->add_option("--methods", raw.methods, "Comma-separated subset of E,E+A,AFF,AFF+I")->delimiter(',');
}

void add_format(CLI::App* sub, RawOptions& raw) {
  sub->add_option("--format", raw.format, "Raster format of registered images")
      ->check(CLI::IsMember({"png", "jpeg"}))
      ->capture_default_str();
}

void add_alpha(CLI::App* sub, RawOptions& raw) {
  sub->add_option("--alpha", raw.alpha, "Concave hull alpha: 'auto' or a number >= 0 (0 = convex hull)")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fetal head ultrasound coarse registration pipeline"};
  app.set_config("--config", "", "Key/value configuration file");
  app.require_subcommand(1);
  RawOptions raw;

  auto* synth = app.add_subcommand("synth", "Write a synthetic phantom cohort");
  add_common(synth, raw, false);
  synth->add_option("--count", raw.count, "Number of subjects")->capture_default_str();
  synth->add_option("--width", raw.width, "Frame width")->capture_default_str();
  synth->add_option("--height", raw.height, "Frame height")->capture_default_str();
  synth->add_option("--speckle", raw.speckle, "Log-normal speckle sigma")->capture_default_str();

  auto* segment = app.add_subcommand("segment", "Fallback intensity-based skull masks");
  add_common(segment, raw);

  auto* fit = app.add_subcommand("fit", "Robust skull ellipse fits with overlay images");
  add_common(fit, raw);

  auto* reg = app.add_subcommand("register", "Register every subject to the reference");
  add_common(reg, raw);
  add_methods(reg, raw);
  add_format(reg, raw);
  reg->add_option("--max-iters", raw.refine.max_iters, "Refinement iterations per pyramid level")
      ->capture_default_str();
  reg->add_option("--step-size", raw.refine.step_size, "Initial refinement step (pixels)")->capture_default_str();
  reg->add_option("--pyramid-levels", raw.refine.pyramid_levels, "Pyramid levels")->capture_default_str();
  reg->add_option("--tolerance", raw.refine.convergence_tol, "Relative loss decrease ending a level")
      ->capture_default_str();

  auto* maps = app.add_subcommand("maps", "Probabilistic maps from registered landmarks");
  add_common(maps, raw);
  add_methods(maps, raw);
  add_format(maps, raw);
  add_alpha(maps, raw);
  maps->add_option("--structures", raw.structures, "Comma-separated structures (default: all with an area)")
      ->delimiter(',');

  auto* evaluate = app.add_subcommand("evaluate", "Metrics and paired comparisons");
  add_common(evaluate, raw);
  add_methods(evaluate, raw);
  add_alpha(evaluate, raw);
  evaluate->add_option("--registered", raw.registered, "Directory written by 'register'")->required();

  auto* report = app.add_subcommand("report", "Summary tables and box plots from evaluate output");
  add_common(report, raw);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const PipelineConfig cfg = to_config(raw);
    if (synth->parsed()) cmd_synth(cfg);
    else if (segment->parsed()) cmd_segment(cfg);
    else if (fit->parsed()) cmd_fit(cfg);
    else if (reg->parsed()) cmd_register(cfg);
    else if (maps->parsed()) cmd_maps(cfg);
    else if (evaluate->parsed()) cmd_evaluate(cfg);
    else if (report->parsed()) cmd_report(cfg);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
