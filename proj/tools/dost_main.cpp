// dost: vessel tracing from the command line.
//
// Exit codes: 0 ok, 2 bad configuration or arguments, 3 stage failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dost/io.hpp"
#include "dost/phantom.hpp"
#include "dost/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dost;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

PipelineConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  PipelineConfig cfg;
  if (!config_path.empty()) apply_config_text(cfg, read_text(config_path));
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

/// Loader failures are bad inputs for the single-stage commands.
template <class F>
auto load(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dost: vessel centerline tracing with open-curve snakes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic vessel volume with ground truth");
  std::string spec_path, phantom_out;
  std::vector<std::string> phantom_sets;
  phantom->add_option("--spec", spec_path, "Phantom spec file (key = value)");
  phantom->add_option("--set", phantom_sets, "Spec override key=value (repeatable)");
  phantom->add_option("-o,--out", phantom_out, "Output directory")->required();

  // propose
  auto* propose = app.add_subcommand("propose", "Initial curves from a distance map or ground truth");
  std::string prop_volume, prop_distance, prop_gt, prop_out, prop_config;
  std::vector<std::string> prop_sets;
  propose->add_option("--volume", prop_volume, "Volume (DVOL) giving the lattice when proposing from --gt");
  propose->add_option("--distance", prop_distance, "Centerline distance map (DVOL)");
  propose->add_option("--gt", prop_gt, "Ground-truth trace file");
  propose->add_option("--config", prop_config, "Config file");
  propose->add_option("--set", prop_sets, "Config override key=value (repeatable)");
  propose->add_option("-o,--out", prop_out, "Output curve file")->required();

  // trace
  auto* trace = app.add_subcommand("trace", "Grow snakes from initial curves");
  std::string tr_volume, tr_curves, tr_gt, tr_out, tr_config;
  std::vector<std::string> tr_sets;
  trace->add_option("--volume", tr_volume, "Volume (DVOL)")->required();
  trace->add_option("--curves", tr_curves, "Initial curve file")->required();
  trace->add_option("--gt", tr_gt, "Ground-truth trace file (oracle predictor)");
  trace->add_option("--config", tr_config, "Config file");
  trace->add_option("--set", tr_sets, "Config override key=value (repeatable)");
  trace->add_option("-o,--out", tr_out, "Output trace file")->required();

  // tree
  auto* tree = app.add_subcommand("tree", "Join traces into a loop-free vessel tree");
  std::string tree_volume, tree_traces, tree_out, tree_config;
  std::vector<std::string> tree_sets;
  tree->add_option("--volume", tree_volume, "Volume (DVOL)")->required();
  tree->add_option("--traces", tree_traces, "Trace file")->required();
  tree->add_option("--config", tree_config, "Config file");
  tree->add_option("--set", tree_sets, "Config override key=value (repeatable)");
  tree->add_option("-o,--out", tree_out, "Output tree file")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score a predicted trace file against ground truth");
  std::string ev_pred, ev_gt, ev_csv, ev_scan = "scan", ev_identity = "component";
  double ev_majority = 0.5;
  eval->add_option("--pred", ev_pred, "Predicted trace file")->required();
  eval->add_option("--gt", ev_gt, "Ground-truth trace file")->required();
  eval->add_option("--identity", ev_identity, "Predicted object identity: component or trace");
  eval->add_option("--majority", ev_majority, "Matched-point fraction for TP/FP");
  eval->add_option("--scan", ev_scan, "Scan name for the report row");
  eval->add_option("--csv", ev_csv, "Write the CSV report here instead of stdout");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "propose -> trace -> tree -> eval");
  PipelineInputs pin;
  std::string pl_config, pl_out, pl_manifest;
  std::vector<std::string> pl_sets;
  pipeline->add_option("--volume", pin.volume_path, "Volume (DVOL)");
  pipeline->add_option("--distance", pin.distance_path, "Centerline distance map (DVOL)");
  pipeline->add_option("--gt", pin.gt_path, "Ground-truth trace file");
  pipeline->add_option("--config", pl_config, "Config file");
  pipeline->add_option("--set", pl_sets, "Config override key=value (repeatable)");
  pipeline->add_option("-o,--out", pl_out, "Output directory");
  pipeline->add_option("--from-manifest", pl_manifest, "Repeat the run recorded in a manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*phantom) {
      PhantomSpec spec;
      if (!spec_path.empty()) apply_phantom_text(spec, read_text(spec_path));
      for (const auto& s : phantom_sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + s + "' is not key=value");
        set_phantom_field(spec, s.substr(0, eq), s.substr(eq + 1));
      }
      try {
        spec.validate();
      } catch (const Error& e) {
        throw ConfigError(std::string("spec: ") + e.what());
      }
      try {
        const GroundTruthTree gt = generate_tree(spec);
        const Volume3 vol = rasterize(gt, spec);
        const DistanceMap dist = distance_map(gt.traces, spec.geometry);
        fs::create_directories(phantom_out);
        write_dvol((fs::path(phantom_out) / "volume.dvol").string(), vol);
        write_trace_file((fs::path(phantom_out) / "gt.swc").string(), gt);
        write_dvol((fs::path(phantom_out) / "distance.dvol").string(), dist.volume());
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError("phantom", e.what());
      }
      std::cout << "wrote volume.dvol, gt.swc, distance.dvol to " << phantom_out << '\n';
    } else if (*propose) {
      const PipelineConfig cfg = load_config(prop_config, prop_sets);
      std::optional<DistanceMap> map;
      if (!prop_distance.empty()) {
        map = load("distance map", [&] { return DistanceMap(read_dvol(prop_distance)); });
      } else if (!prop_gt.empty()) {
        if (prop_volume.empty()) throw ConfigError("--gt needs --volume for the voxel lattice");
        const Volume3 vol = load("volume", [&] { return read_dvol(prop_volume); });
        const TraceTree gt = load("ground truth", [&] { return read_trace_file(prop_gt); });
        map = distance_map(gt.traces, vol.geometry());
        if (cfg.cuts_per_trace > 0) map = cut_distance_map(*map, gt.traces, cfg.cuts_per_trace, cfg.cut_len_mm);
      } else {
        throw ConfigError("no proposal source: give --distance or --gt");
      }
      std::vector<InitialCurve> curves;
      try {
        curves = extract_curves(skeletonize(binarize(*map, cfg.tau)), map->geometry(), cfg.min_curve_voxels);
      } catch (const std::exception& e) {
        throw StageError("propose", e.what());
      }
      ensure_parent_dir(prop_out);
      write_trace_file(prop_out, curves_to_tree(curves));
      std::cout << curves.size() << " curves\n";
    } else if (*trace) {
      const PipelineConfig cfg = load_config(tr_config, tr_sets);
      const Volume3 vol = load("volume", [&] { return read_dvol(tr_volume); });
      const TraceTree curves = load("curves", [&] { return read_trace_file(tr_curves); });
      std::optional<TraceTree> gt;
      if (!tr_gt.empty()) gt = load("ground truth", [&] { return read_trace_file(tr_gt); });
      const DirectionSet dirs(cfg.directions);
      auto predictor = make_predictor(cfg, dirs, gt ? &*gt : nullptr);
      TracingResult result;
      try {
        result = trace_all(tree_to_curves(curves), vol, *predictor, cfg.tracer, cfg.parallel);
      } catch (const std::exception& e) {
        throw StageError("trace", e.what());
      }
      ensure_parent_dir(tr_out);
      write_trace_file(tr_out, unlinked_tree(result.traces, result.touching));
      std::cout << result.traces.size() << " traces\n";
    } else if (*tree) {
      const PipelineConfig cfg = load_config(tree_config, tree_sets);
      const Volume3 vol = load("volume", [&] { return read_dvol(tree_volume); });
      const TraceTree traces = load("traces", [&] { return read_trace_file(tree_traces); });
      VesselTree out;
      try {
        const double spacing = cfg.tracer.resolved(vol.geometry()).resample_spacing_mm;
        out = merge(traces.traces, mst(build_graph(traces.traces, vol, cfg.graph, traces.touching)), spacing);
        out.touching = traces.touching;
      } catch (const std::exception& e) {
        throw StageError("tree", e.what());
      }
      ensure_parent_dir(tree_out);
      write_trace_file(tree_out, out);
      std::cout << out.component_count() << " components\n";
    } else if (*eval) {
      IdentityMode mode;
      try {
        mode = parse_identity_mode(ev_identity);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      if (!(ev_majority > 0.0 && ev_majority <= 1.0)) throw ConfigError("--majority must be in (0, 1]");
      const TraceTree pred = load("prediction", [&] { return read_trace_file(ev_pred); });
      const TraceTree gt = load("ground truth", [&] { return read_trace_file(ev_gt); });
      MatchOptions opt;
      opt.majority = ev_majority;
      MatchReport report;
      try {
        report = evaluate(pred, gt, mode, opt);
      } catch (const std::exception& e) {
        throw StageError("eval", e.what());
      }
      if (ev_csv.empty()) {
        write_report_csv(std::cout, {{ev_scan, &report}});
      } else {
        ensure_parent_dir(ev_csv);
        std::ofstream out(ev_csv);
        write_report_csv(out, {{ev_scan, &report}});
        if (!out) throw StageError("eval", "cannot write '" + ev_csv + "'");
        write_report_text(std::cout, ev_scan, report);
      }
    } else if (*pipeline) {
      PipelineResult res;
      if (!pl_manifest.empty()) {
        if (!pin.volume_path.empty() || !pin.distance_path.empty() || !pin.gt_path.empty() || !pl_config.empty() ||
            !pl_sets.empty())
          throw ConfigError("--from-manifest takes no other inputs or config (only --out)");
        res = rerun_from_manifest(pl_manifest, pl_out);
      } else {
        PipelineConfig cfg = load_config(pl_config, pl_sets);
        if (!pl_out.empty()) cfg.output_dir = pl_out;
        res = run_pipeline(pin, cfg);
      }
      std::cout << res.curves.size() << " curves, " << res.tracing.traces.size() << " traces, "
                << res.tree.component_count() << " tree components\n";
      if (res.report) write_report_text(std::cout, res.scan, *res.report);
    }
  } catch (const ConfigError& e) {
    std::cerr << "dost: " << e.what() << '\n';
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "dost: " << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "dost: " << e.what() << '\n';
    return kExitStage;
  }
  return 0;
}
