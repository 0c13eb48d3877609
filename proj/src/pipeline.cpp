#include "dost/pipeline.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "dost/io.hpp"

namespace dost {

const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::oracle: return "oracle";
    case PredictorKind::analytic: return "analytic";
    case PredictorKind::external: return "external";
  }
  return "unknown";
}

namespace {

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(x))
    throw ConfigError("config: '" + key + "' expects a finite number, got '" + v + "'");
  return x;
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long x = 0;
  try {
    x = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || x < INT32_MIN || x > INT32_MAX)
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

using Clock = std::chrono::steady_clock;

template <class F>
auto run_stage(const std::string& name, std::vector<StageTiming>& timings, F&& f) {
  const auto t0 = Clock::now();
  auto record = [&] { timings.push_back({name, std::chrono::duration<double>(Clock::now() - t0).count()}); };
  try {
    if constexpr (std::is_void_v<decltype(f())>) {
      f();
      record();
    } else {
      auto r = f();
      record();
      return r;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "alpha") tracer.alpha = parse_real(key, v);
  else if (key == "beta") tracer.beta = parse_real(key, v);
  else if (key == "gamma_factor") tracer.gamma_factor = parse_real(key, v);
  else if (key == "entropy_threshold") tracer.entropy_threshold = parse_real(key, v);
  else if (key == "max_iters_per_end") tracer.max_iters_per_end = parse_int(key, v);
  else if (key == "resample_spacing_mm") tracer.resample_spacing_mm = parse_real(key, v);
  else if (key == "min_trace_points") tracer.min_trace_points = parse_int(key, v);
  else if (key == "descent_step") tracer.descent_step = parse_real(key, v);
  else if (key == "intensity_weight") tracer.intensity_weight = parse_real(key, v);
  else if (key == "patch_side") tracer.patch_side = parse_int(key, v);
  else if (key == "polarity") {
    try {
      tracer.polarity = parse_polarity(v);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else if (key == "tau") tau = parse_real(key, v);
  else if (key == "min_curve_voxels") min_curve_voxels = parse_int(key, v);
  else if (key == "score_min") graph.score_min = parse_real(key, v);
  else if (key == "gap_max_mm") graph.gap_max_mm = parse_real(key, v);
  else if (key == "build_tree") build_tree = parse_bool(key, v);
  else if (key == "predictor") {
    if (v == "oracle") predictor = PredictorKind::oracle;
    else if (v == "analytic") predictor = PredictorKind::analytic;
    else if (v == "external") predictor = PredictorKind::external;
    else throw ConfigError("config: predictor must be oracle, analytic or external, got '" + v + "'");
  } else if (key == "external_command") external_command = v;
  else if (key == "directions") directions = parse_int(key, v);
  else if (key == "kappa") kappa = parse_real(key, v);
  else if (key == "lookahead_floor_mm") lookahead_floor_mm = parse_real(key, v);
  else if (key == "parallel") parallel = parse_bool(key, v);
  else if (key == "identity") {
    try {
      identity = parse_identity_mode(v);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else if (key == "majority") majority = parse_real(key, v);
  else if (key == "cuts_per_trace") cuts_per_trace = parse_int(key, v);
  else if (key == "cut_len_mm") cut_len_mm = parse_real(key, v);
  else if (key == "output_dir") output_dir = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

void PipelineConfig::validate() const {
  try {
    tracer.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("config: tau must be in (0, 1)");
  if (min_curve_voxels < 1) throw ConfigError("config: min_curve_voxels must be >= 1");
  if (!(graph.score_min >= 0.0 && graph.score_min <= 1.0)) throw ConfigError("config: score_min must be in [0, 1]");
  if (!(graph.gap_max_mm >= 0.0)) throw ConfigError("config: gap_max_mm must be >= 0");
  if (directions < 4) throw ConfigError("config: directions must be >= 4");
  if (!(kappa > 0.0)) throw ConfigError("config: kappa must be > 0");
  if (!(lookahead_floor_mm > 0.0)) throw ConfigError("config: lookahead_floor_mm must be > 0");
  if (!(majority > 0.0 && majority <= 1.0)) throw ConfigError("config: majority must be in (0, 1]");
  if (cuts_per_trace < 0) throw ConfigError("config: cuts_per_trace must be >= 0");
  if (!(cut_len_mm > 0.0)) throw ConfigError("config: cut_len_mm must be > 0");
  if (predictor == PredictorKind::external && external_command.empty())
    throw ConfigError("config: the external predictor needs external_command");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::to_kv() const {
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"alpha", real_text(tracer.alpha)},
      {"beta", real_text(tracer.beta)},
      {"gamma_factor", real_text(tracer.gamma_factor)},
      {"entropy_threshold", real_text(tracer.entropy_threshold)},
      {"max_iters_per_end", std::to_string(tracer.max_iters_per_end)},
      {"resample_spacing_mm", real_text(tracer.resample_spacing_mm)},
      {"min_trace_points", std::to_string(tracer.min_trace_points)},
      {"descent_step", real_text(tracer.descent_step)},
      {"intensity_weight", real_text(tracer.intensity_weight)},
      {"patch_side", std::to_string(tracer.patch_side)},
      {"polarity", to_string(tracer.polarity)},
      {"tau", real_text(tau)},
      {"min_curve_voxels", std::to_string(min_curve_voxels)},
      {"score_min", real_text(graph.score_min)},
      {"gap_max_mm", real_text(graph.gap_max_mm)},
      {"build_tree", b(build_tree)},
      {"predictor", to_string(predictor)},
      {"external_command", external_command},
      {"directions", std::to_string(directions)},
      {"kappa", real_text(kappa)},
      {"lookahead_floor_mm", real_text(lookahead_floor_mm)},
      {"parallel", b(parallel)},
      {"identity", to_string(identity)},
      {"majority", real_text(majority)},
      {"cuts_per_trace", std::to_string(cuts_per_trace)},
      {"cut_len_mm", real_text(cut_len_mm)},
      {"output_dir", output_dir},
  };
}

void apply_config_text(PipelineConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

namespace {

std::array<double, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<double, 3> out{};
  std::istringstream in(v);
  std::string part;
  int n = 0;
  while (std::getline(in, part, ',')) {
    if (n == 3) throw ConfigError("config: '" + key + "' expects three comma-separated values");
    out[static_cast<std::size_t>(n++)] = parse_real(key, trim(part));
  }
  if (n == 1) out[1] = out[2] = out[0];
  else if (n != 3) throw ConfigError("config: '" + key + "' expects one or three comma-separated values");
  return out;
}

}  // namespace

void set_phantom_field(PhantomSpec& spec, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "seed") {
    std::size_t used = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || v[0] == '-') throw ConfigError("config: 'seed' expects a non-negative integer");
    spec.seed = x;
  } else if (key == "dims") {
    const auto d = parse_triple(key, v);
    for (std::size_t i = 0; i < 3; ++i) {
      if (d[i] != std::floor(d[i]) || d[i] < 1 || d[i] > 4096) throw ConfigError("config: dims must be integers in [1, 4096]");
      spec.geometry.dims[i] = static_cast<int>(d[i]);
    }
  } else if (key == "spacing_mm") {
    const auto s = parse_triple(key, v);
    spec.geometry.spacing = {s[0], s[1], s[2]};
  } else if (key == "origin_mm") {
    const auto o = parse_triple(key, v);
    spec.geometry.origin = {o[0], o[1], o[2]};
  } else if (key == "n_terminal_branches") spec.n_terminal_branches = parse_int(key, v);
  else if (key == "radius_min_mm") spec.radius_min_mm = parse_real(key, v);
  else if (key == "radius_max_mm") spec.radius_max_mm = parse_real(key, v);
  else if (key == "foreground_mean") spec.foreground_mean = parse_real(key, v);
  else if (key == "background_mean") spec.background_mean = parse_real(key, v);
  else if (key == "noise_sigma") spec.noise_sigma = parse_real(key, v);
  else if (key == "min_branch_len_mm") spec.min_branch_len_mm = parse_real(key, v);
  else if (key == "polarity") {
    try {
      spec.polarity = parse_polarity(v);
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  } else throw ConfigError("config: unknown phantom key '" + key + "'");
}

void apply_phantom_text(PhantomSpec& spec, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("spec line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_phantom_field(spec, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("spec line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("spec: ") + e.what());
  }
}

std::unique_ptr<Predictor> make_predictor(const PipelineConfig& cfg, const DirectionSet& dirs,
                                          const GroundTruthTree* gt) {
  switch (cfg.predictor) {
    case PredictorKind::oracle:
      if (!gt) throw ConfigError("the oracle predictor needs a ground-truth trace file");
      return std::make_unique<OraclePredictor>(*gt, dirs, cfg.kappa, cfg.lookahead_floor_mm);
    case PredictorKind::analytic:
      return std::make_unique<AnalyticPredictor>(dirs, cfg.tracer.polarity);
    case PredictorKind::external:
      return std::make_unique<ExternalPredictor>(cfg.external_command, dirs);
  }
  throw ConfigError("unknown predictor");
}

PipelineResult run_stages(const Volume3& vol, const DistanceMap* distance, const GroundTruthTree* gt,
                          const PipelineConfig& cfg) {
  cfg.validate();
  if (!distance && !gt) throw ConfigError("no proposal source: give a distance map or a ground-truth trace file");
  if (cfg.cuts_per_trace > 0 && !gt) throw ConfigError("cuts_per_trace needs a ground-truth trace file");
  if (cfg.predictor == PredictorKind::oracle && !gt)
    throw ConfigError("the oracle predictor needs a ground-truth trace file");

  PipelineResult res;
  const Geometry& geom = vol.geometry();

  res.curves = run_stage("propose", res.timings, [&] {
    DistanceMap map = distance ? *distance : distance_map(gt->traces, geom);
    if (!(map.geometry() == geom)) throw Error("distance map geometry differs from the volume");
    if (cfg.cuts_per_trace > 0) map = cut_distance_map(map, gt->traces, cfg.cuts_per_trace, cfg.cut_len_mm);
    const auto skeleton = skeletonize(binarize(map, cfg.tau));
    return extract_curves(skeleton, geom, cfg.min_curve_voxels);
  });

  const DirectionSet dirs(cfg.directions);
  const TracerConfig tracer = cfg.tracer.resolved(geom);
  res.tracing = run_stage("trace", res.timings, [&] {
    auto predictor = make_predictor(cfg, dirs, gt);
    return trace_all(res.curves, vol, *predictor, tracer, cfg.parallel);
  });

  res.tree = run_stage("tree", res.timings, [&] {
    if (!cfg.build_tree) return unlinked_tree(res.tracing.traces, res.tracing.touching);
    const SnakeGraph graph = build_graph(res.tracing.traces, vol, cfg.graph, res.tracing.touching);
    VesselTree tree = merge(res.tracing.traces, mst(graph), tracer.resample_spacing_mm);
    tree.touching = res.tracing.touching;
    return tree;
  });

  if (gt) {
    res.report = run_stage("eval", res.timings, [&] {
      MatchOptions opt;
      opt.majority = cfg.majority;
      return evaluate(res.tree, *gt, cfg.identity, opt);
    });
  }
  return res;
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for hashing");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed for '" + path + "'");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  using nlohmann::ordered_json;
  cfg.validate();
  if (inputs.volume_path.empty()) throw ConfigError("no input volume given");
  if (inputs.distance_path.empty() && inputs.gt_path.empty())
    throw ConfigError("no proposal source: give a distance map or a ground-truth trace file");

  std::vector<StageTiming> load_timing;
  struct Loaded {
    Volume3 vol;
    std::optional<DistanceMap> distance;
    std::optional<GroundTruthTree> gt;
  };
  const Loaded in = run_stage("load", load_timing, [&] {
    Loaded l{read_dvol(inputs.volume_path), std::nullopt, std::nullopt};
    if (!inputs.distance_path.empty()) l.distance = DistanceMap(read_dvol(inputs.distance_path));
    if (!inputs.gt_path.empty()) l.gt = read_trace_file(inputs.gt_path);
    return l;
  });

  PipelineResult res = run_stages(in.vol, in.distance ? &*in.distance : nullptr, in.gt ? &*in.gt : nullptr, cfg);
  res.timings.insert(res.timings.begin(), load_timing.begin(), load_timing.end());

  const fs::path out_dir(cfg.output_dir);
  res.scan = fs::path(inputs.volume_path).stem().string();
  const std::string& scan = res.scan;
  std::vector<std::string> outputs;
  run_stage("write", res.timings, [&] {
    fs::create_directories(out_dir);
    auto file = [&](const std::string& name) {
      outputs.push_back(name);
      return (out_dir / name).string();
    };
    write_trace_file(file("curves.swc"), curves_to_tree(res.curves));
    write_trace_file(file("traces.swc"), unlinked_tree(res.tracing.traces, res.tracing.touching));
    write_trace_file(file("tree.swc"), res.tree);
    if (res.report) {
      std::ofstream csv(file("report.csv"));
      write_report_csv(csv, {{scan, &*res.report}});
      std::ofstream txt(file("report.txt"));
      write_report_text(txt, scan, *res.report);
      if (!csv || !txt) throw Error("failed writing reports");
    }
    const char* axis_name[3] = {"x", "y", "z"};
    for (int a = 0; a < 3; ++a) {
      write_mip_pgm(file(std::string("mip_") + axis_name[a] + ".pgm"), in.vol, a);
      write_overlay_svg(file(std::string("overlay_") + axis_name[a] + ".svg"), in.vol.geometry(), res.tree, a);
    }
  });

  ordered_json manifest;
  manifest["tool"] = "dost";
  manifest["version"] = kToolVersion;
  ordered_json config = ordered_json::object();
  for (const auto& [k, v] : cfg.to_kv()) config[k] = v;
  manifest["config"] = config;
  ordered_json ins = ordered_json::object();
  auto record_input = [&](const char* name, const std::string& path) {
    if (path.empty()) return;
    ins[name] = {{"path", fs::absolute(path).string()}, {"sha256", sha256_file(path)}};
  };
  record_input("volume", inputs.volume_path);
  record_input("distance", inputs.distance_path);
  record_input("gt", inputs.gt_path);
  manifest["inputs"] = ins;
  manifest["tracing_order"] = cfg.parallel ? "parallel" : "sequential";
  ordered_json timings = ordered_json::object();
  for (const auto& t : res.timings) timings[t.stage] = t.seconds;
  manifest["timings_s"] = timings;
  manifest["outputs"] = outputs;
  std::ofstream mf(out_dir / "manifest.json");
  mf << manifest.dump(2) << '\n';
  if (!mf) throw StageError("write", "cannot write manifest.json");
  return res;
}

PipelineResult rerun_from_manifest(const std::string& manifest_path, const std::string& output_dir) {
  using nlohmann::json;
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open manifest '" + manifest_path + "'");
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("manifest '" + manifest_path + "': " + e.what());
  }
  if (!m.contains("config") || !m["config"].is_object() || !m.contains("inputs") || !m["inputs"].is_object())
    throw ConfigError("manifest '" + manifest_path + "' lacks config or inputs");

  PipelineConfig cfg;
  for (const auto& [k, v] : m["config"].items()) {
    if (!v.is_string()) throw ConfigError("manifest: config value for '" + k + "' is not a string");
    cfg.set(k, v.get<std::string>());
  }
  if (!output_dir.empty()) cfg.output_dir = output_dir;

  PipelineInputs inputs;
  auto input = [&](const char* name, std::string& dst) {
    if (!m["inputs"].contains(name)) return;
    const auto& e = m["inputs"][name];
    if (!e.contains("path") || !e.contains("sha256")) throw ConfigError(std::string("manifest: malformed input ") + name);
    dst = e["path"].get<std::string>();
    std::string actual;
    try {
      actual = sha256_file(dst);
    } catch (const Error& err) {
      throw ConfigError(std::string("manifest: ") + err.what());
    }
    if (actual != e["sha256"].get<std::string>())
      throw ConfigError(std::string("manifest: input ") + name + " '" + dst + "' changed since the recorded run");
  };
  input("volume", inputs.volume_path);
  input("distance", inputs.distance_path);
  input("gt", inputs.gt_path);
  return run_pipeline(inputs, cfg);
}

}  // namespace dost
