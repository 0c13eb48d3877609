#include <doctest.h>

#include <json.hpp>

#include "dost/io.hpp"
#include "dost/phantom.hpp"
#include "dost/pipeline.hpp"
#include "support.hpp"

using namespace dost;

namespace {

struct Scene {
  PhantomSpec spec;
  GroundTruthTree gt;
  Volume3 vol;
};

Scene scene(std::uint64_t seed) {
  Scene s;
  s.spec.seed = seed;
  s.spec.geometry = testing::cube(80);
  s.spec.n_terminal_branches = 3;
  s.gt = generate_tree(s.spec);
  s.vol = rasterize(s.gt, s.spec);
  return s;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config text with comments and overrides") {
  PipelineConfig cfg;
  apply_config_text(cfg,
                    "# tracer\n"
                    "alpha = 0.25\n"
                    "  beta=0.5   # stiffer\n"
                    "\n"
                    "predictor = analytic\n"
                    "parallel = true\n"
                    "identity = trace\n");
  CHECK(cfg.tracer.alpha == 0.25);
  CHECK(cfg.tracer.beta == 0.5);
  CHECK(cfg.predictor == PredictorKind::analytic);
  CHECK(cfg.parallel);
  CHECK(cfg.identity == IdentityMode::trace);
  apply_override(cfg, "score_min=0.2");
  CHECK(cfg.graph.score_min == 0.2);
}

TEST_CASE("config errors carry the line and are ConfigErrors") {
  PipelineConfig cfg;
  CHECK_THROWS_WITH_AS(apply_config_text(cfg, "alpha = 1\nbogus = 2\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "alpha 1\n"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "alpha=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "parallel=maybe"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "noequals"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
  const auto invalid = [](const std::string& kv) {
    PipelineConfig cfg;
    apply_override(cfg, kv);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  };
  PipelineConfig ok;
  CHECK_NOTHROW(ok.validate());
  invalid("tau=1.5");
  invalid("tau=0");
  invalid("predictor=external");
  invalid("score_min=1.1");
  invalid("majority=0");
  invalid("directions=3");
  invalid("cuts_per_trace=-1");
  invalid("alpha=-1");
}

TEST_CASE("every config field round trips through its text form") {
  PipelineConfig a;
  apply_config_text(a, "alpha = 0.3\nkappa = 7.5\npredictor = external\nexternal_command = ./net --fast\n"
                       "cuts_per_trace = 2\npolarity = dark\nmajority = 0.6\n");
  PipelineConfig b;
  for (const auto& [k, v] : a.to_kv()) b.set(k, v);
  CHECK(b.to_kv() == a.to_kv());
  CHECK(b.external_command == "./net --fast");
  CHECK(b.tracer.polarity == Polarity::dark);
}

TEST_CASE("phantom spec text") {
  PhantomSpec spec;
  apply_phantom_text(spec, "seed = 9\ndims = 40,50,60\nspacing_mm = 0.5\nn_terminal_branches = 2\n");
  CHECK(spec.seed == 9u);
  CHECK(spec.geometry.dims == std::array<int, 3>{40, 50, 60});
  CHECK(spec.geometry.spacing == Vec3{0.5, 0.5, 0.5});
  CHECK(spec.n_terminal_branches == 2);
  CHECK_THROWS_AS(set_phantom_field(spec, "dims", "40,50"), ConfigError);
  CHECK_THROWS_AS(set_phantom_field(spec, "seed", "-1"), ConfigError);
  CHECK_THROWS_AS(set_phantom_field(spec, "colour", "red"), ConfigError);
}

TEST_CASE("run_stages needs a proposal source") {
  const Scene s = scene(2);
  PipelineConfig cfg;
  cfg.predictor = PredictorKind::analytic;
  CHECK_THROWS_WITH_AS(run_stages(s.vol, nullptr, nullptr, cfg), doctest::Contains("no proposal source"), ConfigError);
  cfg.predictor = PredictorKind::oracle;
  const DistanceMap dist = distance_map(s.gt.traces, s.spec.geometry);
  CHECK_THROWS_AS(run_stages(s.vol, &dist, nullptr, cfg), ConfigError);
}

TEST_CASE("run_stages end to end with the oracle") {
  const Scene s = scene(3);
  const PipelineConfig cfg;
  const PipelineResult r = run_stages(s.vol, nullptr, &s.gt, cfg);
  CHECK(!r.curves.empty());
  CHECK(!r.tracing.traces.empty());
  REQUIRE(r.report);
  CHECK(r.report->ov > 0.9);
  CHECK(r.tree.component_count() <= r.tracing.traces.size());
  std::vector<std::string> stages;
  for (const auto& t : r.timings) stages.push_back(t.stage);
  CHECK(stages == std::vector<std::string>{"propose", "trace", "tree", "eval"});
}

TEST_CASE("run_stages without tree building keeps traces unlinked") {
  const Scene s = scene(3);
  PipelineConfig cfg;
  cfg.build_tree = false;
  const PipelineResult r = run_stages(s.vol, nullptr, &s.gt, cfg);
  CHECK(r.tree.size() == r.tracing.traces.size());
  for (const auto& p : r.tree.parent) CHECK_FALSE(p);
}

TEST_CASE("run_stages wraps predictor failures as stage errors") {
  const Scene s = scene(3);
  PipelineConfig cfg;
  cfg.predictor = PredictorKind::external;
  cfg.external_command = std::string(DOST_FAKE_PREDICTOR) + " badmagic";
  const DistanceMap dist = distance_map(s.gt.traces, s.spec.geometry);
  try {
    run_stages(s.vol, &dist, nullptr, cfg);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage() == "trace");
  }
}

TEST_CASE("sha256 of a known file") {
  const auto dir = testing::scratch_dir("sha");
  {
    std::ofstream out(dir / "abc.txt", std::ios::binary);
    out << "abc";
  }
  CHECK(sha256_file((dir / "abc.txt").string()) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK_THROWS_AS(sha256_file((dir / "missing").string()), Error);
}

TEST_CASE("run_pipeline writes outputs and a reproducible manifest") {
  const Scene s = scene(4);
  const auto dir = testing::scratch_dir("pipeline_run");
  write_dvol((dir / "scan7.dvol").string(), s.vol);
  write_trace_file((dir / "gt.swc").string(), s.gt);
  PipelineConfig cfg;
  cfg.output_dir = (dir / "out").string();
  const PipelineResult r = run_pipeline({(dir / "scan7.dvol").string(), "", (dir / "gt.swc").string()}, cfg);
  CHECK(r.scan == "scan7");
  for (const char* f : {"tree.swc", "traces.swc", "curves.swc", "report.csv", "report.txt", "mip_x.pgm", "mip_y.pgm",
                        "mip_z.pgm", "overlay_x.svg", "overlay_y.svg", "overlay_z.svg", "manifest.json"})
    CHECK(std::filesystem::exists(dir / "out" / f));

  const auto m = nlohmann::json::parse(testing::slurp(dir / "out" / "manifest.json"));
  CHECK(m["tool"] == "dost");
  CHECK(m["version"] == kToolVersion);
  CHECK(m["tracing_order"] == "sequential");
  CHECK(m["inputs"]["volume"]["sha256"] == sha256_file((dir / "scan7.dvol").string()));
  CHECK(m["config"]["alpha"].is_string());
  CHECK(testing::slurp(dir / "out" / "report.csv").rfind("scan,OV,AI", 0) == 0);

  const PipelineResult again = rerun_from_manifest((dir / "out" / "manifest.json").string(), (dir / "again").string());
  CHECK(testing::slurp(dir / "again" / "tree.swc") == testing::slurp(dir / "out" / "tree.swc"));
  CHECK(testing::slurp(dir / "again" / "report.csv") == testing::slurp(dir / "out" / "report.csv"));
  CHECK(again.scan == "scan7");

  {
    std::ofstream out(dir / "gt.swc", std::ios::app);
    out << "# touch 0 1\n";
  }
  CHECK_THROWS_WITH_AS(rerun_from_manifest((dir / "out" / "manifest.json").string(), (dir / "third").string()),
                       doctest::Contains("changed"), ConfigError);
}

}  // TEST_SUITE
