#include <doctest.h>

#include <sys/wait.h>

#include <filesystem>

#include "dost/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

/// Runs the CLI with `args`, stdout and stderr captured into files in `dir`.
int run_cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = std::string(DOST_CLI_PATH) + " " + args + " >" + (dir / "stdout.txt").string() + " 2>" +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("phantom generation is byte-identical across runs") {
  const auto dir = testing::scratch_dir("cli_phantom");
  REQUIRE(run_cli(dir, "phantom --set seed=5 --set dims=64 -o " + q(dir / "a")) == 0);
  REQUIRE(run_cli(dir, "phantom --set seed=5 --set dims=64 -o " + q(dir / "b")) == 0);
  for (const char* f : {"volume.dvol", "gt.swc", "distance.dvol"}) {
    CAPTURE(f);
    const std::string a = testing::slurp(dir / "a" / f);
    CHECK(!a.empty());
    CHECK(a == testing::slurp(dir / "b" / f));
  }
  REQUIRE(run_cli(dir, "phantom --set seed=6 --set dims=64 -o " + q(dir / "c")) == 0);
  CHECK(testing::slurp(dir / "c" / "gt.swc") != testing::slurp(dir / "a" / "gt.swc"));
}

TEST_CASE("a one-branch phantom has one ground-truth trace") {
  const auto dir = testing::scratch_dir("cli_one");
  {
    std::ofstream spec(dir / "spec.txt");
    spec << "# single vessel\nseed = 2\ndims = 64\nn_terminal_branches = 1\n";
  }
  REQUIRE(run_cli(dir, "phantom --spec " + q(dir / "spec.txt") + " -o " + q(dir)) == 0);
  const auto gt = dost::read_trace_file((dir / "gt.swc").string());
  CHECK(gt.size() == 1);
  const auto vol = dost::read_dvol((dir / "volume.dvol").string());
  CHECK(vol.geometry().dims == std::array<int, 3>{64, 64, 64});
}

TEST_CASE("staged commands chain into an evaluation") {
  const auto dir = testing::scratch_dir("cli_stages");
  REQUIRE(run_cli(dir, "phantom --set seed=3 --set dims=80 --set n_terminal_branches=3 -o " + q(dir)) == 0);
  REQUIRE(run_cli(dir, "propose --distance " + q(dir / "distance.dvol") + " -o " + q(dir / "curves.swc")) == 0);
  REQUIRE(run_cli(dir, "trace --volume " + q(dir / "volume.dvol") + " --curves " + q(dir / "curves.swc") + " --gt " +
                        q(dir / "gt.swc") + " -o " + q(dir / "traces.swc")) == 0);
  REQUIRE(run_cli(dir, "tree --volume " + q(dir / "volume.dvol") + " --traces " + q(dir / "traces.swc") + " -o " +
                        q(dir / "tree.swc")) == 0);
  REQUIRE(run_cli(dir, "eval --pred " + q(dir / "tree.swc") + " --gt " + q(dir / "gt.swc") + " --scan s3") == 0);
  const std::string csv = testing::slurp(dir / "stdout.txt");
  CHECK(csv.rfind("scan,OV,AI,TP,FN,FP,IDS,MOTA,IDF1\ns3,", 0) == 0);
  const auto tree = dost::read_trace_file((dir / "tree.swc").string());
  const auto traces = dost::read_trace_file((dir / "traces.swc").string());
  CHECK(tree.component_count() <= traces.size());
}

TEST_CASE("propose without a source exits with a configuration error") {
  const auto dir = testing::scratch_dir("cli_nosource");
  CHECK(run_cli(dir, "propose -o " + q(dir / "curves.swc")) == 2);
  CHECK(testing::slurp(dir / "stderr.txt").find("no proposal source") != std::string::npos);
  CHECK(run_cli(dir, "pipeline --volume /nonexistent.dvol -o " + q(dir / "out")) != 0);
}

TEST_CASE("bad arguments and config exit with 2") {
  const auto dir = testing::scratch_dir("cli_args");
  CHECK(run_cli(dir, "frobnicate") == 2);
  CHECK(run_cli(dir, "eval --pred x.swc") == 2);
  CHECK(run_cli(dir, "phantom --set bogus=1 -o " + q(dir)) == 2);
  CHECK(run_cli(dir, "eval --pred a --gt b --identity branch") == 2);
}

TEST_CASE("malformed input files exit with 2 and name the line") {
  const auto dir = testing::scratch_dir("cli_inputs");
  {
    std::ofstream bad(dir / "bad.swc");
    bad << "# trace 0\n1 2 0 0\n";
  }
  CHECK(run_cli(dir, "eval --pred " + q(dir / "bad.swc") + " --gt " + q(dir / "bad.swc")) == 2);
  CHECK(testing::slurp(dir / "stderr.txt").find("line 2") != std::string::npos);
  CHECK(run_cli(dir, "tree --volume " + q(dir / "missing.dvol") + " --traces " + q(dir / "bad.swc") + " -o " + q(dir / "t.swc")) == 2);
  CHECK(testing::slurp(dir / "stderr.txt").find("missing.dvol") != std::string::npos);
}

TEST_CASE("evaluating ground truth against itself is perfect") {
  const auto dir = testing::scratch_dir("cli_self");
  REQUIRE(run_cli(dir, "phantom --set seed=8 --set dims=64 -o " + q(dir)) == 0);
  REQUIRE(run_cli(dir, "eval --pred " + q(dir / "gt.swc") + " --gt " + q(dir / "gt.swc") + " --scan self") == 0);
  const std::string out = testing::slurp(dir / "stdout.txt");
  CHECK(out.find("self,1.000000,0.000000,") != std::string::npos);
  CHECK(out.find(",0,0,0,1.000000,1.000000\n") != std::string::npos);
}

TEST_CASE("an empty prediction file evaluates to all misses") {
  const auto dir = testing::scratch_dir("cli_empty");
  REQUIRE(run_cli(dir, "phantom --set seed=8 --set dims=64 --set n_terminal_branches=2 -o " + q(dir)) == 0);
  { std::ofstream empty(dir / "empty.swc"); }
  REQUIRE(run_cli(dir, "eval --pred " + q(dir / "empty.swc") + " --gt " + q(dir / "gt.swc") + " --csv " +
                        q(dir / "r.csv")) == 0);
  const std::string csv = testing::slurp(dir / "r.csv");
  CHECK(csv.find("scan,0.000000,0.000000,0,2,0,0,") != std::string::npos);
}

TEST_CASE("pipeline reruns byte-identically from its manifest") {
  const auto dir = testing::scratch_dir("cli_manifest");
  REQUIRE(run_cli(dir, "phantom --set seed=11 --set dims=80 --set n_terminal_branches=3 -o " + q(dir)) == 0);
  REQUIRE(run_cli(dir, "pipeline --volume " + q(dir / "volume.dvol") + " --gt " + q(dir / "gt.swc") +
                        " --set cuts_per_trace=1 -o " + q(dir / "run1")) == 0);
  CHECK(testing::slurp(dir / "stdout.txt").find("scan: volume") != std::string::npos);
  REQUIRE(run_cli(dir, "pipeline --from-manifest " + q(dir / "run1" / "manifest.json") + " -o " + q(dir / "run2")) == 0);
  CHECK(testing::slurp(dir / "stdout.txt").find("scan: volume") != std::string::npos);
  for (const char* f : {"tree.swc", "report.csv", "traces.swc", "curves.swc"}) {
    CAPTURE(f);
    CHECK(testing::slurp(dir / "run1" / f) == testing::slurp(dir / "run2" / f));
  }
  CHECK(run_cli(dir, "pipeline --from-manifest " + q(dir / "run1" / "manifest.json") + " --set alpha=1") == 2);
}

}  // TEST_SUITE
