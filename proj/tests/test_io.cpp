#include <doctest.h>

#include <sstream>

#include "dost/io.hpp"
#include "dost/phantom.hpp"
#include "dost/tree.hpp"
#include "support.hpp"

using namespace dost;

namespace {

std::string to_text(const TraceTree& t) {
  std::ostringstream s;
  write_trace_file(s, t);
  return s.str();
}

TraceTree from_text(const std::string& text) {
  std::istringstream s(text);
  return read_trace_file(s);
}

TraceTree sample_tree() {
  const Trace a = testing::line_trace(0, {0, 0, 0}, {10, 0, 0}, 11, 1.0);
  const Trace b = testing::line_trace(3, {12, 0, 0}, {20, 0, 0}, 9, 2.0);
  Trace c = testing::line_trace(5, {4, 6, 0}, {4, 1, 0}, 6, 0.75);
  c.ends = {EndStatus::max_iters, EndStatus::collision};
  GraphEdge e1, e2;
  e1.a = 0;
  e1.b = 3;
  e1.stats.endpoints = closest_pair(a, b);
  e2.a = 0;
  e2.b = 5;
  e2.stats.endpoints = closest_pair(a, c);
  VesselTree t = merge({a, b, c}, {e1, e2}, 0.5);
  t.touching = {{0, 5}};
  return t;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("trace file round trip preserves structure") {
  const TraceTree t = sample_tree();
  const std::string text = to_text(t);
  const TraceTree back = from_text(text);
  REQUIRE(back.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(back.traces[i].id == t.traces[i].id);
    CHECK(back.traces[i].kind == t.traces[i].kind);
    CHECK(back.traces[i].ends == t.traces[i].ends);
    REQUIRE(back.traces[i].size() == t.traces[i].size());
    for (std::size_t k = 0; k < t.traces[i].size(); ++k) {
      CHECK(distance(back.traces[i].points[k], t.traces[i].points[k]) < 1e-6);
      CHECK(back.traces[i].radii[k] == doctest::Approx(t.traces[i].radii[k]).epsilon(1e-6));
    }
    REQUIRE(back.parent[i].has_value() == t.parent[i].has_value());
    if (t.parent[i]) {
      CHECK(back.parent[i]->parent == t.parent[i]->parent);
      CHECK(back.parent[i]->parent_point == t.parent[i]->parent_point);
      CHECK(back.parent[i]->child_point == t.parent[i]->child_point);
    }
  }
  CHECK(back.touching == t.touching);
  CHECK(to_text(back) == text);
}

TEST_CASE("phantom trees round trip byte-identically") {
  for (std::uint64_t seed : {1u, 6u, 13u}) {
    PhantomSpec spec;
    spec.seed = seed;
    const auto gt = generate_tree(spec);
    const std::string text = to_text(gt);
    CHECK(to_text(from_text(text)) == text);
    CHECK(from_text(text).component_count() == 1);
  }
}

TEST_CASE("trace file line layout") {
  TraceTree t;
  t.add(testing::line_trace(2, {0, 0, 0}, {1, 0, 0}, 2, 1.5));
  Trace child = testing::line_trace(4, {0.5, 0, 0}, {0.5, 2, 0}, 3, 1.0);
  t.add(child, Attachment{0, 1, 1});
  CHECK(to_text(t) ==
        "# dost trace file\n"
        "# trace 2 growing growing\n"
        "1 2 0.000000 0.000000 0.000000 1.500000 -1\n"
        "2 2 1.000000 0.000000 0.000000 1.500000 1\n"
        "# trace 4 growing growing\n"
        "3 2 0.500000 0.000000 0.000000 1.000000 4\n"
        "4 2 0.500000 1.000000 0.000000 1.000000 2\n"
        "5 2 0.500000 2.000000 0.000000 1.000000 4\n");
}

TEST_CASE("plain SWC without trace comments splits on parent breaks") {
  const TraceTree t = from_text(
      "1 2 0 0 0 1 -1\n"
      "2 2 1 0 0 1 1\n"
      "3 2 2 0 0 1 2\n"
      "4 2 1 1 0 0.5 2\n"
      "5 2 1 2 0 0.5 4\n"
      "6 2 9 9 9 1 -1\n"
      "7 6 9 9 8 1 6\n");
  REQUIRE(t.size() == 3);
  CHECK(t.traces[0].size() == 3);
  CHECK(t.traces[1].size() == 2);
  CHECK(t.traces[2].size() == 2);
  REQUIRE(t.parent[1]);
  CHECK(t.parent[1]->parent == 0);
  CHECK(t.parent[1]->parent_point == 1);
  CHECK(t.parent[1]->child_point == 0);
  CHECK_FALSE(t.parent[2]);
  CHECK(t.component_count() == 2);
}

TEST_CASE("malformed trace files report the line") {
  CHECK_THROWS_WITH(from_text("# trace 0\n1 2 0 0 0 1 -1\n2 2 1 0\n"), doctest::Contains("line 3"));
  CHECK_THROWS_WITH(from_text("# trace 0\n1 2 0 zero 0 1 -1\n"), doctest::Contains("line 2"));
  CHECK_THROWS_WITH(from_text("# trace 0\n1 2 0 0 0 1 -1\n2 2 1 0 0 1 9\n"), doctest::Contains("unknown parent"));
  CHECK_THROWS_WITH(from_text("# trace 0\n1 2 0 0 0 1 -1\n1 2 1 0 0 1 1\n"), doctest::Contains("duplicate point id"));
  CHECK_THROWS_WITH(from_text("# trace 0 sideways growing\n1 2 0 0 0 1 -1\n"), doctest::Contains("line 1"));
  CHECK_THROWS_WITH(from_text("# trace 0\n1 2 0 0 0 -1 -1\n"), doctest::Contains("line 2"));
  CHECK_THROWS_AS(from_text("# touch 1\n"), Error);
  CHECK_THROWS_AS(from_text("# trace 0\n# trace 1\n1 2 0 0 0 1 -1\n"), Error);
}

TEST_CASE("reading a missing file names the path") {
  CHECK_THROWS_WITH(read_trace_file(std::string("/nonexistent/x.swc")), doctest::Contains("/nonexistent/x.swc"));
}

TEST_CASE("empty input gives an empty tree") {
  CHECK(from_text("").size() == 0);
  CHECK(from_text("# dost trace file\n").size() == 0);
}

TEST_CASE("curves convert to radius-zero roots and back") {
  const std::vector<InitialCurve> curves{{3, {{0, 0, 0}, {1, 1, 1}}}, {8, {{5, 5, 5}, {6, 5, 5}, {7, 5, 5}}}};
  const TraceTree t = curves_to_tree(curves);
  CHECK(t.size() == 2);
  for (double r : t.traces[1].radii) CHECK(r == 0.0);
  const auto back = tree_to_curves(from_text(to_text(t)));
  REQUIRE(back.size() == 2);
  CHECK(back[1].id == 8);
  CHECK(back[1].points == curves[1].points);
}

TEST_CASE("report CSV layout") {
  MatchReport r;
  r.ov = 0.5;
  r.ai = 0.25;
  r.ids = 2;
  r.mota = -0.125;
  r.idf1 = 2.0 / 3.0;
  r.corr.TP = 3;
  r.corr.FN = 1;
  r.corr.FP = 2;
  std::ostringstream s;
  write_report_csv(s, {{"scan01", &r}, {"scan02", &r}});
  CHECK(s.str() ==
        "scan,OV,AI,TP,FN,FP,IDS,MOTA,IDF1\n"
        "scan01,0.500000,0.250000,3,1,2,2,-0.125000,0.666667\n"
        "scan02,0.500000,0.250000,3,1,2,2,-0.125000,0.666667\n");
  std::ostringstream text;
  write_report_text(text, "scan01", r);
  CHECK(text.str().find("MOTA -0.1250") != std::string::npos);
}

TEST_CASE("MIP images and overlays") {
  const auto dir = testing::scratch_dir("io_images");
  const Geometry g{{4, 3, 2}, {1, 1, 1}, {}};
  std::vector<float> v(24, 0.0f);
  v[g.linear(3, 2, 1)] = 10.0f;
  v[g.linear(0, 0, 0)] = 5.0f;
  const Volume3 vol(g, v);
  const std::array<std::pair<int, int>, 3> expect{{{3, 2}, {4, 2}, {4, 3}}};
  for (int axis = 0; axis < 3; ++axis) {
    const auto path = (dir / ("mip" + std::to_string(axis) + ".pgm")).string();
    write_mip_pgm(path, vol, axis);
    const std::string bytes = testing::slurp(path);
    const auto [w, h] = expect[static_cast<std::size_t>(axis)];
    const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    REQUIRE(bytes.substr(0, header.size()) == header);
    CHECK(bytes.size() == header.size() + static_cast<std::size_t>(w * h));
    const auto px = [&](int x, int y) {
      return static_cast<unsigned char>(bytes[header.size() + static_cast<std::size_t>(y * w + x)]);
    };
    CHECK(px(w - 1, h - 1) == 255);
    CHECK(px(0, 0) == 128);
  }
  CHECK_THROWS_AS(write_mip_pgm((dir / "bad.pgm").string(), vol, 3), Error);

  const auto svg = (dir / "overlay.svg").string();
  write_overlay_svg(svg, testing::cube(40), sample_tree(), 2);
  const std::string text = testing::slurp(svg);
  CHECK(text.rfind("<svg", 0) == 0);
  std::size_t polylines = 0, gaps = 0;
  for (std::size_t at = text.find("<polyline"); at != std::string::npos; at = text.find("<polyline", at + 1)) ++polylines;
  for (std::size_t at = text.find("yellow"); at != std::string::npos; at = text.find("yellow", at + 1)) ++gaps;
  CHECK(polylines == sample_tree().size());
  CHECK(gaps == 2);
}

}  // TEST_SUITE
