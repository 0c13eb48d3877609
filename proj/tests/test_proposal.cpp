#include <doctest.h>

#include <cmath>
#include <numbers>

#include "audit.hpp"
#include "dost/phantom.hpp"
#include "dost/proposal.hpp"
#include "support.hpp"

using namespace dost;
using testing::cube;

namespace {

DistanceMap map_from(const Geometry& g, const std::vector<float>& v) { return DistanceMap(Volume3(g, v)); }

Trace point_trace(WorldPoint p, double r) {
  Trace t;
  t.points = {p};
  t.radii = {r};
  return t;
}

BinaryMask mask_of(const Geometry& g, const std::vector<audit::Voxel>& vox) {
  BinaryMask m(g);
  for (const auto& v : vox) m.set(v[0], v[1], v[2]);
  return m;
}

std::vector<std::size_t> linear_of(const Geometry& g, const std::vector<audit::Voxel>& vox) {
  std::vector<std::size_t> out;
  for (const auto& v : vox) out.push_back(g.linear(v[0], v[1], v[2]));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_SUITE("proposal") {

TEST_CASE("distance map is 1 on a centerline point and 0 beyond the radius") {
  const Geometry g = cube(9);
  const DistanceMap d = distance_map({point_trace({4, 4, 4}, 2.0)}, g);
  CHECK(d.volume().at(4, 4, 4) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(d.volume().at(6, 4, 4) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(d.volume().at(8, 8, 8) == 0.0f);
}

TEST_CASE("distance map at half the radius is 0.5") {
  const Geometry g = cube(9);
  const DistanceMap d = distance_map({point_trace({4, 4, 4}, 2.0)}, g);
  CHECK(d.volume().at(5, 4, 4) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(d.volume().at(4, 3, 4) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("distance map matches a direct evaluation on random traces") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Geometry g{{14, 12, 10}, {0.9, 1.1, 1.3}, {-2.0, 1.0, 0.5}};
  std::vector<Trace> traces;
  for (int t = 0; t < 3; ++t) {
    Trace tr;
    for (int p = 0; p < 6; ++p) {
      tr.points.push_back({g.origin.x + u(rng) * 12, g.origin.y + u(rng) * 13, g.origin.z + u(rng) * 12});
      tr.radii.push_back(0.5 + 2.5 * u(rng));
    }
    traces.push_back(tr);
  }
  const DistanceMap d = distance_map(traces, g);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        double expect = 0.0;
        for (const auto& tr : traces)
          for (std::size_t p = 0; p < tr.size(); ++p)
            expect = std::max(expect, std::max(0.0, tr.radii[p] - distance(tr.points[p], g.world(i, j, k))) / tr.radii[p]);
        CHECK(d.volume().at(i, j, k) == doctest::Approx(expect).epsilon(1e-6));
      }
}

TEST_CASE("distance map rejects non-positive radii") {
  CHECK_THROWS_AS(distance_map({point_trace({1, 1, 1}, 0.0)}, cube(3)), Error);
}

TEST_CASE("DistanceMap rejects values outside [0, 1]") {
  CHECK_THROWS_AS(map_from(cube(2), std::vector<float>(8, 1.5f)), Error);
  CHECK_THROWS_AS(map_from(cube(2), std::vector<float>(8, -0.1f)), Error);
}

TEST_CASE("seg_loss examples") {
  const Geometry g = cube(3);
  std::vector<float> a(27, 0.0f), b(27, 0.0f);
  for (std::size_t i = 0; i < 27; ++i) a[i] = static_cast<float>(i) / 27.0f;
  CHECK(seg_loss(map_from(g, a), map_from(g, a)) == 0.0);
  CHECK(seg_loss(map_from(g, a), map_from(g, b)) == 0.0);
  std::vector<float> gt(27, 0.0f), pred(27, 0.9f);
  gt[13] = 1.0f;
  pred[13] = 0.5f;
  CHECK(seg_loss(map_from(g, pred), map_from(g, gt)) == doctest::Approx(0.5));
  CHECK_THROWS_AS(seg_loss(map_from(cube(2), std::vector<float>(8, 0.0f)), map_from(g, gt)), Error);
}

TEST_CASE("seg_loss is symmetric when supports coincide") {
  const Geometry g = cube(3);
  std::vector<float> a(27, 0.0f), b(27, 0.0f);
  for (std::size_t i = 0; i < 27; i += 2) {
    a[i] = 0.2f + 0.02f * static_cast<float>(i);
    b[i] = 0.9f - 0.01f * static_cast<float>(i);
  }
  CHECK(seg_loss(map_from(g, a), map_from(g, b)) == doctest::Approx(seg_loss(map_from(g, b), map_from(g, a))));
}

TEST_CASE("binarize thresholds at tau inclusive") {
  const Geometry g{{2, 1, 1}, {1, 1, 1}, {}};
  const BinaryMask m = binarize(map_from(g, {0.4f, 0.6f}), 0.5);
  CHECK_FALSE(m.at(0, 0, 0));
  CHECK(m.at(1, 0, 0));
  CHECK(binarize(map_from(g, {0.5f, 0.49f}), 0.5).at(0, 0, 0));
  CHECK(binarize(map_from(cube(3), std::vector<float>(27, 0.0f)), 0.5).count() == 0);
  CHECK_THROWS_AS(binarize(map_from(g, {0.4f, 0.6f}), 0.0), Error);
  CHECK_THROWS_AS(binarize(map_from(g, {0.4f, 0.6f}), 1.0), Error);
}

TEST_CASE("binarized tube distance map is about a half-radius tube") {
  const Geometry g = cube(40, 0.5);
  const Trace tube = testing::line_trace(0, {0, 9.7, 10.15}, {19.5, 9.7, 10.15}, 157, 2.0);
  const BinaryMask m = binarize(distance_map({tube}, g), 0.5);
  std::size_t n = 0;
  for (int k = 0; k < 40; ++k)
    for (int j = 0; j < 40; ++j)
      for (int i = 5; i < 35; ++i) n += m.at(i, j, k) ? 1 : 0;
  const double voxel_mm3 = 0.125;
  const double analytic = std::numbers::pi * 1.0 * 15.0;
  CHECK(std::abs(static_cast<double>(n) * voxel_mm3 - analytic) / analytic < 0.2);
}

TEST_CASE("skeletonize trivial masks") {
  const Geometry g = cube(5);
  CHECK(skeletonize(BinaryMask(g)).empty());
  const BinaryMask one = mask_of(g, {{2, 2, 2}});
  CHECK(skeletonize(one) == linear_of(g, {{2, 2, 2}}));
}

TEST_CASE("solid bar thins to a single thin path") {
  const Geometry g{{7, 7, 26}, {1, 1, 1}, {}};
  BinaryMask m(g);
  for (int k = 3; k < 23; ++k)
    for (int j = 2; j < 5; ++j)
      for (int i = 2; i < 5; ++i) m.set(i, j, k);
  const auto skel = audit::index_voxels(skeletonize(m), g);
  CHECK(audit::components26(skel) == 1);
  CHECK(skel.size() >= 14);
  CHECK(skel.size() <= 22);
  int ends = 0;
  for (const auto& v : skel) {
    const int n = audit::neighbours(skel, v);
    CHECK(n >= 1);
    CHECK(n <= 2);
    ends += n == 1 ? 1 : 0;
  }
  CHECK(ends == 2);
}

TEST_CASE("simple point classification agrees with the reference definition") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const BinaryMask m = audit::random_mask(seed, 12);
    const auto vox = audit::mask_voxels(m);
    for (const auto& v : vox) CHECK(is_simple_point(m, v[0], v[1], v[2]) == audit::simple_point(vox, v));
  }
}

TEST_CASE("skeleton properties on random masks") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    CAPTURE(seed);
    const auto a = audit::audit_skeleton(audit::random_mask(seed));
    CHECK(a.subset);
    CHECK(a.components_preserved);
    CHECK(a.thin);
    CHECK(a.idempotent);
  }
}

TEST_CASE("straight path gives one curve") {
  const Geometry g{{12, 3, 3}, {1, 1, 1}, {}};
  std::vector<audit::Voxel> v;
  for (int i = 1; i <= 10; ++i) v.push_back({i, 1, 1});
  const auto curves = extract_curves(linear_of(g, v), g);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].points.size() == 10);
  const auto& p = curves[0].points;
  CHECK(std::min(p.front().x, p.back().x) == 1.0);
  CHECK(std::max(p.front().x, p.back().x) == 10.0);
}

TEST_CASE("Y junction gives three curves sharing the junction voxel") {
  const Geometry g = cube(25);
  const audit::Voxel c{12, 12, 12};
  std::vector<audit::Voxel> vox{c};
  const std::array<audit::Voxel, 3> dirs{{{1, 1, 0}, {-1, 0, 1}, {1, -1, -1}}};
  for (const auto& d : dirs)
    for (int s = 1; s <= 9; ++s) vox.push_back({c[0] + s * d[0], c[1] + s * d[1], c[2] + s * d[2]});
  const auto curves = extract_curves(linear_of(g, vox), g);
  REQUIRE(curves.size() == 3);
  const WorldPoint centre = g.world(c[0], c[1], c[2]);
  for (const auto& cv : curves) {
    CHECK(cv.points.size() == 10);
    CHECK((cv.points.front() == centre || cv.points.back() == centre));
    for (std::size_t i = 1; i < cv.points.size(); ++i) {
      const Vec3 d = cv.points[i] - cv.points[i - 1];
      CHECK(std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z)}) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("short fragments are dropped") {
  const Geometry g = cube(6);
  CHECK(extract_curves(linear_of(g, {{0, 0, 0}, {3, 3, 3}}), g).empty());
  CHECK(extract_curves(linear_of(g, {{0, 0, 0}, {1, 1, 1}}), g).empty());
  CHECK(extract_curves(linear_of(g, {{0, 0, 0}, {1, 1, 1}, {2, 2, 2}}), g).size() == 1);
}

TEST_CASE("closed loop without junctions becomes one curve") {
  const Geometry g = cube(7);
  const auto curves =
      extract_curves(linear_of(g, {{2, 1, 1}, {3, 1, 1}, {4, 1, 1}, {5, 2, 1}, {5, 3, 1}, {5, 4, 1}, {4, 5, 1}, {3, 5, 1},
                                   {2, 5, 1}, {1, 4, 1}, {1, 3, 1}, {1, 2, 1}}),
                     g);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].points.size() >= 12);
}

TEST_CASE("phantom proposal curves lie inside the ground-truth lumen") {
  for (std::uint64_t seed : {2u, 5u, 9u}) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.geometry = cube(96);
    spec.n_terminal_branches = 3;
    const auto gt = generate_tree(spec);
    const auto curves = extract_curves(skeletonize(binarize(distance_map(gt.traces, spec.geometry), 0.5)), spec.geometry);
    CHECK(!curves.empty());
    for (const auto& c : curves)
      for (const auto& p : c.points) {
        bool inside = false;
        for (const auto& t : gt.traces)
          for (std::size_t i = 0; i < t.size() && !inside; ++i) inside = distance(p, t.points[i]) <= t.radii[i];
        CHECK(inside);
      }
  }
}

TEST_CASE("cut_distance_map zeroes windows along each trace") {
  const Geometry g{{40, 9, 9}, {1, 1, 1}, {}};
  const Trace tube = testing::line_trace(0, {2, 4, 4}, {37, 4, 4}, 71, 2.0);
  const DistanceMap full = distance_map({tube}, g);
  const DistanceMap cut = cut_distance_map(full, {tube}, 3, 3.0);
  int zero_on_axis = 0;
  for (int i = 2; i <= 37; ++i) zero_on_axis += cut.volume().at(i, 4, 4) == 0.0f ? 1 : 0;
  CHECK(zero_on_axis >= 6);
  CHECK(zero_on_axis <= 15);
  const auto curves = extract_curves(skeletonize(binarize(cut, 0.5)), g);
  CHECK(curves.size() == 4);
  const DistanceMap none = cut_distance_map(full, {tube}, 0, 3.0);
  CHECK(std::equal(none.values().begin(), none.values().end(), full.values().begin()));
}

}  // TEST_SUITE
