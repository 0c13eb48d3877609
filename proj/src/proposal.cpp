#include "dost/proposal.hpp"

#include <algorithm>
#include <limits>
#include <array>
#include <cmath>
#include <set>
#include <unordered_map>
#include <utility>

namespace dost {

DistanceMap::DistanceMap(Volume3 values) : values_(std::move(values)) {
  for (float v : values_.voxels())
    if (!(v >= 0.0f && v <= 1.0f)) throw Error("distance map: value outside [0, 1]");
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), std::uint8_t{1}));
}

namespace {

/// Inclusive voxel index box covering a ball of radius `reach` around c.
struct VoxelBox {
  int i0, j0, k0, i1, j1, k1;
};

VoxelBox ball_box(const Geometry& g, const Vec3& c, double reach) {
  const Vec3 lo = g.continuous_index(c - Vec3{reach, reach, reach});
  const Vec3 hi = g.continuous_index(c + Vec3{reach, reach, reach});
  return {std::max(0, static_cast<int>(std::ceil(lo.x))),        std::max(0, static_cast<int>(std::ceil(lo.y))),
          std::max(0, static_cast<int>(std::ceil(lo.z))),        std::min(g.dims[0] - 1, static_cast<int>(std::floor(hi.x))),
          std::min(g.dims[1] - 1, static_cast<int>(std::floor(hi.y))), std::min(g.dims[2] - 1, static_cast<int>(std::floor(hi.z)))};
}

}  // namespace

DistanceMap distance_map(const std::vector<Trace>& traces, const Geometry& geom) {
  geom.validate();
  std::vector<float> d(geom.voxel_count(), 0.0f);
  for (const Trace& t : traces) {
    validate_trace(t, true);
    for (std::size_t p = 0; p < t.size(); ++p) {
      const double r = t.radii[p];
      const VoxelBox b = ball_box(geom, t.points[p], r);
      for (int k = b.k0; k <= b.k1; ++k)
        for (int j = b.j0; j <= b.j1; ++j)
          for (int i = b.i0; i <= b.i1; ++i) {
            const double value = std::max(0.0, r - distance(t.points[p], geom.world(i, j, k))) / r;
            float& slot = d[geom.linear(i, j, k)];
            slot = std::max(slot, static_cast<float>(value));
          }
    }
  }
  return DistanceMap(Volume3(geom, std::move(d)));
}

double seg_loss(const DistanceMap& pred, const DistanceMap& gt) {
  if (!(pred.geometry() == gt.geometry())) throw Error("seg_loss: geometry mismatch");
  const auto p = pred.values();
  const auto g = gt.values();
  double acc = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] != 0.0f) {
      const double diff = static_cast<double>(p[i]) - static_cast<double>(g[i]);
      acc += diff * diff;
    }
  }
  return std::sqrt(acc);
}

BinaryMask binarize(const DistanceMap& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error("binarize: tau must lie in (0, 1)");
  BinaryMask mask(map.geometry());
  const auto v = map.values();
  for (std::size_t i = 0; i < v.size(); ++i) mask.voxels[i] = v[i] >= tau ? 1 : 0;
  return mask;
}

namespace {

constexpr int cube_index(int dx, int dy, int dz) { return (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1); }

struct CubeTables {
  // 26-adjacency among the 26 neighbours (centre excluded).
  std::array<std::vector<int>, 27> adj26;
  // 6-adjacency among the 18-neighbourhood (centre excluded).
  std::array<std::vector<int>, 27> adj6_n18;
  std::array<bool, 27> in_n18{};
  std::array<bool, 27> is_face{};

  CubeTables() {
    auto coords = [](int c) { return std::array<int, 3>{c % 3 - 1, (c / 3) % 3 - 1, c / 9 - 1}; };
    for (int a = 0; a < 27; ++a) {
      const auto ca = coords(a);
      const int l1 = std::abs(ca[0]) + std::abs(ca[1]) + std::abs(ca[2]);
      in_n18[a] = a != 13 && l1 <= 2;
      is_face[a] = l1 == 1;
    }
    for (int a = 0; a < 27; ++a) {
      if (a == 13) continue;
      const auto ca = coords(a);
      for (int b = 0; b < 27; ++b) {
        if (b == 13 || b == a) continue;
        const auto cb = coords(b);
        const int cheb = std::max({std::abs(ca[0] - cb[0]), std::abs(ca[1] - cb[1]), std::abs(ca[2] - cb[2])});
        const int l1 = std::abs(ca[0] - cb[0]) + std::abs(ca[1] - cb[1]) + std::abs(ca[2] - cb[2]);
        if (cheb == 1) adj26[a].push_back(b);
        if (l1 == 1 && in_n18[a] && in_n18[b]) adj6_n18[a].push_back(b);
      }
    }
  }
};

const CubeTables& tables() {
  static const CubeTables t;
  return t;
}

std::array<bool, 27> neighbourhood(const BinaryMask& mask, int i, int j, int k) {
  std::array<bool, 27> c{};
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) c[cube_index(dx, dy, dz)] = mask.at(i + dx, j + dy, k + dz);
  c[13] = false;
  return c;
}

bool simple_in_cube(const std::array<bool, 27>& c) {
  const CubeTables& t = tables();
  std::array<bool, 27> seen{};
  std::array<int, 27> stack{};

  int fg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (!c[s] || seen[s]) continue;
    if (++fg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int a = stack[--top];
      for (int b : t.adj26[a])
        if (c[b] && !seen[b]) {
          seen[b] = true;
          stack[top++] = b;
        }
    }
  }
  if (fg_components != 1) return false;

  seen.fill(false);
  int bg_components = 0;
  for (int s = 0; s < 27; ++s) {
    if (!t.is_face[s] || c[s] || seen[s]) continue;
    if (++bg_components > 1) return false;
    int top = 0;
    stack[top++] = s;
    seen[s] = true;
    while (top) {
      const int a = stack[--top];
      for (int b : t.adj6_n18[a])
        if (!c[b] && !seen[b]) {
          seen[b] = true;
          stack[top++] = b;
        }
    }
  }
  return bg_components == 1;
}

constexpr std::array<std::array<int, 3>, 6> kDirections{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

}  // namespace

bool is_simple_point(const BinaryMask& mask, int i, int j, int k) {
  return simple_in_cube(neighbourhood(mask, i, j, k));
}

int neighbour_count(const BinaryMask& mask, int i, int j, int k) {
  int n = 0;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if ((dx || dy || dz) && mask.at(i + dx, j + dy, k + dz)) ++n;
  return n;
}

std::vector<std::size_t> skeletonize(const BinaryMask& mask) {
  BinaryMask work = mask;
  const Geometry& g = work.geometry;
  std::vector<std::size_t> foreground;
  for (std::size_t v = 0; v < work.voxels.size(); ++v)
    if (work.voxels[v]) foreground.push_back(v);

  auto deletable = [&](int i, int j, int k) {
    return neighbour_count(work, i, j, k) >= 2 && is_simple_point(work, i, j, k);
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& d : kDirections) {
      // Mark against the state at the start of the sub-iteration, then delete in
      // index order with a re-check so simultaneous removals cannot break topology.
      std::vector<std::size_t> marked;
      for (std::size_t v : foreground) {
        if (!work.voxels[v]) continue;
        const auto [i, j, k] = g.unlinear(v);
        if (work.at(i + d[0], j + d[1], k + d[2])) continue;
        if (deletable(i, j, k)) marked.push_back(v);
      }
      for (std::size_t v : marked) {
        const auto [i, j, k] = g.unlinear(v);
        if (deletable(i, j, k)) {
          work.voxels[v] = 0;
          changed = true;
        }
      }
    }
    std::erase_if(foreground, [&](std::size_t v) { return !work.voxels[v]; });
  }
  return foreground;
}

std::vector<InitialCurve> extract_curves(const std::vector<std::size_t>& skeleton, const Geometry& geom,
                                         int min_curve_voxels) {
  std::vector<std::size_t> voxels = skeleton;
  std::sort(voxels.begin(), voxels.end());
  voxels.erase(std::unique(voxels.begin(), voxels.end()), voxels.end());
  std::unordered_map<std::size_t, std::size_t> slot;
  slot.reserve(voxels.size() * 2);
  for (std::size_t n = 0; n < voxels.size(); ++n) slot[voxels[n]] = n;

  std::vector<std::vector<std::size_t>> nbrs(voxels.size());
  for (std::size_t n = 0; n < voxels.size(); ++n) {
    const auto [i, j, k] = geom.unlinear(voxels[n]);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!(dx || dy || dz) || !geom.in_bounds(i + dx, j + dy, k + dz)) continue;
          const auto it = slot.find(geom.linear(i + dx, j + dy, k + dz));
          if (it != slot.end()) nbrs[n].push_back(it->second);
        }
  }
  auto is_node = [&](std::size_t n) { return nbrs[n].size() != 2; };

  std::vector<std::vector<std::size_t>> paths;
  std::vector<bool> visited(voxels.size(), false);
  std::set<std::pair<std::size_t, std::size_t>> node_links;

  for (std::size_t a = 0; a < voxels.size(); ++a) {
    if (!is_node(a)) continue;
    for (std::size_t first : nbrs[a]) {
      if (is_node(first)) {
        if (node_links.insert({std::min(a, first), std::max(a, first)}).second) paths.push_back({a, first});
        continue;
      }
      if (visited[first]) continue;
      std::vector<std::size_t> path{a};
      std::size_t prev = a, cur = first;
      while (!is_node(cur)) {
        visited[cur] = true;
        path.push_back(cur);
        const std::size_t next = nbrs[cur][0] == prev ? nbrs[cur][1] : nbrs[cur][0];
        prev = cur;
        cur = next;
        if (visited[cur]) break;  // closed onto itself through a node-free loop
      }
      if (is_node(cur)) path.push_back(cur);
      paths.push_back(std::move(path));
    }
  }
  // Node-free closed loops.
  for (std::size_t s = 0; s < voxels.size(); ++s) {
    if (visited[s] || is_node(s)) continue;
    std::vector<std::size_t> path;
    std::size_t prev = nbrs[s][0], cur = s;
    while (!visited[cur]) {
      visited[cur] = true;
      path.push_back(cur);
      const std::size_t next = nbrs[cur][0] == prev ? nbrs[cur][1] : nbrs[cur][0];
      prev = cur;
      cur = next;
    }
    paths.push_back(std::move(path));
  }

  std::vector<InitialCurve> curves;
  for (const auto& path : paths) {
    if (static_cast<int>(path.size()) < min_curve_voxels) continue;
    InitialCurve c;
    c.id = static_cast<int>(curves.size());
    c.points.reserve(path.size());
    for (std::size_t n : path) {
      const auto [i, j, k] = geom.unlinear(voxels[n]);
      c.points.push_back(geom.world(i, j, k));
    }
    curves.push_back(std::move(c));
  }
  return curves;
}

DistanceMap cut_distance_map(const DistanceMap& map, const std::vector<Trace>& traces, int cuts_per_trace,
                             double cut_len_mm) {
  const Geometry& g = map.geometry();
  std::vector<float> values(map.values().begin(), map.values().end());
  if (cuts_per_trace <= 0 || !(cut_len_mm > 0.0)) return DistanceMap(Volume3(g, std::move(values)));
  const double pad = g.min_spacing();

  for (const Trace& t : traces) {
    if (t.size() < 2) continue;
    const auto s = cumulative_arc_length(t.points);
    double r_max = 0.0;
    for (double r : t.radii) r_max = std::max(r_max, r);
    const double reach = r_max + pad;
    for (int c = 0; c < cuts_per_trace; ++c) {
      const double mid = s.back() * (c + 1) / (cuts_per_trace + 1);
      const double w0 = mid - 0.5 * cut_len_mm, w1 = mid + 0.5 * cut_len_mm;
      for (std::size_t p = 0; p < t.size(); ++p) {
        if (s[p] < w0 || s[p] > w1) continue;
        const VoxelBox b = ball_box(g, t.points[p], reach);
        for (int k = b.k0; k <= b.k1; ++k)
          for (int j = b.j0; j <= b.j1; ++j)
            for (int i = b.i0; i <= b.i1; ++i) {
              // Zero only voxels whose nearest centerline point lies inside the window.
              const WorldPoint x = g.world(i, j, k);
              double best = std::numeric_limits<double>::infinity();
              double best_s = 0.0;
              for (std::size_t q = 0; q < t.size(); ++q) {
                if (s[q] < w0 - 2.0 * reach || s[q] > w1 + 2.0 * reach) continue;
                const double dq = distance(x, t.points[q]);
                if (dq < best) {
                  best = dq;
                  best_s = s[q];
                }
              }
              if (best <= reach && best_s >= w0 && best_s <= w1) values[g.linear(i, j, k)] = 0.0f;
            }
      }
    }
  }
  return DistanceMap(Volume3(g, std::move(values)));
}

}  // namespace dost
