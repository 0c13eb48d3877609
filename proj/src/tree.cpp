#include "dost/tree.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <unordered_map>

namespace dost {

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
};

/// Total order used to make pairwise statistics independent of argument order.
bool canonical_less(const Trace& a, const Trace& b) {
  if (a.id != b.id) return a.id < b.id;
  if (a.size() != b.size()) return a.size() < b.size();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int axis = 0; axis < 3; ++axis)
      if (a.points[i][axis] != b.points[i][axis]) return a.points[i][axis] < b.points[i][axis];
  return false;
}

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double sd() const {
    if (n == 0) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - m * m));
  }
};

Vec3 local_tangent(const Trace& t, std::size_t i) {
  const std::size_t lo = i > 0 ? i - 1 : i;
  const std::size_t hi = i + 1 < t.size() ? i + 1 : i;
  const Vec3 d = t.points[hi] - t.points[lo];
  return norm(d) > 0.0 ? normalized(d) : Vec3{1.0, 0.0, 0.0};
}

constexpr int kRingSamples = 8;

ConnectionStats ordered_stats(const Trace& a, const Trace& b, const Volume3& vol) {
  ConnectionStats s;
  s.endpoints = closest_pair(a, b);
  const WorldPoint pa = a.points[s.endpoints.first];
  const WorldPoint pb = b.points[s.endpoints.second];
  s.gap_mm = distance(pa, pb);

  Moments fg, bg;
  const Geometry& g = vol.geometry();
  for (const Trace* t : {&a, &b}) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const WorldPoint& p = t->points[i];
      fg.add(interp(vol, p));
      const Vec3 tan = local_tangent(*t, i);
      const Vec3 u = any_orthogonal(tan);
      const Vec3 w = cross(tan, u);
      const double ring = 2.0 * t->radii[i];
      for (int k = 0; k < kRingSamples; ++k) {
        const double th = 2.0 * std::numbers::pi * k / kRingSamples;
        const WorldPoint q = p + (u * std::cos(th) + w * std::sin(th)) * ring;
        if (g.contains(q)) bg.add(interp(vol, q));
      }
    }
  }

  const double range = vol.max_value() - vol.min_value();
  const double floor = 1e-3 * (range > 0.0 ? range : 1.0);
  s.i_f = fg.mean();
  s.delta_f = std::max(fg.sd(), floor);
  s.i_b = bg.mean();
  s.delta_b = std::max(bg.sd(), floor);
  s.evaluable = bg.n >= static_cast<std::size_t>(kRingSamples);

  Moments gap;
  const double step = 0.5 * g.min_spacing();
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(s.gap_mm / step)));
  for (std::size_t k = 0; k <= n; ++k) gap.add(interp(vol, pa + (pb - pa) * (static_cast<double>(k) / n)));
  s.i_g = gap.mean();

  s.score = s.evaluable ? connection_score(s.i_g, s.i_f, s.delta_f, s.i_b, s.delta_b) : 0.0;
  return s;
}

}  // namespace

double connection_score(double x, double mean_f, double sd_f, double mean_b, double sd_b) {
  if (!(sd_f > 0.0) || !(sd_b > 0.0)) throw Error("connection_score: standard deviations must be > 0");
  auto log_density = [](double v, double m, double sd) {
    const double z = (v - m) / sd;
    return -0.5 * z * z - std::log(sd);
  };
  // Equal widths: factored so that x at the midpoint of the means gives exactly 0.5.
  const double diff = sd_f == sd_b ? (mean_b - mean_f) * (2.0 * x - (mean_f + mean_b)) / (2.0 * sd_f * sd_f)
                                   : log_density(x, mean_b, sd_b) - log_density(x, mean_f, sd_f);
  return 1.0 / (1.0 + std::exp(diff));
}

std::pair<std::size_t, std::size_t> closest_pair(const Trace& a, const Trace& b) {
  if (a.empty() || b.empty()) throw Error("closest_pair: empty trace");
  std::pair<std::size_t, std::size_t> best{0, 0};
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const Vec3 d = a.points[i] - b.points[j];
      const double d2 = dot(d, d);
      if (d2 < best_d) {
        best_d = d2;
        best = {i, j};
      }
    }
  return best;
}

ConnectionStats connection_stats(const Trace& ti, const Trace& tj, const Volume3& vol) {
  if (ti.empty() || tj.empty()) throw Error("connection_stats: empty trace");
  validate_trace(ti, false);
  validate_trace(tj, false);
  if (!canonical_less(tj, ti)) return ordered_stats(ti, tj, vol);
  ConnectionStats s = ordered_stats(tj, ti, vol);
  std::swap(s.endpoints.first, s.endpoints.second);
  return s;
}

SnakeGraph build_graph(const std::vector<Trace>& traces, const Volume3& vol, const GraphOptions& opt,
                       const std::vector<std::pair<int, int>>& touching) {
  if (!(opt.score_min >= 0.0 && opt.score_min <= 1.0)) throw Error("build_graph: score_min must be in [0, 1]");
  if (!(opt.gap_max_mm >= 0.0)) throw Error("build_graph: gap_max must be >= 0");
  SnakeGraph graph;
  std::set<int> ids;
  for (const auto& t : traces) {
    if (!ids.insert(t.id).second) throw Error("build_graph: duplicate trace id " + std::to_string(t.id));
    graph.vertices.push_back(t.id);
  }
  std::set<std::pair<int, int>> touch;
  for (auto [x, y] : touching) touch.insert({std::min(x, y), std::max(x, y)});

  for (std::size_t i = 0; i < traces.size(); ++i) {
    for (std::size_t j = i + 1; j < traces.size(); ++j) {
      const Trace* a = &traces[i];
      const Trace* b = &traces[j];
      if (b->id < a->id) std::swap(a, b);
      const bool touches = touch.count({a->id, b->id}) > 0;
      if (!touches) {
        const auto cp = closest_pair(*a, *b);
        if (distance(a->points[cp.first], b->points[cp.second]) > opt.gap_max_mm) continue;
      }
      GraphEdge e{a->id, b->id, connection_stats(*a, *b, vol)};
      if (touches) {
        e.stats.score = 1.0;
      } else if (!e.stats.evaluable || e.stats.score < opt.score_min) {
        continue;
      }
      graph.edges.push_back(e);
    }
  }
  std::sort(graph.edges.begin(), graph.edges.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::pair(x.a, x.b) < std::pair(y.a, y.b); });
  return graph;
}

std::vector<GraphEdge> mst(const SnakeGraph& graph) {
  std::unordered_map<int, std::size_t> index;
  for (int v : graph.vertices) index.emplace(v, index.size());
  for (const auto& e : graph.edges) {
    if (e.a == e.b) throw Error("mst: self-loop on vertex " + std::to_string(e.a));
    for (int v : {e.a, e.b})
      if (!index.count(v)) index.emplace(v, index.size());
  }
  std::vector<GraphEdge> sorted = graph.edges;
  for (auto& e : sorted)
    if (e.b < e.a) {
      std::swap(e.a, e.b);
      std::swap(e.stats.endpoints.first, e.stats.endpoints.second);
    }
  std::sort(sorted.begin(), sorted.end(), [](const GraphEdge& x, const GraphEdge& y) {
    const double wx = 1.0 - x.stats.score, wy = 1.0 - y.stats.score;
    if (wx != wy) return wx < wy;
    return std::pair(x.a, x.b) < std::pair(y.a, y.b);
  });
  UnionFind uf(index.size());
  std::vector<GraphEdge> kept;
  for (const auto& e : sorted)
    if (uf.unite(index.at(e.a), index.at(e.b))) kept.push_back(e);
  std::sort(kept.begin(), kept.end(),
            [](const GraphEdge& x, const GraphEdge& y) { return std::pair(x.a, x.b) < std::pair(y.a, y.b); });
  return kept;
}

VesselTree merge(const std::vector<Trace>& traces, const std::vector<GraphEdge>& edges, double spacing_mm) {
  if (!(spacing_mm > 0.0)) throw Error("merge: spacing must be > 0");
  std::unordered_map<int, std::size_t> index;
  int next_id = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!index.emplace(traces[i].id, i).second)
      throw Error("merge: duplicate trace id " + std::to_string(traces[i].id));
    next_id = std::max(next_id, traces[i].id + 1);
  }

  UnionFind uf(traces.size());
  for (const auto& e : edges) {
    const auto ia = index.find(e.a), ib = index.find(e.b);
    if (ia == index.end() || ib == index.end()) throw Error("merge: edge references an unknown trace");
    if (!uf.unite(ia->second, ib->second)) throw Error("merge: edge set contains a cycle");
  }

  struct Link {
    std::size_t node;
    std::size_t my_point;
    std::size_t other_point;
  };
  VesselTree out;
  out.traces = traces;
  std::vector<std::vector<Link>> adj(traces.size());
  auto connect = [&](std::size_t x, std::size_t px, std::size_t y, std::size_t py) {
    adj[x].push_back({y, px, py});
    adj[y].push_back({x, py, px});
  };

  for (const auto& e : edges) {
    const std::size_t ia = index.at(e.a), ib = index.at(e.b);
    const std::size_t pa = e.stats.endpoints.first, pb = e.stats.endpoints.second;
    const Trace& ta = traces[ia];
    const Trace& tb = traces[ib];
    if (pa >= ta.size() || pb >= tb.size()) throw Error("merge: edge endpoint out of range");
    const WorldPoint A = ta.points[pa], B = tb.points[pb];
    const double gap = distance(A, B);
    if (!(gap > 0.0)) {
      connect(ia, pa, ib, pb);
      continue;
    }
    Trace g;
    g.id = next_id++;
    g.kind = TraceKind::gap;
    g.ends = {EndStatus::collision, EndStatus::collision};
    g.radii = {ta.radii[pa], tb.radii[pb]};
    const auto segments = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(gap / spacing_mm)));
    g.points = resample_polyline({A, B}, segments, &g.radii);
    const std::size_t gi = out.traces.size();
    const std::size_t last = g.size() - 1;
    out.traces.push_back(std::move(g));
    adj.emplace_back();
    connect(ia, pa, gi, 0);
    connect(gi, last, ib, pb);
  }

  out.parent.assign(out.traces.size(), std::nullopt);
  std::vector<bool> seen(out.traces.size(), false);
  for (std::size_t root = 0; root < out.traces.size(); ++root) {
    if (seen[root]) continue;
    seen[root] = true;
    std::deque<std::size_t> queue{root};
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop_front();
      for (const Link& l : adj[cur]) {
        if (seen[l.node]) continue;
        seen[l.node] = true;
        out.parent[l.node] = Attachment{cur, l.my_point, l.other_point};
        queue.push_back(l.node);
      }
    }
  }
  out.validate_links();
  return out;
}

VesselTree unlinked_tree(const std::vector<Trace>& traces, const std::vector<std::pair<int, int>>& touching) {
  VesselTree out;
  for (const auto& t : traces) out.add(t);
  out.touching = touching;
  return out;
}

}  // namespace dost
