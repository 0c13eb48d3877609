#include "dost/trace.hpp"

#include <numeric>
#include <string>

namespace dost {

const char* to_string(EndStatus s) {
  switch (s) {
    case EndStatus::growing: return "growing";
    case EndStatus::low_confidence: return "terminated-low-confidence";
    case EndStatus::collision: return "terminated-collision";
    case EndStatus::max_iters: return "terminated-max-iters";
  }
  return "unknown";
}

EndStatus Trace::status() const {
  if (ends[0] == EndStatus::growing || ends[1] == EndStatus::growing) return EndStatus::growing;
  for (EndStatus s : {EndStatus::max_iters, EndStatus::collision})
    if (ends[0] == s || ends[1] == s) return s;
  return EndStatus::low_confidence;
}

std::vector<double> cumulative_arc_length(const std::vector<WorldPoint>& points) {
  std::vector<double> s(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) s[i] = s[i - 1] + distance(points[i - 1], points[i]);
  return s;
}

double arc_length(const std::vector<WorldPoint>& points) {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
  return total;
}

std::vector<WorldPoint> resample_polyline(const std::vector<WorldPoint>& points, std::size_t n_segments,
                                          std::vector<double>* values) {
  if (points.size() < 2) throw Error("resample: need at least two points");
  if (n_segments == 0) throw Error("resample: need at least one segment");
  if (values && values->size() != points.size()) throw Error("resample: value list length mismatch");
  const auto s = cumulative_arc_length(points);
  const double total = s.back();
  if (!(total > 0.0)) throw Error("resample: degenerate zero-length polyline");

  std::vector<WorldPoint> out;
  std::vector<double> out_values;
  out.reserve(n_segments + 1);
  std::size_t seg = 0;
  for (std::size_t q = 0; q <= n_segments; ++q) {
    if (q == n_segments) {
      out.push_back(points.back());
      if (values) out_values.push_back(values->back());
      break;
    }
    const double target = total * static_cast<double>(q) / static_cast<double>(n_segments);
    while (seg + 2 < points.size() && s[seg + 1] < target) ++seg;
    const double len = s[seg + 1] - s[seg];
    const double t = len > 0.0 ? std::clamp((target - s[seg]) / len, 0.0, 1.0) : 0.0;
    out.push_back(points[seg] + (points[seg + 1] - points[seg]) * t);
    if (values) out_values.push_back((*values)[seg] + ((*values)[seg + 1] - (*values)[seg]) * t);
  }
  if (values) *values = std::move(out_values);
  return out;
}

void validate_trace(const Trace& t, bool require_positive_radii) {
  if (t.points.size() != t.radii.size())
    throw Error("trace " + std::to_string(t.id) + ": points and radii differ in length");
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    if (!is_finite(t.points[i]) || !std::isfinite(t.radii[i]))
      throw Error("trace " + std::to_string(t.id) + ": non-finite value at point " + std::to_string(i));
    if (require_positive_radii && !(t.radii[i] > 0.0))
      throw Error("trace " + std::to_string(t.id) + ": non-positive radius at point " + std::to_string(i));
  }
}

namespace {

struct DisjointSet {
  std::vector<std::size_t> up;
  explicit DisjointSet(std::size_t n) : up(n) { std::iota(up.begin(), up.end(), std::size_t{0}); }
  std::size_t find(std::size_t a) {
    while (up[a] != a) a = up[a] = up[up[a]];
    return a;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    up[b] = a;
    return true;
  }
};

}  // namespace

std::vector<std::size_t> TraceTree::component_labels() const {
  DisjointSet ds(traces.size());
  for (std::size_t i = 0; i < parent.size(); ++i)
    if (parent[i] && parent[i]->parent < traces.size()) ds.unite(i, parent[i]->parent);
  std::vector<std::size_t> label(traces.size());
  std::vector<std::size_t> root_label(traces.size(), static_cast<std::size_t>(-1));
  std::size_t next = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const std::size_t r = ds.find(i);
    if (root_label[r] == static_cast<std::size_t>(-1)) root_label[r] = next++;
    label[i] = root_label[r];
  }
  return label;
}

std::size_t TraceTree::component_count() const {
  const auto labels = component_labels();
  std::size_t n = 0;
  for (auto l : labels) n = std::max(n, l + 1);
  return n;
}

void TraceTree::validate_links() const {
  if (parent.size() != traces.size()) throw Error("trace tree: parent list length mismatch");
  DisjointSet ds(traces.size());
  for (std::size_t i = 0; i < parent.size(); ++i) {
    if (!parent[i]) continue;
    const Attachment& a = *parent[i];
    if (a.parent >= traces.size() || a.parent == i) throw Error("trace tree: invalid parent index");
    if (a.parent_point >= traces[a.parent].size() || a.child_point >= traces[i].size())
      throw Error("trace tree: attachment point out of range");
    if (!ds.unite(i, a.parent)) throw Error("trace tree: parent links form a cycle");
  }
}

}  // namespace dost
