#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "dost/geometry.hpp"

namespace dost {

enum class EndStatus { growing, low_confidence, collision, max_iters };

const char* to_string(EndStatus s);

enum class TraceKind { traced, gap };

/// A centerline: ordered points with a lumen radius per point.
struct Trace {
  int id = 0;
  std::vector<WorldPoint> points;
  std::vector<double> radii;
  /// [0] is the s = 0 end (first point), [1] the s = 1 end (last point).
  std::array<EndStatus, 2> ends{EndStatus::growing, EndStatus::growing};
  TraceKind kind = TraceKind::traced;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// growing while either end grows; otherwise the more specific of the end states
  /// (max-iters, then collision, then low-confidence).
  EndStatus status() const;
};

/// Cumulative arc length at each point, starting at 0.
std::vector<double> cumulative_arc_length(const std::vector<WorldPoint>& points);
double arc_length(const std::vector<WorldPoint>& points);
inline double arc_length(const Trace& t) { return arc_length(t.points); }

/// Places n_segments + 1 points at uniform arc length along a polyline; both ends
/// are kept exactly. `values` (e.g. radii), when non-null, is interpolated by arc
/// length in place. The polyline must have non-zero length.
std::vector<WorldPoint> resample_polyline(const std::vector<WorldPoint>& points, std::size_t n_segments,
                                          std::vector<double>* values = nullptr);

/// Throws unless points/radii agree in length and every value is finite.
void validate_trace(const Trace& t, bool require_positive_radii);

/// Where a trace joins its parent.
struct Attachment {
  std::size_t parent = 0;        // index into TraceTree::traces
  std::size_t parent_point = 0;  // point index on the parent
  std::size_t child_point = 0;   // point index on the child
};

/// Traces with optional parent links. Serves as ground truth trees, vessel trees
/// and the in-memory form of trace files.
struct TraceTree {
  std::vector<Trace> traces;
  std::vector<std::optional<Attachment>> parent;  // same length as traces
  /// Trace-id pairs whose snakes touched during tracing.
  std::vector<std::pair<int, int>> touching;

  std::size_t size() const { return traces.size(); }
  void add(Trace t, std::optional<Attachment> link = std::nullopt) {
    traces.push_back(std::move(t));
    parent.push_back(link);
  }
  /// Connected-component label per trace (labels dense, ordered by first trace index).
  std::vector<std::size_t> component_labels() const;
  std::size_t component_count() const;
  /// Throws if parent links reference missing traces/points or form a cycle.
  void validate_links() const;
};

using GroundTruthTree = TraceTree;
using VesselTree = TraceTree;

}  // namespace dost
