#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

struct ConnectionStats {
  double i_f = 0.0;      // foreground mean
  double delta_f = 0.0;  // foreground standard deviation (floored)
  double i_b = 0.0;      // background mean
  double delta_b = 0.0;  // background standard deviation (floored)
  double i_g = 0.0;      // mean intensity along the gap segment
  double gap_mm = 0.0;
  /// Closest point pair: index into the first trace, index into the second.
  std::pair<std::size_t, std::size_t> endpoints{0, 0};
  double score = 0.0;
  /// False when fewer than 8 background ring samples fell inside the volume.
  bool evaluable = true;
};

/// Posterior-style ratio N_f(x) / (N_f(x) + N_b(x)) of two normal densities,
/// evaluated in log space so far-apart classes do not underflow.
double connection_score(double x, double mean_f, double sd_f, double mean_b, double sd_b);

/// Closest point pair between two traces (first minimum in point order).
std::pair<std::size_t, std::size_t> closest_pair(const Trace& a, const Trace& b);

/// Intensity-based plausibility that the straight gap between two traces is
/// vessel. Symmetric in its arguments.
ConnectionStats connection_stats(const Trace& ti, const Trace& tj, const Volume3& vol);

struct GraphEdge {
  int a = 0;  // lower trace id
  int b = 0;  // higher trace id
  ConnectionStats stats;  // endpoints.first indexes trace a
};

struct SnakeGraph {
  std::vector<int> vertices;
  std::vector<GraphEdge> edges;
};

struct GraphOptions {
  double score_min = 0.05;
  double gap_max_mm = 10.0;
};

/// Edges for every pair within gap_max scoring at least score_min; pairs listed in
/// `touching` always get a score-1 edge. Trace ids must be unique.
SnakeGraph build_graph(const std::vector<Trace>& traces, const Volume3& vol, const GraphOptions& opt = {},
                       const std::vector<std::pair<int, int>>& touching = {});

/// Kruskal minimum spanning forest on weight 1 - score; ties go to the lower
/// (a, b) pair. Result is sorted by (a, b).
std::vector<GraphEdge> mst(const SnakeGraph& graph);

/// Joins traces along forest edges. Each edge with a non-zero gap becomes a
/// straight gap-kind trace resampled at `spacing_mm` with linearly interpolated
/// radii; a zero gap links the two traces directly. Every component is oriented
/// from its lowest-index trace. Throws on a cyclic edge set.
VesselTree merge(const std::vector<Trace>& traces, const std::vector<GraphEdge>& edges, double spacing_mm);

/// Traces as a forest of unlinked roots.
VesselTree unlinked_tree(const std::vector<Trace>& traces, const std::vector<std::pair<int, int>>& touching = {});

}  // namespace dost
