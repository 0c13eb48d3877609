#pragma once

#include <cstdint>
#include <vector>

#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

/// Centerline distance transform: 1 on centerlines, falling linearly to 0 at the
/// lumen wall. Wraps a Volume3 whose values all lie in [0, 1].
class DistanceMap {
 public:
  DistanceMap() = default;
  /// Throws if any value is outside [0, 1].
  explicit DistanceMap(Volume3 values);

  const Volume3& volume() const { return values_; }
  const Geometry& geometry() const { return values_.geometry(); }
  std::span<const float> values() const { return values_.voxels(); }

 private:
  Volume3 values_;
};

struct BinaryMask {
  Geometry geometry;
  std::vector<std::uint8_t> voxels;  // 0 / 1, x-fastest

  BinaryMask() = default;
  explicit BinaryMask(Geometry g) : geometry(g), voxels(g.voxel_count(), 0) {}

  bool at(int i, int j, int k) const {
    return geometry.in_bounds(i, j, k) && voxels[geometry.linear(i, j, k)] != 0;
  }
  void set(int i, int j, int k, bool v = true) { voxels[geometry.linear(i, j, k)] = v ? 1 : 0; }
  std::size_t count() const;
};

/// An initial curve from the skeleton: voxel centres in world mm, no radii yet.
struct InitialCurve {
  int id = 0;
  std::vector<WorldPoint> points;
};

/// Per voxel centre p: max over trace points of max(0, r - |p_ij - p|) / r.
DistanceMap distance_map(const std::vector<Trace>& traces, const Geometry& geom);

/// L2 norm of (pred - gt) over voxels where gt != 0.
double seg_loss(const DistanceMap& pred, const DistanceMap& gt);

/// True where value >= tau; tau must lie in (0, 1).
BinaryMask binarize(const DistanceMap& map, double tau);

/// Topology-preserving 3D thinning. Repeatedly removes simple border voxels that
/// are not curve endpoints, in six directional sub-iterations per pass, until no
/// voxel changes. Returns sorted linear voxel indices.
std::vector<std::size_t> skeletonize(const BinaryMask& mask);

/// Removing voxel (i,j,k) from `mask` preserves local topology: one 26-connected
/// foreground component and one 6-connected background component adjacent to it.
bool is_simple_point(const BinaryMask& mask, int i, int j, int k);

/// Number of foreground 26-neighbours.
int neighbour_count(const BinaryMask& mask, int i, int j, int k);

/// Splits the 26-adjacency skeleton graph at junction voxels (degree >= 3) into
/// maximal simple paths. Junction voxels are repeated as endpoints of every
/// incident path. Paths shorter than min_curve_voxels are dropped.
std::vector<InitialCurve> extract_curves(const std::vector<std::size_t>& skeleton, const Geometry& geom,
                                         int min_curve_voxels = 3);

/// Zeroes `cuts_per_trace` windows of `cut_len_mm` arc length along each trace
/// (at evenly spaced arc positions), simulating breaks in a segmentation.
DistanceMap cut_distance_map(const DistanceMap& map, const std::vector<Trace>& traces, int cuts_per_trace,
                             double cut_len_mm);

}  // namespace dost
