#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dost/geometry.hpp"

namespace dost {

/// Immutable 3D scalar grid with world-coordinate geometry.
class Volume3 {
 public:
  Volume3() = default;
  /// Throws if the voxel count does not match the geometry or a value is not finite.
  Volume3(Geometry geometry, std::vector<float> voxels);
  Volume3(Geometry geometry, float fill);

  const Geometry& geometry() const { return geometry_; }
  std::span<const float> voxels() const { return voxels_; }

  float at(int i, int j, int k) const { return voxels_[geometry_.linear(i, j, k)]; }
  /// Zero outside the lattice.
  float at_or_zero(int i, int j, int k) const {
    return geometry_.in_bounds(i, j, k) ? voxels_[geometry_.linear(i, j, k)] : 0.0f;
  }

  float min_value() const;
  float max_value() const;

 private:
  Geometry geometry_;
  std::vector<float> voxels_;
};

/// Trilinear interpolation at a world point. Lattice neighbours outside the
/// volume contribute 0, so the field fades to zero past the last voxel.
double interp(const Volume3& vol, const WorldPoint& p);

/// Central difference of interp along each world axis, step = half the axis
/// spacing. Throws "gradient at margin" unless p is at least one voxel inside.
Vec3 gradient(const Volume3& vol, const WorldPoint& p);

/// True when gradient(vol, p) is defined.
bool gradient_defined(const Volume3& vol, const WorldPoint& p);

/// Cubic sample of a volume around a centre point.
struct Patch {
  int side = 19;
  std::vector<float> values;  // side^3, x-fastest
  WorldPoint center;
  double sample_step_mm = 1.0;

  int half() const { return side / 2; }
  float at(int i, int j, int k) const {
    return values[static_cast<std::size_t>(i) +
                  static_cast<std::size_t>(side) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(side) * k)];
  }
  /// Trilinear sample at a world offset (mm) from the centre; zero outside the patch.
  double sample(const Vec3& offset_mm) const;
  /// Mean of the outer shell of the patch.
  double border_mean() const;
};

/// step_mm <= 0 selects the volume's minimum spacing.
Patch extract_patch(const Volume3& vol, const WorldPoint& c, int side = 19, double step_mm = 0.0);

// DVOL: one JSON header line, then nx*ny*nz little-endian f32 values (x-fastest).
void write_dvol(std::ostream& out, const Volume3& vol);
Volume3 read_dvol(std::istream& in);
void write_dvol(const std::string& path, const Volume3& vol);
Volume3 read_dvol(const std::string& path);

}  // namespace dost
