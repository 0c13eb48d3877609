#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace dost {

/// Raised for contract violations and malformed inputs throughout the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }

inline Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  if (n == 0.0) throw Error("cannot normalize a zero-length vector");
  return v / n;
}

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Any unit vector orthogonal to `v` (v need not be normalized).
inline Vec3 any_orthogonal(const Vec3& v) {
  const Vec3 a = std::abs(v.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  return normalized(cross(v, a));
}

/// A 3D position in world millimetres.
using WorldPoint = Vec3;

/// Voxel lattice layout shared by volumes, distance maps and masks.
/// Voxel (i, j, k) sits at origin + (i*sx, j*sy, k*sz); storage is x-fastest.
struct Geometry {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  std::size_t linear(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
  }

  std::array<int, 3> unlinear(std::size_t idx) const {
    const auto nx = static_cast<std::size_t>(dims[0]);
    const auto ny = static_cast<std::size_t>(dims[1]);
    return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny), static_cast<int>(idx / (nx * ny))};
  }

  bool in_bounds(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }

  WorldPoint world(int i, int j, int k) const {
    return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
  }

  /// Continuous lattice coordinate of a world point.
  Vec3 continuous_index(const WorldPoint& p) const {
    return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
  }

  double min_spacing() const { return std::min({spacing.x, spacing.y, spacing.z}); }

  WorldPoint upper_corner() const {
    return world(dims[0] - 1, dims[1] - 1, dims[2] - 1);
  }

  /// True when p lies inside the lattice box by at least `margin_mm` on every side.
  bool contains(const WorldPoint& p, double margin_mm = 0.0) const {
    const WorldPoint hi = upper_corner();
    return p.x >= origin.x + margin_mm && p.y >= origin.y + margin_mm && p.z >= origin.z + margin_mm &&
           p.x <= hi.x - margin_mm && p.y <= hi.y - margin_mm && p.z <= hi.z - margin_mm;
  }

  void validate() const {
    for (int d : dims)
      if (d <= 0) throw Error("geometry: dims must be positive");
    if (!(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0))
      throw Error("geometry: spacing components must be > 0");
    if (!is_finite(spacing) || !is_finite(origin)) throw Error("geometry: non-finite spacing or origin");
  }

  bool operator==(const Geometry&) const = default;
};

}  // namespace dost
