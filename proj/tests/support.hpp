#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dost/geometry.hpp"
#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace testing {

inline dost::Geometry cube(int n, double spacing = 1.0, dost::Vec3 origin = {}) {
  return dost::Geometry{{n, n, n}, {spacing, spacing, spacing}, origin};
}

inline dost::Volume3 make_volume(const dost::Geometry& g, const std::function<double(const dost::WorldPoint&)>& f) {
  std::vector<float> v(g.voxel_count());
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) v[g.linear(i, j, k)] = static_cast<float>(f(g.world(i, j, k)));
  return dost::Volume3(g, std::move(v));
}

/// Evenly spaced straight trace from a to b with n points and constant radius.
inline dost::Trace line_trace(int id, dost::Vec3 a, dost::Vec3 b, std::size_t n, double radius) {
  dost::Trace t;
  t.id = id;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    t.points.push_back(a + (b - a) * s);
    t.radii.push_back(radius);
  }
  return t;
}

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(DOST_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace testing
