#pragma once

#include <cstdint>

#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

enum class Polarity { bright, dark };

const char* to_string(Polarity p);
Polarity parse_polarity(const std::string& s);

/// +1 for bright vessels, -1 for dark vessels.
inline double polarity_sign(Polarity p) { return p == Polarity::bright ? 1.0 : -1.0; }

struct PhantomSpec {
  std::uint64_t seed = 1;
  Geometry geometry{{128, 128, 128}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  int n_terminal_branches = 6;
  double radius_min_mm = 1.0;
  double radius_max_mm = 3.0;
  double foreground_mean = 1.0;
  double background_mean = 0.0;
  Polarity polarity = Polarity::bright;
  double noise_sigma = 0.05;
  double min_branch_len_mm = 20.0;

  void validate() const;
};

/// Child branches leave their parent at an angle drawn from this range (degrees).
inline constexpr double kBranchAngleMinDeg = 20.0;
inline constexpr double kBranchAngleMaxDeg = 70.0;
/// Child root radius = parent radius at attachment times uniform(kTaperMin, kTaperMax).
inline constexpr double kTaperMin = 0.6;
inline constexpr double kTaperMax = 0.9;

/// Seeded random tree of smooth branches. Each branch after the first starts on
/// an existing branch; points are spaced at most half the minimum voxel spacing.
GroundTruthTree generate_tree(const PhantomSpec& spec);

/// Intensity volume for a tree: foreground inside the lumen, a half-cosine
/// transition one voxel spacing wide centred on the lumen wall, background
/// elsewhere, plus seeded Gaussian noise. Dark polarity swaps the two means.
Volume3 rasterize(const GroundTruthTree& tree, const PhantomSpec& spec);

/// Membership of a point at `dist` from a centerline with lumen radius `r`:
/// 1 inside, 0 outside, half-cosine over [r - w/2, r + w/2].
double lumen_membership(double dist, double r, double width);

}  // namespace dost
