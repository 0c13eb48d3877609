#include "dost/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace dost {

const char* to_string(Polarity p) { return p == Polarity::bright ? "bright" : "dark"; }

Polarity parse_polarity(const std::string& s) {
  if (s == "bright" || s == "bright-vessel") return Polarity::bright;
  if (s == "dark" || s == "dark-vessel") return Polarity::dark;
  throw Error("unknown polarity '" + s + "' (expected bright or dark)");
}

void PhantomSpec::validate() const {
  geometry.validate();
  if (n_terminal_branches < 1) throw Error("phantom: n_terminal_branches must be >= 1");
  if (!(radius_min_mm > 0.0)) throw Error("phantom: radius min must be > 0");
  if (!(radius_min_mm <= radius_max_mm)) throw Error("phantom: radius min must be <= max");
  if (!std::isfinite(foreground_mean) || !std::isfinite(background_mean))
    throw Error("phantom: means must be finite");
  if (foreground_mean == background_mean) throw Error("phantom: foreground and background means must differ");
  if (!(noise_sigma >= 0.0)) throw Error("phantom: noise_sigma must be >= 0");
  if (!(min_branch_len_mm > 0.0)) throw Error("phantom: min_branch_len_mm must be > 0");
}

double lumen_membership(double dist, double r, double width) {
  const double lo = r - 0.5 * width;
  if (dist <= lo) return 1.0;
  if (dist >= r + 0.5 * width) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (dist - lo) / width));
}

namespace {

using Rng = std::mt19937_64;

constexpr double kControlStepMm = 8.0;
constexpr double kMaxTurnDeg = 15.0;
constexpr double kAttachmentGapMm = 10.0;
constexpr int kMaxAttempts = 400;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v{n(rng), n(rng), n(rng)};
    const double len = norm(v);
    if (len > 1e-9) return v / len;
  }
}

/// Rotates unit vector d by `angle` towards a random perpendicular direction.
Vec3 tilt(const Vec3& d, double angle, Rng& rng) {
  const Vec3 e1 = any_orthogonal(d);
  const Vec3 e2 = cross(d, e1);
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const Vec3 w = e1 * std::cos(phi) + e2 * std::sin(phi);
  return normalized(d * std::cos(angle) + w * std::sin(angle));
}

Vec3 catmull_rom(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  return ((p1 * 2.0) + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 +
          (-p0 + p1 * 3.0 - p2 * 3.0 + p3) * t3) *
         0.5;
}

/// Smooth curve of (at most) `length` mm from `start`, leaving along `dir`, cut
/// where it first leaves the allowed box, resampled at <= `spacing`.
std::vector<Vec3> grow_curve(const Vec3& start, const Vec3& dir, double length, double spacing,
                             const Geometry& g, double margin, Rng& rng) {
  std::vector<Vec3> ctrl{start};
  Vec3 d = dir;
  const int n_ctrl = static_cast<int>(std::ceil(length / kControlStepMm)) + 1;
  for (int k = 0; k < n_ctrl; ++k) {
    if (k > 0) d = tilt(d, uniform(rng, 0.0, kMaxTurnDeg * std::numbers::pi / 180.0), rng);
    ctrl.push_back(ctrl.back() + d * kControlStepMm);
  }
  std::vector<Vec3> dense;
  constexpr int kSub = 32;
  for (std::size_t i = 0; i + 1 < ctrl.size(); ++i) {
    const Vec3 p0 = i == 0 ? ctrl[0] * 2.0 - ctrl[1] : ctrl[i - 1];
    const Vec3 p3 = i + 2 < ctrl.size() ? ctrl[i + 2] : ctrl[i + 1] * 2.0 - ctrl[i];
    for (int s = 0; s < kSub; ++s) dense.push_back(catmull_rom(p0, ctrl[i], ctrl[i + 1], p3, double(s) / kSub));
  }
  dense.push_back(ctrl.back());

  // Cut at the requested length or where the curve leaves the box.
  std::vector<Vec3> kept{dense.front()};
  double acc = 0.0;
  for (std::size_t i = 1; i < dense.size(); ++i) {
    if (!g.contains(dense[i], margin)) break;
    const double seg = distance(dense[i - 1], dense[i]);
    if (acc + seg >= length) {
      kept.push_back(dense[i - 1] + (dense[i] - dense[i - 1]) * ((length - acc) / seg));
      acc = length;
      break;
    }
    acc += seg;
    kept.push_back(dense[i]);
  }
  if (kept.size() < 2 || acc <= 0.0) return kept;
  const auto n_seg = static_cast<std::size_t>(std::ceil(acc / spacing - 1e-9));
  return resample_polyline(kept, std::max<std::size_t>(n_seg, 1));
}

std::vector<double> tapered_radii(const std::vector<Vec3>& pts, double r0, double r_min) {
  const auto s = cumulative_arc_length(pts);
  const double r1 = std::max(r_min, 0.75 * r0);
  std::vector<double> r(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) r[i] = r0 + (r1 - r0) * (s[i] / s.back());
  return r;
}

Vec3 tangent_at(const std::vector<Vec3>& pts, std::size_t i) {
  const std::size_t a = i == 0 ? 0 : i - 1;
  const std::size_t b = std::min(pts.size() - 1, i + 1);
  return normalized(pts[b] - pts[a]);
}

}  // namespace

GroundTruthTree generate_tree(const PhantomSpec& spec) {
  spec.validate();
  const Geometry& g = spec.geometry;
  Rng rng(spec.seed);
  const double spacing = 0.5 * g.min_spacing();
  const double max_sp = std::max({g.spacing.x, g.spacing.y, g.spacing.z});
  const double margin = spec.radius_max_mm + max_sp;
  const Vec3 lo = g.origin + Vec3{margin, margin, margin};
  const Vec3 hi = g.upper_corner() - Vec3{margin, margin, margin};
  const Vec3 extent = hi - lo;
  const double min_extent = std::min({extent.x, extent.y, extent.z});
  if (!(min_extent > 0.0) || norm(extent) < spec.min_branch_len_mm)
    throw Error("phantom: volume too small to fit min_branch_len_mm");
  const double clearance = 3.0 * max_sp;

  GroundTruthTree tree;
  std::vector<std::vector<double>> attach_arcs;

  // Root branch.
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw Error("phantom: volume too small to fit min_branch_len_mm");
    const Vec3 start{uniform(rng, lo.x, hi.x), uniform(rng, lo.y, hi.y), uniform(rng, lo.z, hi.z)};
    const Vec3 center = (lo + hi) * 0.5;
    Vec3 dir = center - start;
    dir = norm(dir) > 1e-6 ? tilt(normalized(dir), uniform(rng, 0.0, 0.5), rng) : random_unit(rng);
    const double want = std::max(spec.min_branch_len_mm, uniform(rng, 0.6, 1.0) * norm(extent));
    auto pts = grow_curve(start, dir, want, spacing, g, margin, rng);
    if (pts.size() < 2 || arc_length(pts) < spec.min_branch_len_mm) continue;
    Trace t;
    t.id = 0;
    t.radii = tapered_radii(pts, uniform(rng, 0.85, 1.0) * spec.radius_max_mm, spec.radius_min_mm);
    t.points = std::move(pts);
    t.ends = {EndStatus::low_confidence, EndStatus::low_confidence};
    tree.add(std::move(t));
    attach_arcs.emplace_back();
    break;
  }

  const double angle_lo = kBranchAngleMinDeg * std::numbers::pi / 180.0;
  const double angle_hi = kBranchAngleMaxDeg * std::numbers::pi / 180.0;
  const double max_child_len = std::max(spec.min_branch_len_mm, 0.45 * norm(extent));

  for (int b = 1; b < spec.n_terminal_branches; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const auto pi = static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, tree.size() - 1)(rng));
      const Trace& parent = tree.traces[pi];
      const auto s = cumulative_arc_length(parent.points);
      const double s_att = uniform(rng, 0.2, 0.8) * s.back();
      bool crowded = false;
      for (double other : attach_arcs[pi]) crowded = crowded || std::abs(other - s_att) < kAttachmentGapMm;
      if (crowded) continue;
      std::size_t ai = 0;
      while (ai + 1 < s.size() && s[ai] < s_att) ++ai;

      const double theta = uniform(rng, angle_lo, angle_hi);
      const Vec3 dir = tilt(tangent_at(parent.points, ai), theta, rng);
      const double r_par = parent.radii[ai];
      const double r0 = std::max(spec.radius_min_mm, r_par * uniform(rng, kTaperMin, kTaperMax));
      auto pts = grow_curve(parent.points[ai], dir, uniform(rng, spec.min_branch_len_mm, max_child_len), spacing, g,
                            margin, rng);
      if (pts.size() < 2 || arc_length(pts) < spec.min_branch_len_mm) continue;
      auto radii = tapered_radii(pts, r0, spec.radius_min_mm);

      // Keep clear of every other branch once the child has left its parent's lumen.
      const auto cs = cumulative_arc_length(pts);
      const double s_clear = (r_par + r0 + clearance) / std::sin(theta) + 2.0 * max_sp;
      bool clash = false;
      for (std::size_t q = 0; q < pts.size() && !clash; ++q) {
        for (std::size_t ti = 0; ti < tree.size() && !clash; ++ti) {
          if (ti == pi && cs[q] < s_clear) continue;
          const Trace& other = tree.traces[ti];
          for (std::size_t p = 0; p < other.size(); ++p) {
            if (distance(pts[q], other.points[p]) < radii[q] + other.radii[p] + clearance) {
              clash = true;
              break;
            }
          }
        }
      }
      if (clash) continue;

      Trace t;
      t.id = b;
      t.points = std::move(pts);
      t.points.front() = parent.points[ai];
      t.radii = std::move(radii);
      t.ends = {EndStatus::low_confidence, EndStatus::low_confidence};
      attach_arcs[pi].push_back(s_att);
      attach_arcs.emplace_back();
      tree.add(std::move(t), Attachment{pi, ai, 0});
      placed = true;
    }
    if (!placed) throw Error("phantom: could not place branch " + std::to_string(b) + " after repeated attempts");
  }
  return tree;
}

Volume3 rasterize(const GroundTruthTree& tree, const PhantomSpec& spec) {
  spec.validate();
  const Geometry& g = spec.geometry;
  const double width = g.min_spacing();
  std::vector<float> membership(g.voxel_count(), 0.0f);

  for (const Trace& t : tree.traces) {
    validate_trace(t, true);
    for (std::size_t p = 0; p < t.size(); ++p) {
      const Vec3& c = t.points[p];
      const double reach = t.radii[p] + 0.5 * width;
      const Vec3 ulo = g.continuous_index(c - Vec3{reach, reach, reach});
      const Vec3 uhi = g.continuous_index(c + Vec3{reach, reach, reach});
      const int i0 = std::max(0, static_cast<int>(std::ceil(ulo.x)));
      const int j0 = std::max(0, static_cast<int>(std::ceil(ulo.y)));
      const int k0 = std::max(0, static_cast<int>(std::ceil(ulo.z)));
      const int i1 = std::min(g.dims[0] - 1, static_cast<int>(std::floor(uhi.x)));
      const int j1 = std::min(g.dims[1] - 1, static_cast<int>(std::floor(uhi.y)));
      const int k1 = std::min(g.dims[2] - 1, static_cast<int>(std::floor(uhi.z)));
      for (int k = k0; k <= k1; ++k)
        for (int j = j0; j <= j1; ++j)
          for (int i = i0; i <= i1; ++i) {
            const double m = lumen_membership(distance(g.world(i, j, k), c), t.radii[p], width);
            float& slot = membership[g.linear(i, j, k)];
            slot = std::max(slot, static_cast<float>(m));
          }
    }
  }

  double fg = spec.foreground_mean, bg = spec.background_mean;
  if (spec.polarity == Polarity::dark) std::swap(fg, bg);
  Rng rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  std::vector<float> voxels(g.voxel_count());
  for (std::size_t v = 0; v < voxels.size(); ++v) {
    double value = bg + (fg - bg) * membership[v];
    if (spec.noise_sigma > 0.0) value += noise(rng);
    voxels[v] = static_cast<float>(value);
  }
  return Volume3(g, std::move(voxels));
}

}  // namespace dost
