#pragma once

#include <array>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dost/phantom.hpp"
#include "dost/predictor.hpp"
#include "dost/proposal.hpp"
#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

struct TracerConfig {
  double alpha = 0.1;  // elasticity
  double beta = 0.1;   // stiffness
  double gamma_factor = 0.5;
  double entropy_threshold = 0.9;
  int max_iters_per_end = 500;
  double resample_spacing_mm = 0.0;  // <= 0: minimum voxel spacing
  int min_trace_points = 5;
  double descent_step = 0.0;  // <= 0: 0.1 * minimum voxel spacing
  double intensity_weight = 1.0;
  Polarity polarity = Polarity::bright;
  int patch_side = 19;

  void validate() const;
  /// Copy with the geometry-dependent defaults filled in.
  TracerConfig resolved(const Geometry& g) const;
};

struct EnergyBreakdown {
  double internal = 0.0;
  double external = 0.0;
  double total = 0.0;
};

/// Sum over interior points of alpha*|c_s|^2 + beta*|c_ss|^2 with central
/// differences on the mean point spacing; the endpoints carry no internal energy.
double internal_energy(const Trace& t, const TracerConfig& cfg);

/// Sum over points of -intensity_weight * polarity * I(p).
double external_energy(const Trace& t, const Volume3& vol, const TracerConfig& cfg);

EnergyBreakdown snake_energy(const Trace& t, const Volume3& vol, const TracerConfig& cfg);

/// Endpoint stretching force: picks the bin maximizing sign(outward . v_m) * k_m
/// and returns k_m * v_m, or zero when no bin points outward with positive mass.
Vec3 stretch_force(const Prediction& pred, const Vec3& outward, const DirectionSet& dirs);

/// Shannon entropy of k in bits over log2(D). 0 log 0 = 0. Throws unless k is a
/// simplex vector to 1e-6.
double normalized_entropy(std::span<const double> k);

/// Even arc-length resampling at about `spacing_mm`; ends are kept exactly and
/// radii follow by linear interpolation.
Trace resample(const Trace& t, double spacing_mm);

struct RelaxResult {
  double energy_before = 0.0;
  double energy_after = 0.0;
  int halvings = 0;
  bool moved = false;
};

/// One explicit gradient step on the interior points (ends frozen) with
/// backtracking: the step is halved until the total energy does not increase,
/// and abandoned if that never happens.
RelaxResult relax_interior(Trace& t, const Volume3& vol, const TracerConfig& cfg);

/// Read view of the accepted traces, with a spatial hash for collision queries.
class TraceRegistry {
 public:
  explicit TraceRegistry(double cell_mm = 4.0) : cell_(cell_mm) {}

  void add(const Trace& t);
  /// Id of the accepted trace with a point within max(r, r_other) of p (closest such
  /// point wins), or nullopt.
  std::optional<int> collides(const WorldPoint& p, double r) const;
  const std::vector<Trace>& traces() const { return traces_; }
  std::size_t size() const { return traces_.size(); }

 private:
  struct Entry {
    std::size_t trace;
    std::size_t point;
  };
  std::int64_t key(int cx, int cy, int cz) const;
  std::array<int, 3> cell_of(const WorldPoint& p) const;

  double cell_;
  double max_radius_ = 0.0;
  std::vector<Trace> traces_;
  std::unordered_map<std::int64_t, std::vector<Entry>> grid_;
};

struct StepResult {
  Trace trace;
  std::array<EndStatus, 2> ends{EndStatus::growing, EndStatus::growing};
  /// Ids of accepted traces hit by this step.
  std::vector<int> touched;
  RelaxResult relax;
};

/// One snake iteration: stretch every growing end by gamma_factor * r along the
/// predicted direction (or terminate it), relax the interior, resample.
/// `cfg` must be resolved.
StepResult evolve_step(const Trace& t, const Volume3& vol, Predictor& predictor, const TracerConfig& cfg,
                       const TraceRegistry& registry);

struct SnakeResult {
  std::optional<Trace> trace;  // nullopt when rejected (too short)
  std::vector<int> touched;
  int iterations = 0;
};

/// Seeds a snake from an initial curve and evolves it until both ends stop or the
/// iteration cap is hit. `cfg` must be resolved.
SnakeResult trace_snake(const InitialCurve& init, const Volume3& vol, Predictor& predictor, const TracerConfig& cfg,
                        const TraceRegistry& registry);

struct TracingResult {
  std::vector<Trace> traces;
  std::vector<std::pair<int, int>> touching;
  bool parallel = false;
};

/// Curve processing order: longer polylines first, ties by lower curve id.
std::vector<std::size_t> tracing_order(const std::vector<InitialCurve>& curves);

/// Traces every curve. Sequential mode grows each snake against all previously
/// accepted ones. Parallel mode traces against an empty snapshot on worker
/// threads, then trims ends that run into earlier traces in a sequential commit
/// pass (same order), so its output can differ from sequential mode.
TracingResult trace_all(const std::vector<InitialCurve>& curves, const Volume3& vol, Predictor& predictor,
                        const TracerConfig& cfg, bool parallel = false);

}  // namespace dost
