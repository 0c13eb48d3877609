#pragma once

#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "dost/phantom.hpp"
#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

/// D unit vectors spread evenly over the sphere (spherical Fibonacci lattice).
class DirectionSet {
 public:
  explicit DirectionSet(int count = 500);

  int size() const { return static_cast<int>(vectors_.size()); }
  const Vec3& operator[](int m) const { return vectors_[static_cast<std::size_t>(m)]; }
  std::span<const Vec3> vectors() const { return vectors_; }
  /// Index of the lattice vector closest in angle to u.
  int nearest(const Vec3& u) const;

 private:
  std::vector<Vec3> vectors_;
};

inline DirectionSet direction_set(int count) { return DirectionSet(count); }

/// A radius plus a probability distribution over the direction bins.
struct Prediction {
  double radius_mm = 1.0;
  std::vector<double> magnitudes;
};

/// Throws unless radius > 0 and magnitudes are a length-D simplex vector (1e-6).
void validate_prediction(const Prediction& p, int D);

/// Soft target over the bins: k_m proportional to sum_u exp(kappa * v_m . u).
std::vector<double> encode_target(std::span<const Vec3> true_dirs, const DirectionSet& dirs, double kappa);

inline std::vector<double> uniform_magnitudes(int D) {
  return std::vector<double>(static_cast<std::size_t>(D), 1.0 / D);
}

/// Direction/radius source for snake ends.
class Predictor {
 public:
  virtual ~Predictor() = default;
  /// `patch` is null when needs_patch() is false.
  virtual Prediction predict(const WorldPoint& endpoint, const Patch* patch) = 0;
  virtual bool needs_patch() const = 0;
  virtual const DirectionSet& directions() const = 0;
};

/// Reads directions and radii off a known ground-truth tree.
///
/// The nearest ground-truth point supplies the radius. Directions point from the
/// query towards the centerline one look-ahead length (the local radius, at least
/// `lookahead_floor_mm`) along every way the vessel continues from that point:
/// both ways along the branch and into every branch that joins within the
/// look-ahead window. Aiming at a point ahead on the centerline rather than along
/// the bare tangent keeps repeated steps from drifting sideways. The prediction is
/// uniform when the nearest centerline point is a free vessel end or lies farther
/// than twice its radius away.
class OraclePredictor final : public Predictor {
 public:
  OraclePredictor(const GroundTruthTree& gt, const DirectionSet& dirs, double kappa = 20.0,
                  double lookahead_floor_mm = 1.0);

  Prediction predict(const WorldPoint& endpoint, const Patch* patch) override;
  bool needs_patch() const override { return false; }
  const DirectionSet& directions() const override { return dirs_; }

 private:
  const GroundTruthTree& gt_;
  const DirectionSet& dirs_;
  double kappa_;
  double lookahead_floor_;
  std::vector<std::vector<double>> arcs_;
  std::vector<std::vector<std::size_t>> children_;
};

Prediction oracle_predict(const WorldPoint& endpoint, const GroundTruthTree& gt, const DirectionSet& dirs);

/// Image-only predictor: scores each direction by the mean polarity-adjusted
/// intensity along a ray from the patch centre, relative to the patch border.
Prediction analytic_predict(const Patch& patch, const DirectionSet& dirs, Polarity polarity);

class AnalyticPredictor final : public Predictor {
 public:
  AnalyticPredictor(const DirectionSet& dirs, Polarity polarity) : dirs_(dirs), polarity_(polarity) {}
  Prediction predict(const WorldPoint& endpoint, const Patch* patch) override;
  bool needs_patch() const override { return true; }
  const DirectionSet& directions() const override { return dirs_; }

 private:
  const DirectionSet& dirs_;
  Polarity polarity_;
};

// Wire format of the external predictor bridge. All integers and floats little-endian.
//   request:  "DPR1" | u32 side | u32 D | f32 step_mm | side^3 f32 patch values (x-fastest)
//   response: "DPA1" | f32 radius_mm | D f32 magnitudes
namespace wire {

inline constexpr char kRequestMagic[4] = {'D', 'P', 'R', '1'};
inline constexpr char kResponseMagic[4] = {'D', 'P', 'A', '1'};

struct Request {
  std::uint32_t side = 0;
  std::uint32_t directions = 0;
  float step_mm = 0.0f;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_request(const Patch& patch, int D);
/// Throws on bad magic or short buffer.
Request decode_request(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_response(float radius_mm, std::span<const float> magnitudes);
/// Validates and renormalizes: errors on any magnitude < -1e-6 or a sum off 1 by > 1e-3.
Prediction decode_response(std::span<const std::uint8_t> bytes, int D);
inline std::size_t response_size(int D) { return 8 + 4 * static_cast<std::size_t>(D); }

}  // namespace wire

/// Bridge to a trained network running as a child process (`/bin/sh -c command`),
/// speaking the wire format over its stdin/stdout. Calls are serialized by an
/// internal lock, so one bridge may be shared between threads.
class ExternalPredictor final : public Predictor {
 public:
  ExternalPredictor(const std::string& command, const DirectionSet& dirs);
  ~ExternalPredictor() override;
  ExternalPredictor(const ExternalPredictor&) = delete;
  ExternalPredictor& operator=(const ExternalPredictor&) = delete;

  Prediction predict(const WorldPoint& endpoint, const Patch* patch) override;
  bool needs_patch() const override { return true; }
  const DirectionSet& directions() const override { return dirs_; }

 private:
  void shutdown();

  const DirectionSet& dirs_;
  std::mutex mutex_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  bool broken_ = false;
};

}  // namespace dost
