#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dost/trace.hpp"

namespace dost {

/// Which predicted traces count as one tracked object.
enum class IdentityMode {
  trace,      // every predicted trace is its own object
  component,  // traces joined by parent links form one object
};

const char* to_string(IdentityMode m);
IdentityMode parse_identity_mode(const std::string& s);

struct MatchOptions {
  /// A trace counts as found (ground truth) or genuine (prediction) when at least
  /// this fraction of its points is matched.
  double majority = 0.5;
};

struct Correspondence {
  /// Per ground-truth trace, per point.
  std::vector<std::vector<bool>> gt_matched;
  /// Identity of the nearest matching predicted point, -1 when unmatched.
  std::vector<std::vector<int>> gt_contributor;
  /// Per predicted trace, per point.
  std::vector<std::vector<bool>> pred_matched;
  /// Distance to the nearest ground-truth point, for matched predicted points.
  std::vector<std::vector<double>> pred_nearest_mm;
  /// Identity per predicted trace.
  std::vector<int> pred_identity;
  /// Per ground-truth trace: contributing identity of each matched point.
  std::vector<std::vector<int>> contributing;
  int TP = 0;
  int FN = 0;
  int FP = 0;
  std::size_t T = 0;  // ground-truth point count
};

/// Radius-thresholded matching. A ground-truth point matches when a predicted point
/// lies strictly inside its radius; its contributor is the identity of the nearest
/// such point (exact distance ties go to the identity that is among the nearest
/// for more points of the same ground-truth trace, then to the lower identity).
/// A predicted point matches when it lies strictly inside the radius of some
/// ground-truth point. `pred_identity` (one per predicted trace) defaults to the
/// trace index; FP is counted per identity.
Correspondence match_points(const std::vector<Trace>& pred, const std::vector<Trace>& gt,
                            const MatchOptions& opt = {}, const std::vector<int>* pred_identity = nullptr);

struct OvAi {
  double ov = 0.0;
  double ai = 0.0;
};

/// OV = matched points over all points (both sides); AI = mean nearest-ground-truth
/// distance of matched predicted points.
OvAi compute_ov_ai(const Correspondence& corr);

struct MotScores {
  int ids = 0;
  double mota = 0.0;
  double idf1 = 0.0;
};

/// MOTA = 1 - (FN + FP + IDS) / T, IDF1 = 2TP / (2TP + FP + FN). Throws when T = 0.
MotScores mot_scores(int tp, int fn, int fp, int ids, std::size_t T);

/// IDS = sum over ground-truth traces of (distinct contributors - 1).
MotScores compute_mot(const Correspondence& corr);

struct MatchReport {
  double ov = 0.0;
  double ai = 0.0;
  int ids = 0;
  double mota = 0.0;
  double idf1 = 0.0;
  Correspondence corr;
};

/// Evaluates a predicted tree against a ground-truth tree. Ground-truth objects
/// are traces; predicted objects follow `mode`.
MatchReport evaluate(const TraceTree& pred, const TraceTree& gt, IdentityMode mode = IdentityMode::component,
                     const MatchOptions& opt = {});

}  // namespace dost
