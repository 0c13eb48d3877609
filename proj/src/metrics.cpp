#include "dost/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

namespace dost {

const char* to_string(IdentityMode m) { return m == IdentityMode::trace ? "trace" : "component"; }

IdentityMode parse_identity_mode(const std::string& s) {
  if (s == "trace") return IdentityMode::trace;
  if (s == "component") return IdentityMode::component;
  throw Error("unknown identity mode '" + s + "' (expected trace or component)");
}

namespace {

/// Uniform grid over the points of a trace list; exact distances only.
class PointHash {
 public:
  struct Entry {
    std::size_t trace;
    std::size_t point;
  };

  PointHash(const std::vector<Trace>& traces, double cell) : traces_(traces), cell_(cell) {
    for (std::size_t t = 0; t < traces.size(); ++t)
      for (std::size_t p = 0; p < traces[t].size(); ++p) grid_[key(cell_of(traces[t].points[p]))].push_back({t, p});
  }

  /// Calls f(entry, distance) for every stored point within one cell of q's cell,
  /// which covers every point closer than the cell size.
  template <class F>
  void near(const WorldPoint& q, F&& f) const {
    const auto c = cell_of(q);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto it = grid_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == grid_.end()) continue;
          for (const Entry& e : it->second) f(e, distance(q, traces_[e.trace].points[e.point]));
        }
  }

 private:
  std::array<std::int64_t, 3> cell_of(const WorldPoint& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
            static_cast<std::int64_t>(std::floor(p.z / cell_))};
  }
  static std::int64_t key(const std::array<std::int64_t, 3>& c) {
    constexpr std::int64_t kOffset = 1 << 20;
    return ((c[0] + kOffset) << 42) | ((c[1] + kOffset) << 21) | (c[2] + kOffset);
  }

  const std::vector<Trace>& traces_;
  double cell_;
  std::unordered_map<std::int64_t, std::vector<Entry>> grid_;
};

}  // namespace

Correspondence match_points(const std::vector<Trace>& pred, const std::vector<Trace>& gt, const MatchOptions& opt,
                            const std::vector<int>* pred_identity) {
  if (!(opt.majority > 0.0 && opt.majority <= 1.0)) throw Error("match_points: majority must be in (0, 1]");
  double max_r = 0.0;
  for (const auto& t : gt) {
    validate_trace(t, true);
    for (double r : t.radii) max_r = std::max(max_r, r);
  }
  for (const auto& t : pred) validate_trace(t, false);

  Correspondence c;
  if (pred_identity) {
    if (pred_identity->size() != pred.size()) throw Error("match_points: one identity per predicted trace required");
    c.pred_identity = *pred_identity;
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) c.pred_identity.push_back(static_cast<int>(i));
  }

  const double cell = max_r > 0.0 ? max_r : 1.0;
  const PointHash pred_hash(pred, cell);
  const PointHash gt_hash(gt, cell);

  c.gt_matched.resize(gt.size());
  c.gt_contributor.resize(gt.size());
  c.contributing.resize(gt.size());
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const Trace& t = gt[g];
    c.T += t.size();
    c.gt_matched[g].assign(t.size(), false);
    c.gt_contributor[g].assign(t.size(), -1);
    std::vector<std::set<int>> candidates(t.size());
    std::map<int, int> nearest_count;
    for (std::size_t p = 0; p < t.size(); ++p) {
      const double r = t.radii[p];
      double best = std::numeric_limits<double>::infinity();
      pred_hash.near(t.points[p], [&](const PointHash::Entry& e, double d) {
        if (!(d < r)) return;
        const int id = c.pred_identity[e.trace];
        if (d < best) {
          best = d;
          candidates[p] = {id};
        } else if (d == best) {
          candidates[p].insert(id);
        }
      });
      if (candidates[p].empty()) continue;
      c.gt_matched[g][p] = true;
      for (int id : candidates[p]) ++nearest_count[id];
    }
    std::size_t matched = 0;
    for (std::size_t p = 0; p < t.size(); ++p) {
      if (candidates[p].empty()) continue;
      ++matched;
      int chosen = *candidates[p].begin();
      for (int id : candidates[p])
        if (nearest_count[id] > nearest_count[chosen]) chosen = id;
      c.gt_contributor[g][p] = chosen;
      c.contributing[g].push_back(chosen);
    }
    if (!t.empty() && static_cast<double>(matched) >= opt.majority * static_cast<double>(t.size()))
      ++c.TP;
    else
      ++c.FN;
  }

  c.pred_matched.resize(pred.size());
  c.pred_nearest_mm.resize(pred.size());
  std::map<int, std::pair<std::size_t, std::size_t>> per_identity;  // matched, total
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Trace& t = pred[i];
    c.pred_matched[i].assign(t.size(), false);
    c.pred_nearest_mm[i].assign(t.size(), std::numeric_limits<double>::infinity());
    auto& counts = per_identity[c.pred_identity[i]];
    for (std::size_t p = 0; p < t.size(); ++p) {
      bool hit = false;
      double nearest = std::numeric_limits<double>::infinity();
      gt_hash.near(t.points[p], [&](const PointHash::Entry& e, double d) {
        nearest = std::min(nearest, d);
        if (d < gt[e.trace].radii[e.point]) hit = true;
      });
      c.pred_matched[i][p] = hit;
      c.pred_nearest_mm[i][p] = nearest;
      counts.first += hit ? 1 : 0;
      counts.second += 1;
    }
  }
  for (const auto& [id, counts] : per_identity)
    if (counts.second > 0 &&
        static_cast<double>(counts.first) < opt.majority * static_cast<double>(counts.second))
      ++c.FP;
  return c;
}

OvAi compute_ov_ai(const Correspondence& corr) {
  std::size_t matched = 0, total = 0;
  for (const auto& v : corr.gt_matched) {
    total += v.size();
    matched += static_cast<std::size_t>(std::count(v.begin(), v.end(), true));
  }
  double dist_sum = 0.0;
  std::size_t dist_n = 0;
  for (std::size_t i = 0; i < corr.pred_matched.size(); ++i) {
    total += corr.pred_matched[i].size();
    for (std::size_t p = 0; p < corr.pred_matched[i].size(); ++p) {
      if (!corr.pred_matched[i][p]) continue;
      ++matched;
      dist_sum += corr.pred_nearest_mm[i][p];
      ++dist_n;
    }
  }
  if (total == 0) throw Error("compute_ov_ai: no points on either side");
  OvAi r;
  r.ov = static_cast<double>(matched) / static_cast<double>(total);
  r.ai = dist_n ? dist_sum / static_cast<double>(dist_n) : 0.0;
  return r;
}

MotScores mot_scores(int tp, int fn, int fp, int ids, std::size_t T) {
  if (T == 0) throw Error("compute_mot: ground truth has no points");
  if (tp < 0 || fn < 0 || fp < 0 || ids < 0) throw Error("compute_mot: negative count");
  MotScores s;
  s.ids = ids;
  s.mota = 1.0 - static_cast<double>(fn + fp + ids) / static_cast<double>(T);
  const int denom = 2 * tp + fp + fn;
  s.idf1 = denom > 0 ? 2.0 * tp / denom : 0.0;
  return s;
}

MotScores compute_mot(const Correspondence& corr) {
  int ids = 0;
  for (const auto& ids_of_trace : corr.contributing) {
    const std::set<int> distinct(ids_of_trace.begin(), ids_of_trace.end());
    ids += std::max(0, static_cast<int>(distinct.size()) - 1);
  }
  return mot_scores(corr.TP, corr.FN, corr.FP, ids, corr.T);
}

MatchReport evaluate(const TraceTree& pred, const TraceTree& gt, IdentityMode mode, const MatchOptions& opt) {
  std::vector<int> identity;
  if (mode == IdentityMode::component) {
    for (std::size_t label : pred.component_labels()) identity.push_back(static_cast<int>(label));
  } else {
    for (std::size_t i = 0; i < pred.size(); ++i) identity.push_back(static_cast<int>(i));
  }
  MatchReport r;
  r.corr = match_points(pred.traces, gt.traces, opt, &identity);
  const OvAi oa = compute_ov_ai(r.corr);
  const MotScores mot = compute_mot(r.corr);
  r.ov = oa.ov;
  r.ai = oa.ai;
  r.ids = mot.ids;
  r.mota = mot.mota;
  r.idf1 = mot.idf1;
  return r;
}

}  // namespace dost
