#include "dost/snake.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace dost {

void TracerConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw Error("tracer: alpha and beta must be >= 0");
  if (!(gamma_factor > 0.0)) throw Error("tracer: gamma_factor must be > 0");
  if (!(entropy_threshold > 0.0 && entropy_threshold < 1.0)) throw Error("tracer: entropy_threshold must be in (0, 1)");
  if (max_iters_per_end < 0) throw Error("tracer: max_iters_per_end must be >= 0");
  if (!std::isfinite(resample_spacing_mm) || !std::isfinite(descent_step))
    throw Error("tracer: spacing and step must be finite");
  if (min_trace_points < 2) throw Error("tracer: min_trace_points must be >= 2");
  if (!(intensity_weight > 0.0)) throw Error("tracer: intensity_weight must be > 0");
  if (patch_side <= 0 || patch_side % 2 == 0) throw Error("tracer: patch_side must be a positive odd integer");
}

TracerConfig TracerConfig::resolved(const Geometry& g) const {
  validate();
  TracerConfig c = *this;
  if (c.resample_spacing_mm <= 0.0) c.resample_spacing_mm = g.min_spacing();
  if (c.descent_step <= 0.0) c.descent_step = 0.1 * g.min_spacing();
  return c;
}

double internal_energy(const Trace& t, const TracerConfig& cfg) {
  const std::size_t n = t.size();
  if (n < 3) throw Error("internal_energy: need at least 3 points");
  const double h = arc_length(t.points) / static_cast<double>(n - 1);
  if (!(h > 0.0)) return 0.0;
  double e = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Vec3 cs = (t.points[i + 1] - t.points[i - 1]) / (2.0 * h);
    const Vec3 css = (t.points[i + 1] - t.points[i] * 2.0 + t.points[i - 1]) / (h * h);
    e += cfg.alpha * dot(cs, cs) + cfg.beta * dot(css, css);
  }
  return e;
}

double external_energy(const Trace& t, const Volume3& vol, const TracerConfig& cfg) {
  const double w = cfg.intensity_weight * polarity_sign(cfg.polarity);
  double e = 0.0;
  for (const auto& p : t.points) e -= w * interp(vol, p);
  return e;
}

EnergyBreakdown snake_energy(const Trace& t, const Volume3& vol, const TracerConfig& cfg) {
  EnergyBreakdown b;
  b.internal = t.size() >= 3 ? internal_energy(t, cfg) : 0.0;
  b.external = external_energy(t, vol, cfg);
  b.total = b.internal + b.external;
  return b;
}

Vec3 stretch_force(const Prediction& pred, const Vec3& outward, const DirectionSet& dirs) {
  if (static_cast<int>(pred.magnitudes.size()) != dirs.size())
    throw Error("stretch_force: magnitude count differs from direction count");
  double best = 0.0;
  int best_m = -1;
  for (int m = 0; m < dirs.size(); ++m) {
    const double d = dot(outward, dirs[m]);
    const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    const double score = sgn * pred.magnitudes[static_cast<std::size_t>(m)];
    if (score > best) {
      best = score;
      best_m = m;
    }
  }
  if (best_m < 0) return {};
  return dirs[best_m] * pred.magnitudes[static_cast<std::size_t>(best_m)];
}

double normalized_entropy(std::span<const double> k) {
  if (k.size() < 2) throw Error("normalized_entropy: need at least 2 bins");
  double sum = 0.0, h = 0.0;
  for (double v : k) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("normalized_entropy: magnitudes must be >= 0");
    sum += v;
    if (v > 0.0) h -= v * std::log2(v);
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error("normalized_entropy: magnitudes must sum to 1");
  return std::clamp(h / std::log2(static_cast<double>(k.size())), 0.0, 1.0);
}

Trace resample(const Trace& t, double spacing_mm) {
  if (t.size() < 2) throw Error("resample: need at least 2 points");
  if (!(spacing_mm > 0.0)) throw Error("resample: spacing must be > 0");
  const double length = arc_length(t.points);
  if (!(length > 0.0)) throw Error("resample: degenerate zero-length trace");
  const auto segments = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(length / spacing_mm)));
  Trace out = t;
  out.radii = t.radii;
  out.points = resample_polyline(t.points, segments, &out.radii);
  return out;
}

RelaxResult relax_interior(Trace& t, const Volume3& vol, const TracerConfig& cfg) {
  RelaxResult res;
  const std::size_t n = t.size();
  res.energy_before = res.energy_after = snake_energy(t, vol, cfg).total;
  if (n < 3) return res;
  const double h = arc_length(t.points) / static_cast<double>(n - 1);
  if (!(h > 0.0)) return res;

  const auto& p = t.points;
  auto first_diff = [&](std::size_t i) { return (p[i + 1] - p[i - 1]) / (2.0 * h); };
  auto second_diff = [&](std::size_t i) { return (p[i + 1] - p[i] * 2.0 + p[i - 1]) / (h * h); };
  auto interior = [&](std::size_t i) { return i >= 1 && i + 1 < n; };

  // The stencils scale with the mean spacing h, which itself moves with the points.
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    s1 += dot(first_diff(i), first_diff(i));
    s2 += dot(second_diff(i), second_diff(i));
  }
  const double dE_dh = -(2.0 * cfg.alpha * s1 + 4.0 * cfg.beta * s2) / h;
  auto unit_or_zero = [](const Vec3& v) { return norm(v) > 0.0 ? normalized(v) : Vec3{}; };

  const double w = cfg.intensity_weight * polarity_sign(cfg.polarity);
  std::vector<Vec3> grad(n);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    Vec3 g = (unit_or_zero(p[k] - p[k - 1]) - unit_or_zero(p[k + 1] - p[k])) * (dE_dh / static_cast<double>(n - 1));
    if (interior(k - 1)) g += first_diff(k - 1) * (cfg.alpha / h) + second_diff(k - 1) * (2.0 * cfg.beta / (h * h));
    if (interior(k + 1)) g += first_diff(k + 1) * (-cfg.alpha / h) + second_diff(k + 1) * (2.0 * cfg.beta / (h * h));
    g += second_diff(k) * (-4.0 * cfg.beta / (h * h));
    if (gradient_defined(vol, p[k])) g -= gradient(vol, p[k]) * w;
    grad[k] = g;
  }

  double largest = 0.0;
  for (std::size_t k = 1; k + 1 < n; ++k) largest = std::max(largest, norm(grad[k]) * cfg.descent_step);
  if (!(largest > 0.0)) return res;
  // No point moves more than half a voxel per step.
  const double cap = 0.5 * vol.geometry().min_spacing();
  double scale = cfg.descent_step * std::min(1.0, cap / largest);

  constexpr int kMaxHalvings = 12;
  Trace trial = t;
  for (int halving = 0; halving <= kMaxHalvings; ++halving, scale *= 0.5) {
    for (std::size_t k = 1; k + 1 < n; ++k) trial.points[k] = t.points[k] - grad[k] * scale;
    const double e = snake_energy(trial, vol, cfg).total;
    if (e <= res.energy_before) {
      t.points = trial.points;
      res.energy_after = e;
      res.halvings = halving;
      res.moved = true;
      return res;
    }
  }
  res.halvings = kMaxHalvings;
  return res;
}

std::int64_t TraceRegistry::key(int cx, int cy, int cz) const {
  constexpr std::int64_t kOffset = 1 << 20;
  return ((static_cast<std::int64_t>(cx) + kOffset) << 42) | ((static_cast<std::int64_t>(cy) + kOffset) << 21) |
         (static_cast<std::int64_t>(cz) + kOffset);
}

std::array<int, 3> TraceRegistry::cell_of(const WorldPoint& p) const {
  return {static_cast<int>(std::floor(p.x / cell_)), static_cast<int>(std::floor(p.y / cell_)),
          static_cast<int>(std::floor(p.z / cell_))};
}

void TraceRegistry::add(const Trace& t) {
  const std::size_t ti = traces_.size();
  traces_.push_back(t);
  for (std::size_t p = 0; p < t.size(); ++p) {
    const auto c = cell_of(t.points[p]);
    grid_[key(c[0], c[1], c[2])].push_back({ti, p});
    max_radius_ = std::max(max_radius_, t.radii[p]);
  }
}

std::optional<int> TraceRegistry::collides(const WorldPoint& p, double r) const {
  if (traces_.empty()) return std::nullopt;
  const double reach = std::max(r, max_radius_);
  const auto lo = cell_of(p - Vec3{reach, reach, reach});
  const auto hi = cell_of(p + Vec3{reach, reach, reach});
  std::optional<int> hit;
  double best = std::numeric_limits<double>::infinity();
  for (int cz = lo[2]; cz <= hi[2]; ++cz)
    for (int cy = lo[1]; cy <= hi[1]; ++cy)
      for (int cx = lo[0]; cx <= hi[0]; ++cx) {
        const auto it = grid_.find(key(cx, cy, cz));
        if (it == grid_.end()) continue;
        for (const Entry& e : it->second) {
          const Trace& other = traces_[e.trace];
          const double d = distance(p, other.points[e.point]);
          if (d <= std::max(r, other.radii[e.point]) && (d < best || (d == best && other.id < *hit))) {
            best = d;
            hit = other.id;
          }
        }
      }
  return hit;
}

StepResult evolve_step(const Trace& t, const Volume3& vol, Predictor& predictor, const TracerConfig& cfg,
                       const TraceRegistry& registry) {
  if (t.size() < 2) throw Error("evolve_step: trace needs at least 2 points");
  StepResult res;
  res.trace = t;
  Trace& cur = res.trace;
  const DirectionSet& dirs = predictor.directions();

  for (int end = 0; end < 2; ++end) {
    if (cur.ends[static_cast<std::size_t>(end)] != EndStatus::growing) continue;
    auto& status = cur.ends[static_cast<std::size_t>(end)];
    const std::size_t n = cur.size();
    const WorldPoint tip = end == 0 ? cur.points.front() : cur.points.back();
    const WorldPoint inner = end == 0 ? cur.points[1] : cur.points[n - 2];
    const Vec3 out_vec = tip - inner;
    if (!(norm(out_vec) > 0.0)) {
      status = EndStatus::low_confidence;
      continue;
    }
    const Vec3 outward = normalized(out_vec);

    std::optional<Patch> patch;
    if (predictor.needs_patch()) patch = extract_patch(vol, tip, cfg.patch_side, vol.geometry().min_spacing());
    const Prediction pred = predictor.predict(tip, patch ? &*patch : nullptr);
    validate_prediction(pred, dirs.size());

    if (normalized_entropy(pred.magnitudes) > cfg.entropy_threshold) {
      status = EndStatus::low_confidence;
      continue;
    }
    const Vec3 force = stretch_force(pred, outward, dirs);
    if (!(norm(force) > 0.0)) {
      status = EndStatus::low_confidence;
      continue;
    }
    const WorldPoint next = tip + normalized(force) * (cfg.gamma_factor * pred.radius_mm);
    // Never grow out of the scan.
    if (!vol.geometry().contains(next)) {
      status = EndStatus::low_confidence;
      continue;
    }
    if (end == 0) {
      cur.points.insert(cur.points.begin(), next);
      cur.radii.insert(cur.radii.begin(), pred.radius_mm);
    } else {
      cur.points.push_back(next);
      cur.radii.push_back(pred.radius_mm);
    }
    if (const auto other = registry.collides(next, pred.radius_mm)) {
      status = EndStatus::collision;
      res.touched.push_back(*other);
    }
  }

  res.relax = relax_interior(cur, vol, cfg);
  cur = resample(cur, cfg.resample_spacing_mm);
  res.ends = cur.ends;
  return res;
}

SnakeResult trace_snake(const InitialCurve& init, const Volume3& vol, Predictor& predictor, const TracerConfig& cfg,
                        const TraceRegistry& registry) {
  SnakeResult res;
  if (init.points.size() < 2 || !(arc_length(init.points) > 0.0)) return res;

  Trace seed;
  seed.id = init.id;
  seed.points = init.points;
  seed.radii.assign(init.points.size(), 1.0);
  seed = resample(seed, cfg.resample_spacing_mm);

  std::array<double, 2> end_radius{};
  for (int end = 0; end < 2; ++end) {
    const WorldPoint tip = end == 0 ? seed.points.front() : seed.points.back();
    std::optional<Patch> patch;
    if (predictor.needs_patch()) patch = extract_patch(vol, tip, cfg.patch_side, vol.geometry().min_spacing());
    const Prediction pred = predictor.predict(tip, patch ? &*patch : nullptr);
    validate_prediction(pred, predictor.directions().size());
    end_radius[static_cast<std::size_t>(end)] = pred.radius_mm;
  }
  const auto s = cumulative_arc_length(seed.points);
  for (std::size_t i = 0; i < seed.size(); ++i)
    seed.radii[i] = end_radius[0] + (end_radius[1] - end_radius[0]) * (s[i] / s.back());

  Trace cur = std::move(seed);
  while (cur.ends[0] == EndStatus::growing || cur.ends[1] == EndStatus::growing) {
    if (res.iterations >= cfg.max_iters_per_end) {
      for (auto& e : cur.ends)
        if (e == EndStatus::growing) e = EndStatus::max_iters;
      break;
    }
    StepResult step = evolve_step(cur, vol, predictor, cfg, registry);
    cur = std::move(step.trace);
    res.touched.insert(res.touched.end(), step.touched.begin(), step.touched.end());
    ++res.iterations;
  }
  if (static_cast<int>(cur.size()) >= cfg.min_trace_points) res.trace = std::move(cur);
  return res;
}

std::vector<std::size_t> tracing_order(const std::vector<InitialCurve>& curves) {
  std::vector<double> length(curves.size());
  for (std::size_t i = 0; i < curves.size(); ++i) length[i] = arc_length(curves[i].points);
  std::vector<std::size_t> order(curves.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (length[a] != length[b]) return length[a] > length[b];
    return curves[a].id < curves[b].id;
  });
  return order;
}

namespace {

void add_touch(std::vector<std::pair<int, int>>& touching, int a, int b) {
  const std::pair<int, int> key{std::min(a, b), std::max(a, b)};
  if (std::find(touching.begin(), touching.end(), key) == touching.end()) touching.push_back(key);
}

/// Cuts the ends of `t` back to the first point that does not collide with the
/// registry, keeping that last colliding point, as sequential tracing would.
std::optional<Trace> commit_trim(Trace t, const TraceRegistry& registry, std::vector<int>& touched) {
  const std::size_t n = t.size();
  std::vector<std::optional<int>> hit(n);
  for (std::size_t i = 0; i < n; ++i) hit[i] = registry.collides(t.points[i], t.radii[i]);
  std::size_t first = 0;
  while (first < n && hit[first]) ++first;
  if (first == n) return std::nullopt;
  std::size_t last = n - 1;
  while (hit[last]) --last;
  std::size_t lo = first, hi = last;
  if (first > 0) {
    lo = first - 1;
    touched.push_back(*hit[lo]);
    t.ends[0] = EndStatus::collision;
  }
  if (last + 1 < n) {
    hi = last + 1;
    touched.push_back(*hit[hi]);
    t.ends[1] = EndStatus::collision;
  }
  t.points = std::vector<WorldPoint>(t.points.begin() + static_cast<std::ptrdiff_t>(lo),
                                     t.points.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
  t.radii = std::vector<double>(t.radii.begin() + static_cast<std::ptrdiff_t>(lo),
                                t.radii.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
  return t;
}

}  // namespace

TracingResult trace_all(const std::vector<InitialCurve>& curves, const Volume3& vol, Predictor& predictor,
                        const TracerConfig& cfg, bool parallel) {
  const TracerConfig rc = cfg.resolved(vol.geometry());
  const auto order = tracing_order(curves);
  TracingResult out;
  out.parallel = parallel;
  TraceRegistry registry;

  auto accept = [&](Trace t, const std::vector<int>& touched) {
    t.id = static_cast<int>(out.traces.size());
    for (int other : touched) add_touch(out.touching, other, t.id);
    registry.add(t);
    out.traces.push_back(std::move(t));
  };

  if (!parallel) {
    for (std::size_t idx : order) {
      SnakeResult r = trace_snake(curves[idx], vol, predictor, rc, registry);
      if (r.trace) accept(std::move(*r.trace), r.touched);
    }
    return out;
  }

  std::vector<SnakeResult> results(curves.size());
  const TraceRegistry empty;
  const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(curves.size())));
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < order.size(); i += workers)
            results[order[i]] = trace_snake(curves[order[i]], vol, predictor, rc, empty);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t idx : order) {
    if (!results[idx].trace) continue;
    std::vector<int> touched;
    auto trimmed = commit_trim(std::move(*results[idx].trace), registry, touched);
    if (!trimmed || static_cast<int>(trimmed->size()) < rc.min_trace_points) continue;
    accept(std::move(*trimmed), touched);
  }
  return out;
}

}  // namespace dost
