#include "dost/predictor.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <limits>
#include <numbers>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace dost {

DirectionSet::DirectionSet(int count) {
  if (count < 2) throw Error("direction set: D must be >= 2");
  vectors_.reserve(static_cast<std::size_t>(count));
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * i;
    vectors_.push_back(normalized(Vec3{rho * std::cos(phi), rho * std::sin(phi), z}));
  }
}

int DirectionSet::nearest(const Vec3& u) const {
  int best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < size(); ++m) {
    const double d = dot(vectors_[static_cast<std::size_t>(m)], u);
    if (d > best_dot) {
      best_dot = d;
      best = m;
    }
  }
  return best;
}

void validate_prediction(const Prediction& p, int D) {
  if (!(p.radius_mm > 0.0) || !std::isfinite(p.radius_mm)) throw Error("prediction: radius must be > 0");
  if (static_cast<int>(p.magnitudes.size()) != D) throw Error("prediction: magnitude count differs from D");
  double sum = 0.0;
  for (double k : p.magnitudes) {
    if (!(k >= 0.0) || !std::isfinite(k)) throw Error("prediction: magnitudes must be finite and >= 0");
    sum += k;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw Error("prediction: magnitudes do not sum to 1");
}

std::vector<double> encode_target(std::span<const Vec3> true_dirs, const DirectionSet& dirs, double kappa) {
  if (true_dirs.empty()) throw Error("encode_target: need at least one direction");
  if (!(kappa > 0.0)) throw Error("encode_target: kappa must be > 0");
  std::vector<Vec3> units;
  units.reserve(true_dirs.size());
  for (const Vec3& u : true_dirs) {
    if (!(norm(u) > 0.0)) throw Error("encode_target: zero-length direction");
    units.push_back(normalized(u));
  }
  std::vector<double> k(static_cast<std::size_t>(dirs.size()), 0.0);
  double total = 0.0;
  for (int m = 0; m < dirs.size(); ++m) {
    double acc = 0.0;
    // exp(kappa * (v.u - 1)) keeps the kernel in range for large kappa.
    for (const Vec3& u : units) acc += std::exp(kappa * (dot(dirs[m], u) - 1.0));
    k[static_cast<std::size_t>(m)] = acc;
    total += acc;
  }
  for (double& v : k) v /= total;
  return k;
}

OraclePredictor::OraclePredictor(const GroundTruthTree& gt, const DirectionSet& dirs, double kappa,
                                 double lookahead_floor_mm)
    : gt_(gt), dirs_(dirs), kappa_(kappa), lookahead_floor_(lookahead_floor_mm) {
  if (gt.traces.empty()) throw Error("oracle predictor: empty ground-truth tree");
  gt.validate_links();
  children_.resize(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    validate_trace(gt.traces[i], true);
    arcs_.push_back(cumulative_arc_length(gt.traces[i].points));
    if (gt.parent[i]) children_[gt.parent[i]->parent].push_back(i);
  }
}

namespace {

/// Point at arc length `s` along a polyline with cumulative arcs `arcs`.
Vec3 point_at_arc(const std::vector<Vec3>& pts, const std::vector<double>& arcs, double s) {
  if (s <= 0.0) return pts.front();
  if (s >= arcs.back()) return pts.back();
  const auto it = std::upper_bound(arcs.begin(), arcs.end(), s);
  const auto hi = static_cast<std::size_t>(it - arcs.begin());
  const std::size_t lo = hi - 1;
  const double len = arcs[hi] - arcs[lo];
  const double t = len > 0.0 ? (s - arcs[lo]) / len : 0.0;
  return pts[lo] + (pts[hi] - pts[lo]) * t;
}

}  // namespace

Prediction OraclePredictor::predict(const WorldPoint& endpoint, const Patch*) {
  std::size_t best_t = 0, best_p = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < gt_.size(); ++t) {
    const auto& pts = gt_.traces[t].points;
    for (std::size_t p = 0; p < pts.size(); ++p) {
      const double d = distance(endpoint, pts[p]);
      if (d < best) {
        best = d;
        best_t = t;
        best_p = p;
      }
    }
  }
  const Trace& trace = gt_.traces[best_t];
  Prediction out;
  out.radius_mm = trace.radii[best_p];
  if (best > 2.0 * out.radius_mm) {
    out.magnitudes = uniform_magnitudes(dirs_.size());
    return out;
  }

  // A free vessel end: nothing ahead to point at.
  const bool at_root_tip = best_p == 0 && !gt_.parent[best_t];
  const bool at_leaf_tip = best_p + 1 == trace.size() &&
                           std::none_of(children_[best_t].begin(), children_[best_t].end(), [&](std::size_t c) {
                             return gt_.parent[c]->parent_point == best_p;
                           });
  if (at_root_tip || at_leaf_tip) {
    out.magnitudes = uniform_magnitudes(dirs_.size());
    return out;
  }

  const double look = std::max(out.radius_mm, lookahead_floor_);
  std::vector<Vec3> targets;
  const auto& arcs = arcs_[best_t];
  const double s = arcs[best_p];
  if (best_p + 1 < trace.size()) targets.push_back(point_at_arc(trace.points, arcs, s + look));
  if (best_p > 0) targets.push_back(point_at_arc(trace.points, arcs, s - look));

  for (std::size_t c : children_[best_t]) {
    const Attachment& a = *gt_.parent[c];
    if (std::abs(arcs[a.parent_point] - s) > look) continue;
    const auto& carcs = arcs_[c];
    targets.push_back(point_at_arc(gt_.traces[c].points, carcs, carcs[a.child_point] + look));
  }
  if (const auto& link = gt_.parent[best_t]; link && std::abs(arcs[link->child_point] - s) <= look) {
    const Trace& par = gt_.traces[link->parent];
    const auto& parcs = arcs_[link->parent];
    const double sp = parcs[link->parent_point];
    if (link->parent_point + 1 < par.size()) targets.push_back(point_at_arc(par.points, parcs, sp + look));
    if (link->parent_point > 0) targets.push_back(point_at_arc(par.points, parcs, sp - look));
  }

  std::vector<Vec3> dirs;
  for (const Vec3& target : targets) {
    const Vec3 d = target - endpoint;
    if (norm(d) > 1e-9) dirs.push_back(normalized(d));
  }
  out.magnitudes = dirs.empty() ? uniform_magnitudes(dirs_.size()) : encode_target(dirs, dirs_, kappa_);
  return out;
}

Prediction oracle_predict(const WorldPoint& endpoint, const GroundTruthTree& gt, const DirectionSet& dirs) {
  OraclePredictor oracle(gt, dirs);
  return oracle.predict(endpoint, nullptr);
}

Prediction analytic_predict(const Patch& patch, const DirectionSet& dirs, Polarity polarity) {
  const double sign = polarity_sign(polarity);
  const double step = patch.sample_step_mm;
  const int reach = patch.half();
  const double extent = reach * step;
  const double background = sign * patch.border_mean();
  const double centre = sign * patch.sample({0, 0, 0});

  std::vector<double> score(static_cast<std::size_t>(dirs.size()), 0.0);
  double total = 0.0;
  for (int m = 0; m < dirs.size(); ++m) {
    double acc = 0.0;
    for (int k = 1; k <= reach; ++k) acc += sign * patch.sample(dirs[m] * (k * step));
    const double s = reach > 0 ? std::max(0.0, acc / reach - background) : 0.0;
    score[static_cast<std::size_t>(m)] = s;
    total += s;
  }

  Prediction out;
  if (!(total > 0.0)) {
    out.magnitudes = uniform_magnitudes(dirs.size());
    out.radius_mm = step;
    return out;
  }
  for (double& s : score) s /= total;
  out.magnitudes = std::move(score);

  const int best = static_cast<int>(std::max_element(out.magnitudes.begin(), out.magnitudes.end()) -
                                    out.magnitudes.begin());
  // Radius: mean half-level crossing over rays within ~81-99 degrees of the best direction.
  const double level = background + 0.5 * (centre - background);
  double sum = 0.0;
  int n = 0;
  if (centre > background) {
    const double fine = 0.25 * step;
    for (int m = 0; m < dirs.size(); ++m) {
      if (std::abs(dot(dirs[m], dirs[best])) >= 0.15) continue;
      double prev_t = 0.0, prev_v = centre, crossing = extent;
      for (double t = fine; t <= extent + 1e-9; t += fine) {
        const double v = sign * patch.sample(dirs[m] * t);
        if (v < level) {
          crossing = prev_t + (t - prev_t) * (prev_v - level) / (prev_v - v);
          break;
        }
        prev_t = t;
        prev_v = v;
      }
      sum += crossing;
      ++n;
    }
  }
  out.radius_mm = std::clamp(n ? sum / n : step, step, std::max(step, extent));
  return out;
}

Prediction AnalyticPredictor::predict(const WorldPoint&, const Patch* patch) {
  if (!patch) throw Error("analytic predictor: patch required");
  return analytic_predict(*patch, dirs_, polarity_);
}

namespace wire {
namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  return static_cast<std::uint32_t>(in[at]) | (static_cast<std::uint32_t>(in[at + 1]) << 8) |
         (static_cast<std::uint32_t>(in[at + 2]) << 16) | (static_cast<std::uint32_t>(in[at + 3]) << 24);
}

float get_f32(std::span<const std::uint8_t> in, std::size_t at) { return std::bit_cast<float>(get_u32(in, at)); }

}  // namespace

std::vector<std::uint8_t> encode_request(const Patch& patch, int D) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + patch.values.size() * 4);
  out.insert(out.end(), kRequestMagic, kRequestMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(patch.side));
  put_u32(out, static_cast<std::uint32_t>(D));
  put_f32(out, static_cast<float>(patch.sample_step_mm));
  for (float v : patch.values) put_f32(out, v);
  return out;
}

Request decode_request(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw Error("bridge: short request header");
  if (std::memcmp(bytes.data(), kRequestMagic, 4) != 0) throw Error("bridge: bad request magic");
  Request r;
  r.side = get_u32(bytes, 4);
  r.directions = get_u32(bytes, 8);
  r.step_mm = get_f32(bytes, 12);
  const std::size_t n = static_cast<std::size_t>(r.side) * r.side * r.side;
  if (bytes.size() < 16 + 4 * n) throw Error("bridge: short request body");
  r.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.values[i] = get_f32(bytes, 16 + 4 * i);
  return r;
}

std::vector<std::uint8_t> encode_response(float radius_mm, std::span<const float> magnitudes) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * magnitudes.size());
  out.insert(out.end(), kResponseMagic, kResponseMagic + 4);
  put_f32(out, radius_mm);
  for (float k : magnitudes) put_f32(out, k);
  return out;
}

Prediction decode_response(std::span<const std::uint8_t> bytes, int D) {
  if (bytes.size() < response_size(D)) throw Error("bridge: short response");
  if (std::memcmp(bytes.data(), kResponseMagic, 4) != 0) throw Error("bridge: bad response magic");
  Prediction p;
  p.radius_mm = get_f32(bytes, 4);
  if (!(p.radius_mm > 0.0) || !std::isfinite(p.radius_mm)) throw Error("bridge: radius must be > 0");
  p.magnitudes.resize(static_cast<std::size_t>(D));
  double sum = 0.0;
  for (int m = 0; m < D; ++m) {
    const double k = get_f32(bytes, 8 + 4 * static_cast<std::size_t>(m));
    if (!std::isfinite(k) || k < -1e-6) throw Error("bridge: negative or non-finite magnitude");
    p.magnitudes[static_cast<std::size_t>(m)] = std::max(0.0, k);
    sum += std::max(0.0, k);
  }
  if (std::abs(sum - 1.0) > 1e-3) throw Error("bridge: magnitudes do not sum to 1");
  for (double& k : p.magnitudes) k /= sum;
  return p;
}

}  // namespace wire

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("bridge: write to predictor failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::read(fd, data + got, n - got);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("bridge: read from predictor failed: ") + std::strerror(errno));
    }
    if (r == 0)
      throw Error("bridge: short read from predictor (" + std::to_string(got) + " of " + std::to_string(n) +
                  " bytes)");
    got += static_cast<std::size_t>(r);
  }
}

}  // namespace

ExternalPredictor::ExternalPredictor(const std::string& command, const DirectionSet& dirs) : dirs_(dirs) {
  std::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0) throw Error("bridge: pipe() failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error("bridge: pipe() failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    throw Error("bridge: fork() failed");
  }
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

ExternalPredictor::~ExternalPredictor() { shutdown(); }

void ExternalPredictor::shutdown() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

Prediction ExternalPredictor::predict(const WorldPoint&, const Patch* patch) {
  if (!patch) throw Error("external predictor: patch required");
  std::lock_guard lock(mutex_);
  if (broken_) throw Error("bridge: predictor connection is closed after an earlier error");
  try {
    const auto request = wire::encode_request(*patch, dirs_.size());
    write_all(to_child_, request.data(), request.size());
    std::vector<std::uint8_t> response(wire::response_size(dirs_.size()));
    read_all(from_child_, response.data(), response.size());
    return wire::decode_response(response, dirs_.size());
  } catch (...) {
    broken_ = true;
    throw;
  }
}

}  // namespace dost
