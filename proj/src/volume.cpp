#include "dost/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dost {

Volume3::Volume3(Geometry geometry, std::vector<float> voxels)
    : geometry_(std::move(geometry)), voxels_(std::move(voxels)) {
  geometry_.validate();
  if (voxels_.size() != geometry_.voxel_count()) throw Error("volume: voxel count does not match dims");
  for (float v : voxels_)
    if (!std::isfinite(v)) throw Error("volume: non-finite voxel value");
}

Volume3::Volume3(Geometry geometry, float fill) : geometry_(std::move(geometry)) {
  geometry_.validate();
  if (!std::isfinite(fill)) throw Error("volume: non-finite fill value");
  voxels_.assign(geometry_.voxel_count(), fill);
}

float Volume3::min_value() const {
  return voxels_.empty() ? 0.0f : *std::min_element(voxels_.begin(), voxels_.end());
}

float Volume3::max_value() const {
  return voxels_.empty() ? 0.0f : *std::max_element(voxels_.begin(), voxels_.end());
}

double interp(const Volume3& vol, const WorldPoint& p) {
  const Geometry& g = vol.geometry();
  const Vec3 u = g.continuous_index(p);
  const double fx = std::floor(u.x), fy = std::floor(u.y), fz = std::floor(u.z);
  // Far outside: every corner is out of bounds.
  if (fx < -1.0 || fy < -1.0 || fz < -1.0 || fx > g.dims[0] || fy > g.dims[1] || fz > g.dims[2]) return 0.0;
  const int i0 = static_cast<int>(fx), j0 = static_cast<int>(fy), k0 = static_cast<int>(fz);
  const double tx = u.x - fx, ty = u.y - fy, tz = u.z - fz;

  double acc = 0.0;
  for (int dk = 0; dk < 2; ++dk) {
    const double wz = dk ? tz : 1.0 - tz;
    if (wz == 0.0) continue;
    for (int dj = 0; dj < 2; ++dj) {
      const double wy = dj ? ty : 1.0 - ty;
      if (wy == 0.0) continue;
      for (int di = 0; di < 2; ++di) {
        const double wx = di ? tx : 1.0 - tx;
        if (wx == 0.0) continue;
        acc += wx * wy * wz * vol.at_or_zero(i0 + di, j0 + dj, k0 + dk);
      }
    }
  }
  return acc;
}

bool gradient_defined(const Volume3& vol, const WorldPoint& p) {
  const Geometry& g = vol.geometry();
  const Vec3 u = g.continuous_index(p);
  for (int a = 0; a < 3; ++a) {
    if (!(u[a] >= 1.0 && u[a] <= g.dims[a] - 2.0)) return false;
  }
  return true;
}

Vec3 gradient(const Volume3& vol, const WorldPoint& p) {
  if (!gradient_defined(vol, p)) throw Error("gradient at margin");
  const Vec3& s = vol.geometry().spacing;
  const double hx = 0.5 * s.x, hy = 0.5 * s.y, hz = 0.5 * s.z;
  return {(interp(vol, p + Vec3{hx, 0, 0}) - interp(vol, p - Vec3{hx, 0, 0})) / (2.0 * hx),
          (interp(vol, p + Vec3{0, hy, 0}) - interp(vol, p - Vec3{0, hy, 0})) / (2.0 * hy),
          (interp(vol, p + Vec3{0, 0, hz}) - interp(vol, p - Vec3{0, 0, hz})) / (2.0 * hz)};
}

double Patch::sample(const Vec3& offset_mm) const {
  const double h = half();
  const double ux = offset_mm.x / sample_step_mm + h;
  const double uy = offset_mm.y / sample_step_mm + h;
  const double uz = offset_mm.z / sample_step_mm + h;
  const double fx = std::floor(ux), fy = std::floor(uy), fz = std::floor(uz);
  const int i0 = static_cast<int>(fx), j0 = static_cast<int>(fy), k0 = static_cast<int>(fz);
  const double tx = ux - fx, ty = uy - fy, tz = uz - fz;
  auto value = [&](int i, int j, int k) -> double {
    if (i < 0 || j < 0 || k < 0 || i >= side || j >= side || k >= side) return 0.0;
    return at(i, j, k);
  };
  double acc = 0.0;
  for (int dk = 0; dk < 2; ++dk)
    for (int dj = 0; dj < 2; ++dj)
      for (int di = 0; di < 2; ++di) {
        const double w = (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tz : 1.0 - tz);
        if (w != 0.0) acc += w * value(i0 + di, j0 + dj, k0 + dk);
      }
  return acc;
}

double Patch::border_mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  const int last = side - 1;
  for (int k = 0; k < side; ++k)
    for (int j = 0; j < side; ++j)
      for (int i = 0; i < side; ++i) {
        if (i == 0 || j == 0 || k == 0 || i == last || j == last || k == last) {
          sum += at(i, j, k);
          ++n;
        }
      }
  return n ? sum / static_cast<double>(n) : 0.0;
}

Patch extract_patch(const Volume3& vol, const WorldPoint& c, int side, double step_mm) {
  if (side <= 0 || side % 2 == 0) throw Error("extract_patch: side must be a positive odd integer");
  if (step_mm <= 0.0) step_mm = vol.geometry().min_spacing();
  Patch patch;
  patch.side = side;
  patch.center = c;
  patch.sample_step_mm = step_mm;
  patch.values.resize(static_cast<std::size_t>(side) * side * side);
  const int h = side / 2;
  std::size_t idx = 0;
  for (int k = -h; k <= h; ++k)
    for (int j = -h; j <= h; ++j)
      for (int i = -h; i <= h; ++i)
        patch.values[idx++] = static_cast<float>(interp(vol, c + Vec3{i * step_mm, j * step_mm, k * step_mm}));
  return patch;
}

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

void write_dvol(std::ostream& out, const Volume3& vol) {
  const Geometry& g = vol.geometry();
  nlohmann::ordered_json header;
  header["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
  header["spacing_mm"] = {g.spacing.x, g.spacing.y, g.spacing.z};
  header["origin_mm"] = {g.origin.x, g.origin.y, g.origin.z};
  header["dtype"] = "f32";
  header["order"] = "x-fastest";
  out << header.dump() << '\n';
  std::vector<std::uint32_t> raw(vol.voxels().size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_little(std::bit_cast<std::uint32_t>(vol.voxels()[i]));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!out) throw Error("DVOL: write failed");
}

Volume3 read_dvol(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("DVOL: missing header line at byte 0");
  const auto header_bytes = line.size() + 1;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("DVOL: malformed header JSON in line 1: ") + e.what());
  }
  Geometry g;
  try {
    if (header.at("dtype").get<std::string>() != "f32") throw Error("DVOL: unsupported dtype (expected f32)");
    if (header.at("order").get<std::string>() != "x-fastest")
      throw Error("DVOL: unsupported order (expected x-fastest)");
    const auto dims = header.at("dims").get<std::vector<long long>>();
    const auto sp = header.at("spacing_mm").get<std::vector<double>>();
    const auto org = header.at("origin_mm").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3 || org.size() != 3) throw Error("DVOL: header arrays must have 3 entries");
    for (int a = 0; a < 3; ++a) {
      if (dims[a] <= 0 || dims[a] > (1 << 20)) throw Error("DVOL: dims out of range");
      g.dims[a] = static_cast<int>(dims[a]);
    }
    g.spacing = {sp[0], sp[1], sp[2]};
    g.origin = {org[0], org[1], org[2]};
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("DVOL: bad header field: ") + e.what());
  }
  g.validate();

  const std::size_t n = g.voxel_count();
  std::vector<std::uint32_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n * 4) {
    std::ostringstream msg;
    msg << "DVOL: truncated voxel data at byte offset " << header_bytes + got << " (expected " << n * 4
        << " data bytes, got " << got << ")";
    throw Error(msg.str());
  }
  std::vector<float> voxels(n);
  for (std::size_t i = 0; i < n; ++i) voxels[i] = std::bit_cast<float>(to_little(raw[i]));
  return Volume3(g, std::move(voxels));
}

void write_dvol(const std::string& path, const Volume3& vol) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("DVOL: cannot open " + path + " for writing");
  write_dvol(out, vol);
}

Volume3 read_dvol(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("DVOL: cannot open " + path);
  return read_dvol(in);
}

}  // namespace dost
