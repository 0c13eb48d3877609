#include "dost/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace dost {

namespace {

constexpr int kTypeTraced = 2;
constexpr int kTypeGap = 6;

std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

EndStatus parse_end_status(const std::string& s, std::size_t line) {
  for (EndStatus e : {EndStatus::growing, EndStatus::low_confidence, EndStatus::collision, EndStatus::max_iters})
    if (s == to_string(e)) return e;
  throw Error("line " + std::to_string(line) + ": unknown end status '" + s + "'");
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

template <class T>
T parse_number(const std::string& tok, std::size_t line, const char* what) {
  T v{};
  const char* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error("line " + std::to_string(line) + ": malformed " + what + " '" + tok + "'");
  return v;
}

struct Node {
  long long id;
  int type;
  WorldPoint p;
  double radius;
  long long parent;
  std::size_t line;
  std::size_t block;
  std::size_t index;  // within block
};

struct Block {
  int trace_id = 0;
  std::array<EndStatus, 2> ends{EndStatus::growing, EndStatus::growing};
  std::size_t line = 0;
  std::vector<std::size_t> nodes;
};

std::ofstream open_out(const std::string& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace

void write_trace_file(std::ostream& out, const TraceTree& tree) {
  tree.validate_links();
  std::vector<long long> base(tree.size());
  long long next = 1;
  for (std::size_t t = 0; t < tree.size(); ++t) {
    validate_trace(tree.traces[t], false);
    if (tree.traces[t].empty()) throw Error("write_trace_file: trace " + std::to_string(tree.traces[t].id) + " is empty");
    base[t] = next;
    next += static_cast<long long>(tree.traces[t].size());
  }
  out << "# dost trace file\n";
  for (std::size_t t = 0; t < tree.size(); ++t) {
    const Trace& tr = tree.traces[t];
    const auto& att = tree.parent[t];
    const std::size_t anchor = att ? att->child_point : 0;
    out << "# trace " << tr.id << ' ' << to_string(tr.ends[0]) << ' ' << to_string(tr.ends[1]) << '\n';
    const int type = tr.kind == TraceKind::gap ? kTypeGap : kTypeTraced;
    for (std::size_t k = 0; k < tr.size(); ++k) {
      long long parent = -1;
      if (k == anchor) {
        if (att) parent = base[att->parent] + static_cast<long long>(att->parent_point);
      } else {
        parent = base[t] + static_cast<long long>(k > anchor ? k - 1 : k + 1);
      }
      const WorldPoint& p = tr.points[k];
      out << base[t] + static_cast<long long>(k) << ' ' << type << ' ' << format_fixed(p.x) << ' '
          << format_fixed(p.y) << ' ' << format_fixed(p.z) << ' ' << format_fixed(tr.radii[k]) << ' ' << parent
          << '\n';
    }
  }
  for (const auto& [a, b] : tree.touching) out << "# touch " << a << ' ' << b << '\n';
}

void write_trace_file(const std::string& path, const TraceTree& tree) {
  auto out = open_out(path);
  write_trace_file(out, tree);
  if (!out) throw Error("failed writing '" + path + "'");
}

TraceTree read_trace_file(std::istream& in) {
  std::vector<Node> nodes;
  std::vector<Block> blocks;
  std::vector<std::pair<int, int>> touching;
  bool explicit_blocks = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0][0] == '#') {
      std::vector<std::string> words = tok;
      if (words[0] == "#") words.erase(words.begin());
      else words[0] = words[0].substr(1);
      if (!words.empty() && words[0] == "trace") {
        if (words.size() != 2 && words.size() != 4)
          throw Error("line " + std::to_string(line_no) + ": expected '# trace <id> [<end0> <end1>]'");
        if (!explicit_blocks && !nodes.empty())
          throw Error("line " + std::to_string(line_no) + ": points before the first '# trace' comment");
        explicit_blocks = true;
        Block b;
        b.trace_id = parse_number<int>(words[1], line_no, "trace id");
        if (words.size() == 4) b.ends = {parse_end_status(words[2], line_no), parse_end_status(words[3], line_no)};
        b.line = line_no;
        blocks.push_back(b);
      } else if (!words.empty() && words[0] == "touch") {
        if (words.size() != 3) throw Error("line " + std::to_string(line_no) + ": expected '# touch <id> <id>'");
        touching.emplace_back(parse_number<int>(words[1], line_no, "trace id"),
                              parse_number<int>(words[2], line_no, "trace id"));
      }
      continue;
    }
    if (tok.size() != 7)
      throw Error("line " + std::to_string(line_no) + ": expected 7 fields, got " + std::to_string(tok.size()));
    Node n;
    n.id = parse_number<long long>(tok[0], line_no, "point id");
    n.type = parse_number<int>(tok[1], line_no, "type");
    n.p = {parse_number<double>(tok[2], line_no, "x"), parse_number<double>(tok[3], line_no, "y"),
           parse_number<double>(tok[4], line_no, "z")};
    n.radius = parse_number<double>(tok[5], line_no, "radius");
    n.parent = parse_number<long long>(tok[6], line_no, "parent id");
    n.line = line_no;
    if (!is_finite(n.p) || !std::isfinite(n.radius) || n.radius < 0.0)
      throw Error("line " + std::to_string(line_no) + ": coordinates must be finite and radius >= 0");
    if (!explicit_blocks) {
      const bool continues = !nodes.empty() && !blocks.empty() && n.parent == nodes.back().id;
      if (!continues) {
        Block b;
        b.trace_id = static_cast<int>(blocks.size());
        b.line = line_no;
        blocks.push_back(b);
      }
    }
    n.block = blocks.size() - 1;
    n.index = blocks.back().nodes.size();
    blocks.back().nodes.push_back(nodes.size());
    nodes.push_back(n);
  }
  if (in.bad()) throw Error("read error after line " + std::to_string(line_no));

  std::unordered_map<long long, std::size_t> by_id;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (!by_id.emplace(nodes[i].id, i).second)
      throw Error("line " + std::to_string(nodes[i].line) + ": duplicate point id " + std::to_string(nodes[i].id));

  TraceTree tree;
  std::map<int, std::size_t> trace_index;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Block& blk = blocks[b];
    if (blk.nodes.empty()) throw Error("line " + std::to_string(blk.line) + ": trace block has no points");
    if (!trace_index.emplace(blk.trace_id, b).second)
      throw Error("line " + std::to_string(blk.line) + ": duplicate trace id " + std::to_string(blk.trace_id));
    Trace t;
    t.id = blk.trace_id;
    t.ends = blk.ends;
    t.kind = nodes[blk.nodes.front()].type == kTypeGap ? TraceKind::gap : TraceKind::traced;
    for (std::size_t ni : blk.nodes) {
      t.points.push_back(nodes[ni].p);
      t.radii.push_back(nodes[ni].radius);
    }
    std::optional<Attachment> link;
    int anchors = 0;
    for (std::size_t ni : blk.nodes) {
      const Node& n = nodes[ni];
      if (n.parent == -1) {
        ++anchors;
        continue;
      }
      const auto it = by_id.find(n.parent);
      if (it == by_id.end())
        throw Error("line " + std::to_string(n.line) + ": unknown parent id " + std::to_string(n.parent));
      const Node& p = nodes[it->second];
      if (p.block == b) continue;
      ++anchors;
      link = Attachment{p.block, p.index, n.index};
    }
    if (anchors != 1)
      throw Error("line " + std::to_string(blk.line) + ": trace " + std::to_string(blk.trace_id) + " has " +
                  std::to_string(anchors) + " root/attachment points (expected 1)");
    tree.add(std::move(t), link);
  }
  tree.touching = touching;
  tree.validate_links();
  return tree;
}

TraceTree read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  try {
    return read_trace_file(in);
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

TraceTree curves_to_tree(const std::vector<InitialCurve>& curves) {
  TraceTree tree;
  for (const auto& c : curves) {
    Trace t;
    t.id = c.id;
    t.points = c.points;
    t.radii.assign(c.points.size(), 0.0);
    tree.add(std::move(t));
  }
  return tree;
}

std::vector<InitialCurve> tree_to_curves(const TraceTree& tree) {
  std::vector<InitialCurve> out;
  for (const auto& t : tree.traces) out.push_back({t.id, t.points});
  return out;
}

void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  out << "scan,OV,AI,TP,FN,FP,IDS,MOTA,IDF1\n";
  for (const auto& row : rows) {
    const MatchReport& r = *row.report;
    out << row.scan << ',' << format_fixed(r.ov) << ',' << format_fixed(r.ai) << ',' << r.corr.TP << ','
        << r.corr.FN << ',' << r.corr.FP << ',' << r.ids << ',' << format_fixed(r.mota) << ','
        << format_fixed(r.idf1) << '\n';
  }
}

void write_report_text(std::ostream& out, const std::string& scan, const MatchReport& r) {
  out << "scan: " << scan << '\n'
      << "  ground-truth traces: " << r.corr.gt_matched.size() << " (" << r.corr.T << " points)\n"
      << "  predicted traces:    " << r.corr.pred_matched.size() << '\n'
      << "  OV   " << format_fixed(r.ov, 4) << '\n'
      << "  AI   " << format_fixed(r.ai, 4) << " mm\n"
      << "  TP " << r.corr.TP << "  FN " << r.corr.FN << "  FP " << r.corr.FP << '\n'
      << "  IDS  " << r.ids << '\n'
      << "  MOTA " << format_fixed(r.mota, 4) << '\n'
      << "  IDF1 " << format_fixed(r.idf1, 4) << '\n';
}

namespace {

std::array<int, 2> image_axes(int axis) {
  if (axis < 0 || axis > 2) throw Error("projection axis must be 0, 1 or 2");
  if (axis == 0) return {1, 2};
  if (axis == 1) return {0, 2};
  return {0, 1};
}

}  // namespace

void write_mip_pgm(const std::string& path, const Volume3& vol, int axis) {
  const auto [ua, va] = image_axes(axis);
  const Geometry& g = vol.geometry();
  const int w = g.dims[static_cast<std::size_t>(ua)];
  const int h = g.dims[static_cast<std::size_t>(va)];
  std::vector<float> mip(static_cast<std::size_t>(w) * static_cast<std::size_t>(h),
                         -std::numeric_limits<float>::infinity());
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const std::array<int, 3> ijk{i, j, k};
        auto& m = mip[static_cast<std::size_t>(ijk[static_cast<std::size_t>(va)]) * static_cast<std::size_t>(w) +
                      static_cast<std::size_t>(ijk[static_cast<std::size_t>(ua)])];
        m = std::max(m, vol.at(i, j, k));
      }
  const auto [lo, hi] = std::minmax_element(mip.begin(), mip.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  auto out = open_out(path, true);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (float v : mip) {
    const double s = range > 0.0 ? (static_cast<double>(v) - *lo) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0))));
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

void write_overlay_svg(const std::string& path, const Geometry& geom, const TraceTree& tree, int axis) {
  const auto [ua, va] = image_axes(axis);
  const int w = geom.dims[static_cast<std::size_t>(ua)];
  const int h = geom.dims[static_cast<std::size_t>(va)];
  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 4 * w << "\" height=\"" << 4 * h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
      << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"black\"/>\n";
  for (const auto& t : tree.traces) {
    out << "<polyline fill=\"none\" stroke-width=\"0.4\" stroke=\""
        << (t.kind == TraceKind::gap ? "yellow" : "red") << "\" data-trace=\"" << t.id << "\" points=\"";
    for (std::size_t k = 0; k < t.size(); ++k) {
      const Vec3 c = geom.continuous_index(t.points[k]);
      out << (k ? " " : "") << format_fixed(c[ua] + 0.5, 3) << ',' << format_fixed(c[va] + 0.5, 3);
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace dost
