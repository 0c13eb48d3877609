#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dost/metrics.hpp"
#include "dost/proposal.hpp"
#include "dost/trace.hpp"
#include "dost/volume.hpp"

namespace dost {

// Trace files are SWC-style text, one point per line:
//   id type x_mm y_mm z_mm radius_mm parent_id
// Ids are 1-based and global; parent -1 marks a root. Type 2 is a traced
// centerline, 6 a synthesized gap segment. Each trace is introduced by
//   # trace <id> [<end0-status> <end1-status>]
// and pairs of traces that touched while tracing by `# touch <id> <id>`.
// Inside a trace, points after the attachment point hang off their predecessor
// and points before it off their successor; the attachment point itself hangs
// off a point of the parent trace (or is the root).

void write_trace_file(std::ostream& out, const TraceTree& tree);
void write_trace_file(const std::string& path, const TraceTree& tree);

/// Rejects malformed or truncated input with the offending line number. Without
/// `# trace` comments, traces are split wherever a point's parent is not the
/// previous line.
TraceTree read_trace_file(std::istream& in);
TraceTree read_trace_file(const std::string& path);

/// Initial curves as radius-0 roots.
TraceTree curves_to_tree(const std::vector<InitialCurve>& curves);
std::vector<InitialCurve> tree_to_curves(const TraceTree& tree);

struct ReportRow {
  std::string scan;
  const MatchReport* report = nullptr;
};

/// Header `scan,OV,AI,TP,FN,FP,IDS,MOTA,IDF1`, one row per report, fixed precision.
void write_report_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_report_text(std::ostream& out, const std::string& scan, const MatchReport& r);

/// 8-bit binary PGM of the maximum-intensity projection along `axis`
/// (image columns/rows are the remaining axes in increasing order).
void write_mip_pgm(const std::string& path, const Volume3& vol, int axis);

/// SVG in the same pixel frame as write_mip_pgm, with one polyline per trace.
void write_overlay_svg(const std::string& path, const Geometry& geom, const TraceTree& tree, int axis);

}  // namespace dost
