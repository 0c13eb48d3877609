#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dost/metrics.hpp"
#include "dost/predictor.hpp"
#include "dost/proposal.hpp"
#include "dost/snake.hpp"
#include "dost/tree.hpp"

namespace dost {

inline constexpr const char* kToolVersion = "1.0.0";

/// Bad configuration or missing inputs (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed (exit code 3).
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class PredictorKind { oracle, analytic, external };

const char* to_string(PredictorKind k);

struct PipelineConfig {
  TracerConfig tracer;
  double tau = 0.5;
  int min_curve_voxels = 3;
  GraphOptions graph;
  bool build_tree = true;
  PredictorKind predictor = PredictorKind::oracle;
  std::string external_command;
  int directions = 500;
  double kappa = 20.0;
  double lookahead_floor_mm = 1.0;
  bool parallel = false;
  IdentityMode identity = IdentityMode::component;
  double majority = 0.5;
  /// Artificial breaks cut into the proposal map (0 disables).
  int cuts_per_trace = 0;
  double cut_len_mm = 3.0;
  std::string output_dir = "out";

  /// Sets one field from its text form; throws ConfigError on unknown keys or
  /// out-of-range values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  /// Every field as key/value text, in a fixed order; set() accepts each pair.
  std::vector<std::pair<std::string, std::string>> to_kv() const;
};

/// Applies `key = value` lines ('#' starts a comment) on top of `cfg`.
void apply_config_text(PipelineConfig& cfg, const std::string& text);
/// Applies a `key=value` override.
void apply_override(PipelineConfig& cfg, const std::string& assignment);

/// Phantom spec fields as key = value text: seed, dims (nx,ny,nz), spacing_mm
/// (sx,sy,sz), origin_mm (ox,oy,oz), n_terminal_branches, radius_min_mm,
/// radius_max_mm, foreground_mean, background_mean, polarity, noise_sigma,
/// min_branch_len_mm. Validates the result.
void apply_phantom_text(PhantomSpec& spec, const std::string& text);
void set_phantom_field(PhantomSpec& spec, const std::string& key, const std::string& value);

std::unique_ptr<Predictor> make_predictor(const PipelineConfig& cfg, const DirectionSet& dirs,
                                          const GroundTruthTree* gt);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineResult {
  /// Scan name used in reports (the volume file stem); empty for in-memory runs.
  std::string scan;
  std::vector<InitialCurve> curves;
  TracingResult tracing;
  VesselTree tree;
  std::optional<MatchReport> report;
  std::vector<StageTiming> timings;
};

/// propose -> trace -> tree -> eval on in-memory inputs. The proposal comes from
/// `distance` when given, else from the ground truth; with neither a ConfigError
/// "no proposal source" is thrown. Stage failures surface as StageError.
PipelineResult run_stages(const Volume3& vol, const DistanceMap* distance, const GroundTruthTree* gt,
                          const PipelineConfig& cfg);

struct PipelineInputs {
  std::string volume_path;
  std::string distance_path;  // optional
  std::string gt_path;        // optional
};

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

/// Loads the inputs, runs every stage and writes tree.swc, traces.swc, curves.swc,
/// report.csv and report.txt (with ground truth), mip_{x,y,z}.pgm,
/// overlay_{x,y,z}.svg and manifest.json into cfg.output_dir.
PipelineResult run_pipeline(const PipelineInputs& inputs, const PipelineConfig& cfg);

/// Reloads config and inputs from a manifest written by run_pipeline, checking
/// the recorded input hashes. `output_dir`, when non-empty, replaces the recorded one.
PipelineResult rerun_from_manifest(const std::string& manifest_path, const std::string& output_dir = "");

}  // namespace dost
