#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kpose/annotation.hpp"
#include "kpose/io.hpp"
#include "kpose/pose_solver.hpp"
#include "kpose/synth.hpp"

namespace kpose {

constexpr int kExitOk = 0;
constexpr int kExitFrameFailures = 1;
constexpr int kExitInvalidInput = 2;

struct EvaluateConfig {
  std::vector<double> mssd_thresholds_rel{0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};  // x diameter
  std::vector<double> mspd_thresholds_px;  // empty: (image width / 640) * {5, 10, ..., 50}
  int max_model_points = 10000;
};

/// Everything a subcommand can be configured with. Built from defaults, a
/// JSON config file and command-line overrides, in that order.
struct RunConfig {
  SolverConfig solver;
  double min_confidence = 0.01;
  bool whiten_modes = true;
  bool subpixel_peaks = false;
  std::string confidence_transform = "identity";  // identity | square | sqrt | uniform
  bool write_trace = true;

  AnnotationConfig annotation;
  bool annotation_heatmaps = true;
  int annotation_heatmap_scale = 4;

  SynthConfig synth;
  bool synth_heatmaps = true;
  bool synth_depth = true;

  EvaluateConfig evaluate;
  std::optional<int> workers;

  void validate() const;
};

/// Sections "solver", "estimate", "annotation" (with "icp"), "synth" (with
/// "noise" and "intrinsics"), "evaluate" and the scalar "workers". Throws
/// InvalidArgument naming the first unknown key.
RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& cfg);

/// Recursive merge: objects merge key by key, everything else is replaced.
void merge_json(Json& into, const Json& overlay);

EstimateOptions estimate_options(const RunConfig& cfg);

/// Command-line flag, then KPOSE_WORKERS, then the config, then all hardware threads.
int resolve_workers(std::optional<int> flag, const RunConfig& cfg);

struct BuildBasisArgs {
  std::vector<fs::path> inputs;  // keypoints3d JSON files, one per instance
  std::optional<int> k;
  double variance_target = 0.95;
  fs::path output;
};

struct SolveArgs {
  std::vector<fs::path> inputs;  // observation JSON or KHM files, or directories of them
  fs::path basis;
  std::optional<fs::path> intrinsics;
  fs::path output_dir;
};

enum class AnnotateMode { Project, RefineObject, RefineKeypoint };
AnnotateMode annotate_mode_from_string(const std::string& s);

struct AnnotateArgs {
  fs::path mesh;
  fs::path trajectory;
  fs::path keypoints;
  fs::path depth_dir;
  fs::path intrinsics;
  AnnotateMode mode = AnnotateMode::RefineObject;
  fs::path output_dir;
};

struct EvaluateArgs {
  fs::path poses;  // directory or single file
  fs::path gt;     // directory or single file
  fs::path model;
  std::optional<fs::path> symmetries;
  std::optional<fs::path> intrinsics;
  fs::path csv;
  fs::path summary;
};

struct SynthArgs {
  fs::path output_dir;
};

// Each returns a process exit code and reports on out / err.
int cmd_build_basis(const BuildBasisArgs& args, std::ostream& out, std::ostream& err);
int cmd_solve(const SolveArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_annotate(const AnnotateArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const SynthArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace kpose
