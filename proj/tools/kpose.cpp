// kpose: keypoint-based pose estimation and annotation refinement.

#include <omp.h>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "kpose/commands.hpp"

namespace {

using kpose::Json;

// "section.key=value" with value parsed as JSON (bare words become strings).
void apply_set(Json& overlay, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw kpose::Error(kpose::ErrorCode::InvalidArgument, "--set expects key=value, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const std::exception&) {
    value = text;
  }
  Json* node = &overlay;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw kpose::Error(kpose::ErrorCode::InvalidArgument, "bad --set key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

template <typename T>
void put(Json& overlay, const char* section, const char* key, const std::optional<T>& v) {
  if (v) overlay[section][key] = *v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose from confidence-weighted 2D keypoints with a deformable shape model, and "
               "keypoint annotation refinement against depth frames."};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::optional<int> workers;
  std::vector<std::string> sets;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--workers", workers, "worker threads (default: KPOSE_WORKERS, config, all cores)");
  app.add_option("--set", sets, "override a config entry, e.g. --set solver.lambda=0")->allow_extra_args(false);
  app.add_flag("--print-config", print_config, "print the effective configuration before running");

  Json overlay = Json::object();

  // build-basis
  kpose::BuildBasisArgs bb;
  auto* c_bb = app.add_subcommand("build-basis", "PCA shape basis from per-instance 3D keypoint files");
  c_bb->add_option("inputs", bb.inputs, "keypoints3d JSON files or directories")->required();
  c_bb->add_option("-k,--modes", bb.k, "number of modes (default: by variance)");
  c_bb->add_option("--variance", bb.variance_target, "explained-variance fraction to exceed");
  c_bb->add_option("-o,--output", bb.output, "basis JSON")->required();

  // solve
  kpose::SolveArgs sv;
  std::optional<double> lambda, gamma, min_conf;
  std::optional<int> max_iters;
  std::optional<std::string> transform;
  bool no_trace = false, subpixel = false;
  auto* c_sv = app.add_subcommand("solve", "pose per frame from observations or heatmaps");
  c_sv->add_option("inputs", sv.inputs, "observation JSON / KHM files or directories")->required();
  c_sv->add_option("-b,--basis", sv.basis, "shape basis JSON")->required();
  c_sv->add_option("-K,--intrinsics", sv.intrinsics, "camera intrinsics JSON (enables full perspective)");
  c_sv->add_option("-o,--output", sv.output_dir, "directory for pose JSON files")->required();
  c_sv->add_option("--lambda", lambda, "Tikhonov weight on shape coefficients");
  c_sv->add_option("--gamma", gamma, "spectral-norm weight of the convex initialization");
  c_sv->add_option("--max-iters", max_iters, "maximum block coordinate descent sweeps");
  c_sv->add_option("--min-confidence", min_conf, "confidence floor for usable keypoints");
  c_sv->add_option("--confidence-transform", transform, "identity, square, sqrt or uniform");
  c_sv->add_flag("--no-trace", no_trace, "omit cost traces from the output");
  c_sv->add_flag("--subpixel", subpixel, "quadratic subpixel refinement of heatmap peaks");

  // annotate
  kpose::AnnotateArgs an;
  std::string mode = "refine-object";
  std::optional<double> tau, slack, jump;
  bool no_hm_annot = false;
  auto* c_an = app.add_subcommand("annotate", "project and refine 3D keypoints through a camera trajectory");
  c_an->add_option("--mesh", an.mesh, "PLY surface model")->required();
  c_an->add_option("--trajectory", an.trajectory, "TUM trajectory (fixed frame -> camera)")->required();
  c_an->add_option("--keypoints", an.keypoints, "keypoints3d JSON")->required();
  c_an->add_option("--depth", an.depth_dir, "directory of frame_NNNNNN.pfm / .pgm")->required();
  c_an->add_option("-K,--intrinsics", an.intrinsics, "camera intrinsics JSON")->required();
  c_an->add_option("-o,--output", an.output_dir, "directory for annotation files")->required();
  c_an->add_option("--mode", mode, "project, refine-object or refine-keypoint")
      ->check(CLI::IsMember({"project", "refine-object", "refine-keypoint"}));
  c_an->add_option("--tau", tau, "normal test threshold on view . normal");
  c_an->add_option("--depth-slack", slack, "z-buffer slack in meters");
  c_an->add_option("--jump-threshold", jump, "jump-edge threshold in meters");
  c_an->add_flag("--no-heatmaps", no_hm_annot, "do not write KHM training heatmaps");

  // evaluate
  kpose::EvaluateArgs ev;
  std::optional<std::vector<double>> mssd_thr, mspd_thr;
  auto* c_ev = app.add_subcommand("evaluate", "pose errors against ground truth");
  c_ev->add_option("--poses", ev.poses, "pose JSON file or directory")->required();
  c_ev->add_option("--gt", ev.gt, "ground-truth JSON file or directory")->required();
  c_ev->add_option("--model", ev.model, "PLY model for MSSD / MSPD")->required();
  c_ev->add_option("--symmetries", ev.symmetries, "symmetries JSON");
  c_ev->add_option("-K,--intrinsics", ev.intrinsics, "camera intrinsics JSON (enables MSPD)");
  c_ev->add_option("--csv", ev.csv, "per-frame CSV output")->required();
  c_ev->add_option("--summary", ev.summary, "summary JSON output")->required();
  c_ev->add_option("--mssd-thresholds", mssd_thr, "MSSD thresholds as fractions of the model diameter");
  c_ev->add_option("--mspd-thresholds", mspd_thr, "MSPD thresholds in pixels");

  // synth
  kpose::SynthArgs sy;
  std::optional<std::uint64_t> seed;
  std::optional<int> frames;
  std::optional<double> sigma, out_frac, out_conf, in_conf, drift_deg, drift_m;
  bool no_hm_synth = false, no_depth = false;
  auto* c_sy = app.add_subcommand("synth", "deterministic synthetic scenario");
  c_sy->add_option("-o,--output", sy.output_dir, "scenario directory")->required();
  c_sy->add_option("--seed", seed, "random seed");
  c_sy->add_option("--frames", frames, "number of frames");
  c_sy->add_option("--sigma", sigma, "pixel noise standard deviation");
  c_sy->add_option("--outlier-fraction", out_frac, "fraction of keypoints replaced by outliers");
  c_sy->add_option("--outlier-confidence", out_conf, "confidence given to outliers");
  c_sy->add_option("--inlier-confidence", in_conf, "confidence given to inliers");
  c_sy->add_option("--drift-deg", drift_deg, "bound on trajectory rotation drift");
  c_sy->add_option("--drift-m", drift_m, "bound on trajectory translation drift");
  c_sy->add_flag("--no-heatmaps", no_hm_synth, "skip KHM heatmaps");
  c_sy->add_flag("--no-depth", no_depth, "skip depth frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kpose::kExitInvalidInput;
  }

  kpose::RunConfig cfg;
  int nworkers = 1;
  try {
    Json j = Json::object();
    if (config_path) j = kpose::read_json(*config_path);
    put(overlay, "solver", "lambda", lambda);
    put(overlay, "solver", "gamma", gamma);
    put(overlay, "solver", "max_iters", max_iters);
    put(overlay, "estimate", "min_confidence", min_conf);
    put(overlay, "estimate", "confidence_transform", transform);
    if (no_trace) overlay["estimate"]["write_trace"] = false;
    if (subpixel) overlay["estimate"]["subpixel_peaks"] = true;
    put(overlay, "annotation", "tau", tau);
    put(overlay, "annotation", "depth_slack", slack);
    put(overlay, "annotation", "jump_threshold", jump);
    if (no_hm_annot) overlay["annotation"]["heatmaps"] = false;
    put(overlay, "evaluate", "mssd_thresholds_rel", mssd_thr);
    put(overlay, "evaluate", "mspd_thresholds_px", mspd_thr);
    put(overlay, "synth", "seed", seed);
    put(overlay, "synth", "frames", frames);
    put(overlay, "synth", "drift_deg", drift_deg);
    put(overlay, "synth", "drift_m", drift_m);
    if (sigma) overlay["synth"]["noise"]["pixel_sigma"] = *sigma;
    if (out_frac) overlay["synth"]["noise"]["outlier_fraction"] = *out_frac;
    if (out_conf) overlay["synth"]["noise"]["outlier_confidence"] = *out_conf;
    if (in_conf) overlay["synth"]["noise"]["inlier_confidence"] = *in_conf;
    if (no_hm_synth) overlay["synth"]["heatmaps"] = false;
    if (no_depth) overlay["synth"]["depth"] = false;
    for (const auto& s : sets) apply_set(overlay, s);
    kpose::merge_json(j, overlay);
    cfg = kpose::run_config_from_json(j);
    an.mode = kpose::annotate_mode_from_string(mode);
    nworkers = kpose::resolve_workers(workers, cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kpose::kExitInvalidInput;
  }
  omp_set_num_threads(nworkers);
  if (print_config) std::cout << kpose::to_json(cfg).dump(2) << "\n";

  if (*c_bb) return kpose::cmd_build_basis(bb, std::cout, std::cerr);
  if (*c_sv) return kpose::cmd_solve(sv, cfg, std::cout, std::cerr);
  if (*c_an) return kpose::cmd_annotate(an, cfg, std::cout, std::cerr);
  if (*c_ev) return kpose::cmd_evaluate(ev, cfg, std::cout, std::cerr);
  if (*c_sy) return kpose::cmd_synth(sy, cfg, std::cout, std::cerr);
  return kpose::kExitInvalidInput;
}
