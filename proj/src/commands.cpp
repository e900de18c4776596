#include "kpose/commands.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "kpose/metrics.hpp"

namespace kpose {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); }

// Reads known keys out of a JSON object and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) invalid(where(key) + " must be true or false");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) invalid(where(key) + " must be an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
          invalid(where(key) + " must be nonnegative");
        }
      }
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) invalid(where(key) + " must be a number");
      out = v.get<T>();
    } else {
      try {
        out = v.get<T>();
      } catch (const std::exception& e) {
        invalid(where(key) + ": " + e.what());
      }
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    if (j_.contains(key) && j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  void get(const char* key, Vec3& out) {
    std::vector<double> v;
    get(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 3) invalid(where(key) + " must have 3 entries");
    out = {v[0], v[1], v[2]};
  }

  template <typename F>
  void section(const char* key, F&& f) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    Section s(j_.at(key), where(key));
    f(s);
    s.finish();
  }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }
  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) invalid("unknown config key " + where(k.c_str()));
    }
  }

 private:
  std::string where(const char* key) const { return path_ + "." + key; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string frame_file(int id, const char* ext) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "frame_%06d%s", id, ext);
  return buf;
}

// Trailing integer of a stem such as "frame_000012".
std::optional<int> frame_id_of(const fs::path& p) {
  std::string stem = p.filename().string();
  stem = stem.substr(0, stem.find('.'));
  const auto us = stem.find_last_of('_');
  const std::string digits = us == std::string::npos ? stem : stem.substr(us + 1);
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return std::nullopt;
  }
  return std::stoi(digits);
}

bool is_sidecar(const fs::path& p) { return p.string().size() > 9 && p.string().ends_with(".khm.json"); }

// Files (or directory contents, sorted) with one of the given extensions.
std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs, std::initializer_list<const char*> exts) {
  std::vector<fs::path> out;
  auto wanted = [&](const fs::path& p) {
    if (is_sidecar(p)) return false;
    for (const char* e : exts) {
      if (p.extension() == e) return true;
    }
    return false;
  };
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.is_regular_file() && wanted(e.path())) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::exists(in)) {
      out.push_back(in);
    } else {
      throw Error(ErrorCode::Io, "no such file or directory: " + in.string());
    }
  }
  return out;
}

std::string fmt(double x) {
  if (!std::isfinite(x)) return "nan";
  std::ostringstream os;
  os << std::setprecision(10) << x;
  return os.str();
}

Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

// Runs body(i) for i in [0, n) across OpenMP threads; exceptions escaping
// body are captured per index.
template <typename F>
std::vector<std::exception_ptr> parallel_frames(long n, F&& body) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  return errors;
}

std::string describe(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return std::string(to_string(err.code())) + ": " + err.what();
  } catch (const std::exception& err) {
    return err.what();
  }
}

}  // namespace

// ---- configuration ----

void RunConfig::validate() const {
  solver.validate();
  annotation.validate();
  synth.validate();
  if (!(min_confidence >= 0.0)) invalid("estimate.min_confidence must be nonnegative");
  static const std::set<std::string> transforms{"identity", "square", "sqrt", "uniform"};
  if (!transforms.count(confidence_transform)) {
    invalid("estimate.confidence_transform must be identity, square, sqrt or uniform");
  }
  if (annotation_heatmap_scale < 1) invalid("annotation.heatmap_scale must be at least 1");
  if (evaluate.mssd_thresholds_rel.empty()) invalid("evaluate.mssd_thresholds_rel must be nonempty");
  for (double t : evaluate.mssd_thresholds_rel) {
    if (!(t > 0.0)) invalid("evaluate thresholds must be positive");
  }
  for (double t : evaluate.mspd_thresholds_px) {
    if (!(t > 0.0)) invalid("evaluate thresholds must be positive");
  }
  if (evaluate.max_model_points < 1) invalid("evaluate.max_model_points must be at least 1");
  if (workers && *workers < 1) invalid("workers must be at least 1");
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Section top(j, "config");
  top.section("solver", [&](Section& s) {
    s.get("lambda", c.solver.lambda);
    s.get("gamma", c.solver.gamma);
    s.get("max_iters", c.solver.max_iters);
    s.get("rel_tol", c.solver.rel_tol);
    s.get("line_search_shrink", c.solver.line_search_shrink);
    s.get("max_line_search", c.solver.max_line_search);
    s.get("coplanarity_tol", c.solver.coplanarity_tol);
    s.get("z_min", c.solver.z_min);
    s.get("prox_iters", c.solver.prox_iters);
  });
  top.section("estimate", [&](Section& s) {
    s.get("min_confidence", c.min_confidence);
    s.get("whiten_modes", c.whiten_modes);
    s.get("subpixel_peaks", c.subpixel_peaks);
    s.get("confidence_transform", c.confidence_transform);
    s.get("write_trace", c.write_trace);
  });
  top.section("annotation", [&](Section& s) {
    AnnotationConfig& a = c.annotation;
    s.get("tau", a.tau);
    s.get("view", a.view);
    s.get("depth_slack", a.depth_slack);
    s.get("jump_threshold", a.jump_threshold);
    s.get("jump_window", a.jump_window);
    s.get("search_radius_px", a.search_radius_px);
    s.get("w_euclid", a.w_euclid);
    s.get("w_feat", a.w_feat);
    s.get("fpfh_radius", a.fpfh_radius);
    s.get("dilation_fraction", a.dilation_fraction);
    s.get("dilation_offset", a.dilation_offset);
    s.get("normal_window", a.normal_window);
    s.get("icp_stride", a.icp_stride);
    s.get("heatmaps", c.annotation_heatmaps);
    s.get("heatmap_scale", c.annotation_heatmap_scale);
    s.section("icp", [&](Section& t) {
      t.get("max_iters", a.icp.max_iters);
      t.get("corr_dist", a.icp.corr_dist);
      t.get("rel_tol", a.icp.rel_tol);
      t.get("degeneracy_ratio", a.icp.degeneracy_ratio);
      t.get("max_step_halvings", a.icp.max_step_halvings);
    });
  });
  top.section("synth", [&](Section& s) {
    SynthConfig& y = c.synth;
    s.get("seed", y.seed);
    s.get("frames", y.frames);
    s.get("instances", y.instances);
    s.get("modes", y.modes);
    s.get("min_distance", y.min_distance);
    s.get("max_distance", y.max_distance);
    s.get("drift_deg", y.drift_deg);
    s.get("drift_m", y.drift_m);
    s.get("heatmap_scale", y.heatmap_scale);
    s.get("heatmaps", c.synth_heatmaps);
    s.get("depth", c.synth_depth);
    s.section("noise", [&](Section& t) {
      t.get("pixel_sigma", y.noise.pixel_sigma);
      t.get("outlier_fraction", y.noise.outlier_fraction);
      t.get("inlier_confidence", y.noise.inlier_confidence);
      t.get("outlier_confidence", y.noise.outlier_confidence);
    });
    s.section("intrinsics", [&](Section& t) {
      t.get("fx", y.k.fx);
      t.get("fy", y.k.fy);
      t.get("cx", y.k.cx);
      t.get("cy", y.k.cy);
      t.get("width", y.k.width);
      t.get("height", y.k.height);
    });
  });
  top.section("evaluate", [&](Section& s) {
    s.get("mssd_thresholds_rel", c.evaluate.mssd_thresholds_rel);
    s.get("mspd_thresholds_px", c.evaluate.mspd_thresholds_px);
    s.get("max_model_points", c.evaluate.max_model_points);
  });
  top.get("workers", c.workers);
  top.finish();
  c.validate();
  return c;
}

Json to_json(const RunConfig& c) {
  const SolverConfig& s = c.solver;
  const AnnotationConfig& a = c.annotation;
  const SynthConfig& y = c.synth;
  Json j;
  j["solver"] = {{"lambda", s.lambda},
                 {"gamma", s.gamma},
                 {"max_iters", s.max_iters},
                 {"rel_tol", s.rel_tol},
                 {"line_search_shrink", s.line_search_shrink},
                 {"max_line_search", s.max_line_search},
                 {"coplanarity_tol", s.coplanarity_tol},
                 {"z_min", s.z_min},
                 {"prox_iters", s.prox_iters}};
  j["estimate"] = {{"min_confidence", c.min_confidence},
                   {"whiten_modes", c.whiten_modes},
                   {"subpixel_peaks", c.subpixel_peaks},
                   {"confidence_transform", c.confidence_transform},
                   {"write_trace", c.write_trace}};
  j["annotation"] = {{"tau", a.tau},
                     {"view", {a.view.x(), a.view.y(), a.view.z()}},
                     {"depth_slack", a.depth_slack},
                     {"jump_threshold", a.jump_threshold},
                     {"jump_window", a.jump_window},
                     {"search_radius_px", a.search_radius_px},
                     {"w_euclid", a.w_euclid},
                     {"w_feat", a.w_feat},
                     {"fpfh_radius", a.fpfh_radius},
                     {"dilation_fraction", a.dilation_fraction},
                     {"dilation_offset", a.dilation_offset},
                     {"normal_window", a.normal_window},
                     {"icp_stride", a.icp_stride},
                     {"heatmaps", c.annotation_heatmaps},
                     {"heatmap_scale", c.annotation_heatmap_scale},
                     {"icp",
                      {{"max_iters", a.icp.max_iters},
                       {"corr_dist", a.icp.corr_dist},
                       {"rel_tol", a.icp.rel_tol},
                       {"degeneracy_ratio", a.icp.degeneracy_ratio},
                       {"max_step_halvings", a.icp.max_step_halvings}}}};
  j["synth"] = {{"seed", y.seed},
                {"frames", y.frames},
                {"instances", y.instances},
                {"modes", y.modes},
                {"min_distance", y.min_distance},
                {"max_distance", y.max_distance},
                {"drift_deg", y.drift_deg},
                {"drift_m", y.drift_m},
                {"heatmap_scale", y.heatmap_scale},
                {"heatmaps", c.synth_heatmaps},
                {"depth", c.synth_depth},
                {"noise",
                 {{"pixel_sigma", y.noise.pixel_sigma},
                  {"outlier_fraction", y.noise.outlier_fraction},
                  {"inlier_confidence", y.noise.inlier_confidence},
                  {"outlier_confidence", y.noise.outlier_confidence}}},
                {"intrinsics", to_json(y.k)}};
  j["evaluate"] = {{"mssd_thresholds_rel", c.evaluate.mssd_thresholds_rel},
                   {"mspd_thresholds_px", c.evaluate.mspd_thresholds_px},
                   {"max_model_points", c.evaluate.max_model_points}};
  j["workers"] = c.workers ? Json(*c.workers) : Json(nullptr);
  return j;
}

void merge_json(Json& into, const Json& overlay) {
  if (!into.is_object() || !overlay.is_object()) {
    into = overlay;
    return;
  }
  for (const auto& [k, v] : overlay.items()) {
    if (into.contains(k) && into[k].is_object() && v.is_object()) {
      merge_json(into[k], v);
    } else {
      into[k] = v;
    }
  }
}

EstimateOptions estimate_options(const RunConfig& cfg) {
  EstimateOptions o;
  o.solver = cfg.solver;
  o.min_confidence = cfg.min_confidence;
  o.whiten_modes = cfg.whiten_modes;
  o.subpixel_peaks = cfg.subpixel_peaks;
  if (cfg.confidence_transform == "square") {
    o.confidence_transform = [](double d) { return d * d; };
  } else if (cfg.confidence_transform == "sqrt") {
    o.confidence_transform = [](double d) { return std::sqrt(std::max(d, 0.0)); };
  } else if (cfg.confidence_transform == "uniform") {
    o.confidence_transform = [](double d) { return d > 0.0 ? 1.0 : 0.0; };
  }
  return o;
}

int resolve_workers(std::optional<int> flag, const RunConfig& cfg) {
  if (flag) {
    if (*flag < 1) invalid("--workers must be at least 1");
    return *flag;
  }
  if (const char* env = std::getenv("KPOSE_WORKERS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 4096) invalid(std::string("KPOSE_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<int>(v);
  }
  if (cfg.workers) return *cfg.workers;
  return omp_get_max_threads();
}

// ---- build-basis ----

int cmd_build_basis(const BuildBasisArgs& args, std::ostream& out, std::ostream& err) {
  std::vector<Keypoints3D> sets;
  try {
    if (args.inputs.empty()) invalid("at least one keypoint file is required");
    for (const auto& f : expand_inputs(args.inputs, {".json"})) sets.push_back(keypoints_from_json(read_json(f)));
    if (sets.empty()) invalid("no keypoint files found");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  const std::vector<std::string>& names = sets.front().names;
  std::vector<Points3> instances;
  for (std::size_t n = 0; n < sets.size(); ++n) {
    const Keypoints3D& k = sets[n];
    std::map<std::string, Eigen::Index> index;
    for (std::size_t i = 0; i < k.names.size(); ++i) index[k.names[i]] = static_cast<Eigen::Index>(i);
    if (k.names.size() != names.size()) {
      err << "error: keypoint file " << n << " has " << k.names.size() << " keypoints, expected " << names.size() << "\n";
      return kExitInvalidInput;
    }
    Points3 x(3, static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto it = index.find(names[i]);
      if (it == index.end()) {
        err << "error: keypoint '" << names[i] << "' missing from file " << n << "\n";
        return kExitInvalidInput;
      }
      x.col(static_cast<Eigen::Index>(i)) = k.points.col(it->second);
    }
    instances.push_back(std::move(x));
  }

  ShapeBasis basis;
  try {
    if (instances.size() == 1) {
      if (args.k && *args.k > 0) invalid("a single keypoint set supports only k = 0");
      basis = ShapeBasis::rigid(sets.front());
    } else {
      basis = build_pca_basis(instances, names, PcaSelection{args.k, args.variance_target});
    }
    write_json(args.output, to_json(basis));
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  out << "instances " << instances.size() << ", keypoints " << names.size() << ", modes kept "
      << basis.num_modes() << "\n";
  if (instances.size() > 1) {
    const std::vector<double> spectrum = pca_spectrum(instances);
    double total = 0.0;
    for (double v : spectrum) total += v;
    out << "mode  eigenvalue        fraction    cumulative\n";
    double cum = 0.0;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
      cum += spectrum[i];
      const double frac = total > 0.0 ? spectrum[i] / total : 0.0;
      const double cfrac = total > 0.0 ? cum / total : 0.0;
      out << std::setw(4) << i + 1 << "  " << std::setw(16) << std::left << fmt(spectrum[i]) << std::right << "  "
          << std::fixed << std::setprecision(6) << frac << "    " << cfrac << std::defaultfloat
          << (static_cast<int>(i) < basis.num_modes() ? "  *" : "") << "\n";
    }
  }
  return kExitOk;
}

// ---- solve ----

int cmd_solve(const SolveArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  struct Input {
    int frame_id = 0;
    KeypointObservations obs;
  };
  std::vector<Input> frames;
  ShapeBasis basis;
  std::optional<CameraIntrinsics> k;
  const EstimateOptions opts = estimate_options(cfg);
  try {
    basis = basis_from_json(read_json(args.basis));
    if (args.intrinsics) k = intrinsics_from_json(read_json(*args.intrinsics));
    const auto files = expand_inputs(args.inputs, {".json", ".khm"});
    if (files.empty()) invalid("no observation or heatmap files found");
    std::set<int> ids;
    for (std::size_t i = 0; i < files.size(); ++i) {
      Input in;
      if (files[i].extension() == ".khm") {
        in.frame_id = frame_id_of(files[i]).value_or(static_cast<int>(i));
        in.obs = observations_from_heatmaps(read_khm(files[i]), opts);
      } else {
        ObservationFrame f = observations_from_json(read_json(files[i]));
        in.frame_id = f.frame_id;
        in.obs = std::move(f.obs);
      }
      if (in.obs.size() != basis.num_points()) {
        throw Error(ErrorCode::DimensionMismatch, files[i].string() + ": " + std::to_string(in.obs.size()) +
                                                      " keypoints, basis has " + std::to_string(basis.num_points()));
      }
      if (!in.obs.names.empty() && in.obs.names != basis.names) {
        throw Error(ErrorCode::DimensionMismatch, files[i].string() + ": keypoint names differ from the basis");
      }
      if (!ids.insert(in.frame_id).second) invalid("duplicate frame id " + std::to_string(in.frame_id));
      frames.push_back(std::move(in));
    }
    fs::create_directories(args.output_dir);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  const auto n = static_cast<long>(frames.size());
  std::vector<std::string> lines(frames.size());
  std::vector<char> bad(frames.size(), 0);
  const auto errors = parallel_frames(n, [&](long i) {
    const Input& in = frames[static_cast<std::size_t>(i)];
    const fs::path path = args.output_dir / frame_file(in.frame_id, ".json");
    std::ostringstream line;
    line << "frame " << in.frame_id << ": ";
    try {
      const PoseEstimate est = estimate_pose(in.obs, basis, k, opts);
      write_json(path, pose_estimate_json(in.frame_id, est, cfg.write_trace));
      const SolveFlags& f = est.full ? est.full->flags : est.weak.flags;
      const bool flagged = est.weak.flags.ill_conditioned || f.ill_conditioned || f.behind_camera;
      line << (flagged ? "flagged" : "ok") << " weak_cost=" << fmt(est.weak.cost);
      if (est.full) line << " full_cost=" << fmt(est.full->cost);
      if (est.weak.flags.ill_conditioned || f.ill_conditioned) line << " ill-conditioned";
      if (f.behind_camera) line << " behind-camera";
      bad[static_cast<std::size_t>(i)] = flagged ? 1 : 0;
    } catch (const Error& e) {
      write_json(path, pose_failure_json(in.frame_id, e.code(), e.what()));
      line << "failed (" << to_string(e.code()) << ": " << e.what() << ")";
      bad[static_cast<std::size_t>(i)] = 1;
    }
    lines[static_cast<std::size_t>(i)] = line.str();
  });

  int failures = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (errors[i]) {
      err << "frame " << frames[i].frame_id << ": " << describe(errors[i]) << "\n";
      ++failures;
      continue;
    }
    (bad[i] ? err : out) << lines[i] << "\n";
    failures += bad[i];
  }
  out << "solved " << (n - failures) << "/" << n << " frames cleanly\n";
  return failures ? kExitFrameFailures : kExitOk;
}

// ---- annotate ----

AnnotateMode annotate_mode_from_string(const std::string& s) {
  if (s == "project") return AnnotateMode::Project;
  if (s == "refine-object") return AnnotateMode::RefineObject;
  if (s == "refine-keypoint") return AnnotateMode::RefineKeypoint;
  invalid("mode must be project, refine-object or refine-keypoint");
}

int cmd_annotate(const AnnotateArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  SurfaceModel mesh;
  std::vector<TrajectoryEntry> traj;
  Keypoints3D kps;
  CameraIntrinsics k;
  std::map<int, fs::path> depth_files;
  try {
    mesh = read_ply(args.mesh);
    traj = read_tum(args.trajectory);
    kps = keypoints_from_json(read_json(args.keypoints));
    k = intrinsics_from_json(read_json(args.intrinsics));
    if (!fs::is_directory(args.depth_dir)) throw Error(ErrorCode::Io, "not a directory: " + args.depth_dir.string());
    for (const auto& e : fs::directory_iterator(args.depth_dir)) {
      const fs::path& p = e.path();
      if (!e.is_regular_file() || (p.extension() != ".pfm" && p.extension() != ".pgm")) continue;
      const auto id = frame_id_of(p);
      if (!id) continue;
      auto it = depth_files.find(*id);
      if (it == depth_files.end() || p.extension() == ".pfm") depth_files[*id] = p;
    }
    if (!depth_files.empty() && depth_files.rbegin()->first >= static_cast<int>(traj.size())) {
      invalid("depth frame " + std::to_string(depth_files.rbegin()->first) + " has no trajectory entry (" +
              std::to_string(traj.size()) + " poses)");
    }
    fs::create_directories(args.output_dir);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  const auto n = static_cast<long>(traj.size());
  enum Status : char { Done, Skipped, Failed };
  std::vector<Status> status(traj.size(), Done);
  std::vector<std::string> notes(traj.size());
  const auto errors = parallel_frames(n, [&](long i) {
    const int id = static_cast<int>(i);
    auto it = depth_files.find(id);
    if (it == depth_files.end()) {
      status[static_cast<std::size_t>(i)] = Skipped;
      notes[static_cast<std::size_t>(i)] = "missing depth frame";
      return;
    }
    AnnotationFrame frame{id, read_depth(it->second), traj[static_cast<std::size_t>(i)].pose, k};
    frame.validate();
    RigidTransform pose = frame.camera_pose;
    std::vector<ProjectedKeypoint> result;
    std::optional<std::string> warning;
    switch (args.mode) {
      case AnnotateMode::Project:
        result = project_and_classify(frame, mesh, kps, cfg.annotation);
        break;
      case AnnotateMode::RefineKeypoint:
        result = keypoint_refine(frame, mesh, kps, cfg.annotation);
        break;
      case AnnotateMode::RefineObject: {
        ObjectRefinement r = object_refine(frame, mesh, kps, cfg.annotation);
        pose = r.camera_pose;
        result = std::move(r.keypoints);
        warning = r.warning;
        break;
      }
    }
    write_json(args.output_dir / frame_file(id, ".json"), annotation_json(id, pose, result, warning));
    if (cfg.annotation_heatmaps) {
      Points2 px(2, static_cast<Eigen::Index>(result.size()));
      Eigen::VectorXd amp(px.cols());
      for (std::size_t j = 0; j < result.size(); ++j) {
        px.col(static_cast<Eigen::Index>(j)) = result[j].pixel;
        amp(static_cast<Eigen::Index>(j)) = result[j].visibility == Visibility::Visible ? 1.0 : 0.0;
      }
      write_khm(args.output_dir / frame_file(id, ".khm"),
                synth_heatmap_stack(px, amp, kps.names, k.width, k.height, cfg.annotation_heatmap_scale));
    }
    if (warning) notes[static_cast<std::size_t>(i)] = *warning;
  });

  int done = 0, skipped = 0, failed = 0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (errors[i]) {
      status[i] = Failed;
      notes[i] = describe(errors[i]);
    }
    switch (status[i]) {
      case Done: ++done; break;
      case Skipped: ++skipped; break;
      case Failed: ++failed; break;
    }
    if (!notes[i].empty()) {
      err << (status[i] == Failed ? "error" : "warning") << ": frame " << i << ": " << notes[i] << "\n";
    }
  }
  out << "annotated " << done << " frames, skipped " << skipped << ", failed " << failed << "\n";
  if (failed > 0 || done == 0) return kExitFrameFailures;
  return kExitOk;
}

// ---- evaluate ----

int cmd_evaluate(const EvaluateArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::map<int, PoseRecord> poses;
  std::map<int, GroundTruth> gts;
  ModelPoints model;
  SymmetrySet sym;
  std::optional<CameraIntrinsics> k;
  try {
    for (const auto& f : expand_inputs({args.poses}, {".json"})) {
      PoseRecord r = pose_record_from_json(read_json(f));
      if (!poses.emplace(r.frame_id, r).second) invalid("duplicate pose frame id " + std::to_string(r.frame_id));
    }
    for (const auto& f : expand_inputs({args.gt}, {".json"})) {
      GroundTruth g = ground_truth_from_json(read_json(f));
      if (!gts.emplace(g.frame_id, g).second) invalid("duplicate ground-truth frame id " + std::to_string(g.frame_id));
    }
    if (gts.empty()) invalid("no ground-truth frames");
    for (const auto& [id, g] : gts) {
      if (!poses.count(id)) invalid("frame " + std::to_string(id) + " has ground truth but no pose");
    }
    for (const auto& [id, p] : poses) {
      if (!gts.count(id)) invalid("frame " + std::to_string(id) + " has a pose but no ground truth");
    }
    model = ModelPoints::subsampled(read_ply(args.model).vertices, cfg.evaluate.max_model_points);
    model.validate();
    if (args.symmetries) sym = symmetries_from_json(read_json(*args.symmetries));
    if (args.intrinsics) k = intrinsics_from_json(read_json(*args.intrinsics));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  double diameter = 0.0;
  const auto np = model.points.cols();
  for (Eigen::Index i = 0; i < np; ++i) {
    for (Eigen::Index j = i + 1; j < np; ++j) {
      diameter = std::max(diameter, (model.points.col(i) - model.points.col(j)).norm());
    }
  }
  std::vector<double> mssd_thr, mspd_thr = cfg.evaluate.mspd_thresholds_px;
  for (double r : cfg.evaluate.mssd_thresholds_rel) mssd_thr.push_back(r * diameter);
  if (mspd_thr.empty() && k) {
    for (int t = 5; t <= 50; t += 5) mspd_thr.push_back(k->width / 640.0 * t);
  }

  struct Row {
    int id = 0;
    double rot = NAN, trans = NAN, mssd = NAN, mspd = NAN;
    std::string problem;
  };
  std::vector<Row> rows;
  for (const auto& [id, g] : gts) {
    rows.emplace_back();
    rows.back().id = id;
  }
  const auto errors = parallel_frames(static_cast<long>(rows.size()), [&](long i) {
    Row& r = rows[static_cast<std::size_t>(i)];
    const PoseRecord& p = poses.at(r.id);
    const GroundTruth& g = gts.at(r.id);
    if (!p.ok) {
      r.problem = "pose file reports a failed solve";
      return;
    }
    const Rotation est_r = p.full ? p.full->rotation : *p.weak_rotation;
    r.rot = rotation_geodesic(est_r, g.pose.rotation) * 180.0 / std::numbers::pi;
    if (!p.full) return;
    r.trans = translation_error(p.full->translation, g.pose.translation);
    r.mssd = mssd(*p.full, g.pose, model, sym);
    if (k) {
      try {
        r.mspd = mspd(*p.full, g.pose, model, sym, *k);
      } catch (const Error& e) {
        r.problem = e.what();
      }
    }
  });

  std::ostringstream csv;
  csv << "frame_id,rotation_deg,translation_m,mssd_m,mspd_px\n";
  std::vector<double> rot, trans, ms, mp;
  int failed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Row& r = rows[i];
    if (errors[i]) r.problem = describe(errors[i]);
    if (!r.problem.empty()) {
      err << "frame " << r.id << ": " << r.problem << "\n";
      ++failed;
    }
    csv << r.id << ',' << fmt(r.rot) << ',' << fmt(r.trans) << ',' << fmt(r.mssd) << ',' << fmt(r.mspd) << '\n';
    rot.push_back(r.rot);
    trans.push_back(r.trans);
    ms.push_back(r.mssd);
    mp.push_back(r.mspd);
  }

  Json summary;
  summary["frames"] = rows.size();
  summary["failed"] = failed;
  summary["diameter_m"] = diameter;
  summary["median"] = {{"rotation_deg", finite_or_null(median(rot))},
                       {"translation_m", finite_or_null(median(trans))},
                       {"mssd_m", finite_or_null(median(ms))},
                       {"mspd_px", finite_or_null(median(mp))}};
  Json ar;
  const double ar_mssd = recall_at_thresholds(ms, mssd_thr);
  ar["mssd"] = ar_mssd;
  if (!mspd_thr.empty()) {
    const double ar_mspd = recall_at_thresholds(mp, mspd_thr);
    ar["mspd"] = ar_mspd;
    ar["mean"] = (ar_mssd + ar_mspd) / 2.0;
  } else {
    ar["mspd"] = nullptr;
    ar["mean"] = ar_mssd;
  }
  summary["ar"] = ar;
  summary["thresholds"] = {{"mssd_m", mssd_thr}, {"mspd_px", mspd_thr}};

  try {
    write_file_atomic(args.csv, csv.str());
    write_json(args.summary, summary);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }
  out << "evaluated " << rows.size() << " frames: median rotation " << fmt(median(rot)) << " deg, AR "
      << fmt(ar["mean"].get<double>()) << "\n";
  return failed ? kExitFrameFailures : kExitOk;
}

// ---- synth ----

int cmd_synth(const SynthArgs& args, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const SyntheticScenario sc = make_scenario(cfg.synth);
    write_scenario(sc, args.output_dir, cfg.synth_heatmaps, cfg.synth_depth);
    out << "wrote " << sc.frames.size() << " frames (seed " << cfg.synth.seed << ") to " << args.output_dir.string()
        << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }
  return kExitOk;
}

}  // namespace kpose
