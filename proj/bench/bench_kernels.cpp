// Parallel kernels against their kpose::serial references.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <map>
#include <numbers>

#include "kpose/depth.hpp"
#include "kpose/fpfh.hpp"
#include "kpose/metrics.hpp"
#include "kpose/raster.hpp"
#include "kpose/synth.hpp"

using namespace kpose;

namespace {

const CameraIntrinsics kCam{525.0, 525.0, 319.5, 239.5, 640, 480};

const SurfaceModel& scene() {
  static const SurfaceModel s = make_scene(make_object());
  return s;
}

RigidTransform view() {
  // 0.8 m away, looking down at the object obliquely
  const Rotation r = so3_exp(Vec3(-2.2, 0.4, 0.3));
  return {r, Vec3(0.0, 0.0, 0.8) - r * Vec3(0, 0, 0.05)};
}

struct CloudFixture {
  Points3 points, normals;
};

const CloudFixture& cloud(int stride) {
  static std::map<int, CloudFixture> cache;
  auto it = cache.find(stride);
  if (it != cache.end()) return it->second;
  const DepthImage d = render_depth(scene(), view(), kCam);
  PointCloud c = back_project(d, kCam, stride);
  const Points3 n = estimate_normals(d, kCam, c.pixels);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n.cols(); ++i) {
    if (!n.col(i).isZero()) keep.push_back(i);
  }
  CloudFixture f;
  f.points.resize(3, static_cast<Eigen::Index>(keep.size()));
  f.normals.resize(3, f.points.cols());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    f.points.col(static_cast<Eigen::Index>(j)) = c.points.col(keep[j]);
    f.normals.col(static_cast<Eigen::Index>(j)) = n.col(keep[j]);
  }
  return cache.emplace(stride, std::move(f)).first->second;
}

void BM_RenderDepth(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(render_depth(scene(), view(), kCam));
}
void BM_RenderDepthSerial(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(serial::render_depth(scene(), view(), kCam));
}

void BM_Fpfh(benchmark::State& st) {
  const CloudFixture& c = cloud(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(fpfh(c.points, c.normals, 0.05));
  st.counters["points"] = static_cast<double>(c.points.cols());
}
void BM_FpfhSerial(benchmark::State& st) {
  const CloudFixture& c = cloud(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(serial::fpfh(c.points, c.normals, 0.05));
  st.counters["points"] = static_cast<double>(c.points.cols());
}

struct MetricFixture {
  ModelPoints model{0.1 * Points3::Random(3, 10000)};  // dense stand-in for a scanned model
  SymmetrySet sym = SymmetrySet::from({{so3_exp(Vec3(0, 0, std::numbers::pi)), Vec3::Zero()}});
  RigidTransform gt = view();
  RigidTransform est{so3_exp(Vec3(0.01, -0.02, 0.015)) * view().rotation, view().translation + Vec3(0.004, 0, -0.01)};
};

void BM_Mssd(benchmark::State& st) {
  const MetricFixture f;
  for (auto _ : st) benchmark::DoNotOptimize(mssd(f.est, f.gt, f.model, f.sym));
}
void BM_MssdSerial(benchmark::State& st) {
  const MetricFixture f;
  for (auto _ : st) benchmark::DoNotOptimize(serial::mssd(f.est, f.gt, f.model, f.sym));
}

}  // namespace

BENCHMARK(BM_RenderDepth)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_RenderDepthSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Fpfh)->Arg(8)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FpfhSerial)->Arg(8)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Mssd)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_MssdSerial)->Unit(benchmark::kMicrosecond)->UseRealTime();

BENCHMARK_MAIN();
