#include <benchmark/benchmark.h>

#include "atn/sim.hpp"

using namespace atn;

namespace {

void BM_Render(benchmark::State& state) {
  const TrackSpec track = generate_track(2, static_cast<Theme>(state.range(0)));
  RenderOptions options;
  const TrackPose p = track.pose_at(300.0);
  VehicleState v;
  v.x = p.x;
  v.y = p.y;
  v.heading = p.heading;
  for (auto _ : state) benchmark::DoNotOptimize(render_frame(track, v, options, 300.0));
}
BENCHMARK(BM_Render)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

void BM_ExpertKilometre(benchmark::State& state) {
  const TrackSpec track = generate_track(4, Theme::Mountain, 1300.0);
  RolloutConfig config;
  config.distance_km = 1.0;
  for (auto _ : state) {
    ExpertSteering expert(track);
    benchmark::DoNotOptimize(closed_loop_rollout(expert, track, config));
  }
}
BENCHMARK(BM_ExpertKilometre)->Unit(benchmark::kMillisecond);

}  // namespace
