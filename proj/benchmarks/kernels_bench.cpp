#include <benchmark/benchmark.h>

#include "atn/layers.hpp"
#include "atn/model.hpp"
#include "atn/rng.hpp"

using namespace atn;

namespace {

Tensor filled(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (float& v : t.values()) v = static_cast<float>(uniform(rng, -1, 1));
  return t;
}

// First policy conv layer at batch 32: 6 -> 24 channels, 5x5 stride 2 on 48x64.
void BM_ConvForward(benchmark::State& state) {
  Rng rng(1);
  Conv2d<float> conv("conv", {6, 24, 5, 2, 0});
  conv.init(rng);
  const Tensor x = filled({static_cast<std::size_t>(state.range(0)), 6, 48, 64}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv.infer(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ConvForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_ConvBackward(benchmark::State& state) {
  Rng rng(2);
  Conv2d<float> conv("conv", {6, 24, 5, 2, 0});
  conv.init(rng);
  const Tensor x = filled({32, 6, 48, 64}, rng);
  const Tensor y = conv.forward(x);
  const Tensor dy = filled(y.shape(), rng);
  for (auto _ : state) {
    conv.forward(x);
    benchmark::DoNotOptimize(conv.backward(dy));
  }
}
BENCHMARK(BM_ConvBackward)->Unit(benchmark::kMillisecond);

void BM_LstmForward(benchmark::State& state) {
  Rng rng(3);
  Lstm<float> lstm("lstm", 1029, 128);
  lstm.init(rng);
  const Tensor steps = filled({3, 32, 1029}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(lstm.infer(steps));
}
BENCHMARK(BM_LstmForward)->Unit(benchmark::kMicrosecond);

void BM_ModelPredict(benchmark::State& state) {
  const AtnConfig c = AtnConfig::variant("atn_base");
  AtnModel model(c, 4);
  Rng rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor frames = filled({n * c.effective_window(), c.input_channels(), c.input_height, c.input_width}, rng);
  const Tensor kin = filled({n * c.effective_window(), KinematicsVector::kSize}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(frames, kin));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ModelPredict)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const AtnConfig c = AtnConfig::variant("atn_base");
  AtnModel model(c, 6);
  Rng rng(7);
  const Tensor frames = filled({32 * c.effective_window(), c.input_channels(), c.input_height, c.input_width}, rng);
  const Tensor kin = filled({32 * c.effective_window(), KinematicsVector::kSize}, rng);
  const Tensor grad = filled({32, 1}, rng);
  for (auto _ : state) {
    model.forward(frames, kin, Mode::Train);
    model.backward(grad);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
