#include <benchmark/benchmark.h>

#include "ilnet/model.hpp"
#include "ilnet/train.hpp"

using namespace ilnet;

namespace {

void BM_ForwardEval(benchmark::State& state) {
  const std::string name = state.range(0) == 0 ? "S" : state.range(0) == 1 ? "M" : "L";
  const int hw = static_cast<int>(state.range(1));
  ILNet net(preset_config(name), 1);
  Tensor x = Tensor::zeros({1, 3, hw, hw});
  NoGradGuard ng;
  net.forward(x, ForwardMode::eval());  // warm-up
  for (auto _ : state) {
    benchmark::DoNotOptimize(net.forward(x, ForwardMode::eval()).logits.values().data());
  }
  state.counters["GFLOP"] =
      static_cast<double>(net.count_flops(1, hw, hw)) / 1e9;
}

void BM_TrainStep(benchmark::State& state) {
  ILNet net(preset_config("S"), 1);
  data::SynthOptions so;
  so.count = 4;
  so.height = so.width = 64;
  so.seed = 9;
  auto ds = data::synth_dataset(so);
  Tensor x = images_to_tensor(ds, {0, 1, 2, 3});
  Tensor gt = masks_to_tensor(ds, {0, 1, 2, 3});
  Optimizer opt("adam", 1e-4f);
  for (auto _ : state) {
    GradTape::get().clear();
    net.params().zero_grads();
    auto out = net.forward(x, ForwardMode::train());
    LossBreakdown lb = total_loss(out.sides.sup_logits, out.logits, gt);
    backward(lb.total_tensor);
    opt.step(net.params(), 1e-3f);
  }
}

}  // namespace

BENCHMARK(BM_ForwardEval)->Args({0, 64})->Args({0, 128})->Args({1, 64})->Args({2, 64})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
