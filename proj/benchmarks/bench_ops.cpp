#include <benchmark/benchmark.h>

#include "ilnet/ops.hpp"
#include "ilnet/rng.hpp"
#include "ilnet/tensor.hpp"

using namespace ilnet;

namespace {

Tensor rand_tensor(Shape shape, uint64_t seed) {
  RandomSource rng(seed);
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-1.0f, 1.0f);
  return Tensor::from(std::move(shape), std::move(v));
}

void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Tensor x = rand_tensor({1, c, hw, hw}, 1);
  Tensor w = rand_tensor({c, c, 3, 3}, 2);
  Tensor b = rand_tensor({c}, 3);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(x, w, b, 1, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 9 * hw * hw);
}

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  Tensor x = rand_tensor({1, c, hw, hw}, 1).set_requires_grad(true);
  Tensor w = rand_tensor({c, c, 3, 3}, 2).set_requires_grad(true);
  for (auto _ : state) {
    GradTape::get().clear();
    x.zero_grad();
    w.zero_grad();
    Tensor loss = sum(conv2d(x, w, std::nullopt, 1, 1, 1));
    backward(loss);
    benchmark::DoNotOptimize(w.grad().data());
  }
}

void BM_Maxpool(benchmark::State& state) {
  Tensor x = rand_tensor({1, 8, 256, 256}, 4);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(maxpool2(x));
  }
}

void BM_UpsampleBilinear(benchmark::State& state) {
  Tensor x = rand_tensor({1, 8, 64, 64}, 5);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(upsample_bilinear(x, 128, 128));
  }
}

void BM_BatchNorm(benchmark::State& state) {
  Tensor x = rand_tensor({4, 16, 64, 64}, 6);
  Tensor g = Tensor::full({16}, 1.0f);
  Tensor b = Tensor::zeros({16});
  Tensor rm = Tensor::zeros({16});
  Tensor rv = Tensor::full({16}, 1.0f);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(batch_norm(x, g, b, rm, rv, true, false));
  }
}

void BM_Softmax(benchmark::State& state) {
  Tensor x = rand_tensor({64, 512}, 7);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(x, 1));
  }
}

}  // namespace

BENCHMARK(BM_Conv2d)->Args({8, 64})->Args({8, 256})->Args({64, 64});
BENCHMARK(BM_Conv2dBackward)->Args({8, 64})->Args({64, 64});
BENCHMARK(BM_Maxpool);
BENCHMARK(BM_UpsampleBilinear);
BENCHMARK(BM_BatchNorm);
BENCHMARK(BM_Softmax);

BENCHMARK_MAIN();
