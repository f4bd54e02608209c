#include <benchmark/benchmark.h>

#include <random>

#include "nmsr/losses.hpp"
#include "nmsr/optimizer.hpp"
#include "nmsr/tensor.hpp"
#include "nmsr/unet.hpp"

using namespace nmsr;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(gen);
  return t;
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto size = state.range(0);
  const auto channels = state.range(1);
  Tensor x = random_tensor({1, channels, size, size}, 1);
  Tensor k = random_tensor({channels, channels, 3, 3}, 2);
  Tensor b = random_tensor({channels}, 3);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Graph g;
    auto y = ops::sum(g, ops::conv2d(g, x, k, b, 1, 1));
    g.backward(y);
    k.zero_grad();
    b.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * size * size * channels * channels * 9);
}
BENCHMARK(BM_Conv2dForwardBackward)->Args({64, 16})->Args({64, 32})->Args({128, 16});

void BM_NccLoss(benchmark::State& state) {
  const auto size = state.range(0);
  Tensor m = random_tensor({1, 1, size, size}, 4);
  const Tensor f = random_tensor({1, 1, size, size}, 5);
  m.set_requires_grad(true);
  const LossConfig cfg;
  for (auto _ : state) {
    Graph g;
    auto loss = ncc_loss(g, m, f, cfg);
    g.backward(loss);
    m.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_NccLoss)->Arg(64)->Arg(128);

// One optimization step of the default network: forward, loss, backward, Adam.
void BM_UnetTrainingStep(benchmark::State& state) {
  const auto size = state.range(0);
  ModelParams params = init_params(ArchDescriptor{}, 7);
  const Tensor moving = random_tensor({1, 1, size, size}, 8);
  const Tensor fixed = random_tensor({1, 1, size, size}, 9);
  auto tensors = params.tensors();
  Adam adam;
  const LossConfig cfg;
  for (auto _ : state) {
    for (auto& t : tensors) t.zero_grad();
    Graph g;
    const auto flow = unet_forward(g, params, moving, fixed);
    const auto warped = ops::grid_sample_bilinear(g, moving, flow);
    const auto loss = total_loss(g, warped, fixed, flow, cfg);
    g.backward(loss.total);
    adam.step(tensors);
  }
}
BENCHMARK(BM_UnetTrainingStep)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
