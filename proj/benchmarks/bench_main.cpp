#include <benchmark/benchmark.h>

#include <random>

#include "ccgan/data.hpp"
#include "ccgan/ops.hpp"
#include "ccgan/tape.hpp"
#include "ccgan/trainer.hpp"

using namespace ccgan;

namespace {

Tensor<float> uniform(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Generator-sized 3x3 convolution: batch 16, 28x28.
void BM_Conv2dForward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto x = uniform({16, c, 28, 28}, 1);
  const auto k = uniform({c, c, 3, 3}, 2);
  const auto b = uniform({c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, k, b, 1, 1).data().data());
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  auto x = uniform({16, c, 28, 28}, 1);
  auto k = uniform({c, c, 3, 3}, 2);
  auto b = uniform({c}, 3);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    TapeScope<float> scope(tape);
    tape.backward(sum(conv2d(x, k, b, 1, 1)));
    benchmark::DoNotOptimize(k.grad().data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

// One full training step at the MNIST architecture, batch 16.
void BM_TrainStep(benchmark::State& state) {
  LabeledImageSet set;
  set.images = uniform({128, 1, 28, 28}, 4);
  for (std::size_t i = 0; i < 128; ++i) {
    set.labels.push_back(int(i % 10));
    set.source_index.push_back(i);
  }
  const auto pools = split_unpaired(set, 4, 1);
  const ConditionTable table(pools.x, Mode::kAttribute, 10);
  TrainConfig cfg;
  cfg.iterations = 1000000;
  Trainer trainer(ArchConfig::mnist(), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(trainer.next_batch(pools.x, table, pools.y)));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->MinTime(2.0);

}  // namespace
BENCHMARK_MAIN();
