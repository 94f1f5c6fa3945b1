#include <benchmark/benchmark.h>

#include <random>

#include "ivpt/training.hpp"

namespace {

using namespace ivpt;

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({r, c});
  for (auto& v : t.mutable_values()) v = n(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Tape tape = Tape::no_grad();
  for (auto _ : state) benchmark::DoNotOptimize(tape.matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_AttentionBackward(benchmark::State& state) {
  const std::size_t t = static_cast<std::size_t>(state.range(0)), d = 32;
  Tensor q = random_matrix(t, d, 3), k = random_matrix(t, d, 4), v = random_matrix(t, d, 5);
  q.set_requires_grad(true);
  for (auto _ : state) {
    q.clear_grad();
    Tape tape;
    const AttentionOutput out = tape.multi_head_attention(q, k, v, 4);
    tape.backward(tape.sum(out.output));
    benchmark::DoNotOptimize(q.grad().data());
  }
}
BENCHMARK(BM_AttentionBackward)->Arg(21)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig mc;
  PromptConfig pc;
  pc.da = true;
  pc.ar = ArMode::TopK;
  PromptedModel model(mc, pc, 0);
  const Dataset data = gen_pattern_task(32, mc.num_classes, 7);
  std::vector<std::size_t> batch(data.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  Sgd sgd(0.9, 0.0);
  for (auto _ : state) {
    model.registry().zero_grad();
    Tape tape;
    BatchOutput out = batch_loss(tape, model, data, batch);
    tape.backward(out.loss);
    sgd.step(model.registry(), 0.01);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
