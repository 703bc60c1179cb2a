#include <random>

#include <benchmark/benchmark.h>

#include "cfmimo/lmmse.hpp"
#include "cfmimo/pretrain.hpp"
#include "cfmimo/quantizer.hpp"
#include "cfmimo/transformer.hpp"

using namespace cfmimo;

namespace {

TokenBatch<float> random_batch(const ModelConfig& c, int batch) {
  std::mt19937 eng(1);
  std::normal_distribution<float> g;
  TokenBatch<float> b;
  b.batch = batch;
  b.seq_len = c.max_seq_len;
  b.tokens.resize(batch * c.max_seq_len, c.token_dim);
  for (Eigen::Index i = 0; i < b.tokens.size(); ++i) b.tokens.data()[i] = g(eng);
  return b;
}

void BM_Forward(benchmark::State& state) {
  ModelConfig c;
  c.max_seq_len = 21;
  const auto p = init_params<float>(c, 1);
  const auto b = random_batch(c, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(128);

void BM_ForwardBackward(benchmark::State& state) {
  ModelConfig c;
  c.max_seq_len = 21;
  const auto p = init_params<float>(c, 1);
  const auto b = random_batch(c, static_cast<int>(state.range(0)));
  const RowMat<float> targets = RowMat<float>::Zero(b.batch, 2);
  ModelParams<float> grad(c);
  for (auto _ : state) {
    grad.set_zero();
    benchmark::DoNotOptimize(loss_and_grad(p, b, targets, &grad));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128);

void BM_Quantize(benchmark::State& state) {
  const QuantizerSpec& q = lloyd_max(static_cast<int>(state.range(0)));
  std::mt19937 eng(2);
  std::normal_distribution<double> g;
  std::vector<double> x(4096);
  for (double& v : x) v = g(eng);
  for (auto _ : state) {
    double acc = 0;
    for (double v : x) acc += quantize(v, q, 1.0);
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(x.size()));
}
BENCHMARK(BM_Quantize)->Arg(1)->Arg(4)->Arg(8);

void BM_LloydMaxDesign(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(design_lloyd_max(static_cast<int>(state.range(0))));
}
BENCHMARK(BM_LloydMaxDesign)->Arg(3)->Arg(8);

void BM_LmmseBlock(benchmark::State& state) {
  SystemConfig sys;
  const PilotBook book = walsh_hadamard_book(sys.pilot_length);
  const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 1, 0, 4);
  const int bits[] = {static_cast<int>(state.range(0))};
  const Block blk = simulate_block(sys, book, t, policy::FixedReuse{1}, bits, 1, 0, 0);
  LmmseEqualizer eq(book, bits[0] == 0);
  for (auto _ : state) benchmark::DoNotOptimize(eq.equalize(blk));
}
BENCHMARK(BM_LmmseBlock)->Arg(0)->Arg(4);

void BM_SimulateAndEncode(benchmark::State& state) {
  SystemConfig sys;
  const PilotBook book = walsh_hadamard_book(sys.pilot_length);
  const TaskConfig t = draw_task(sys, sys.reference_noise_power(), 1, 0, 4);
  const int bits[] = {4};
  std::uint64_t i = 0;
  for (auto _ : state) {
    const Block blk = simulate_block(sys, book, t, policy::MixedReuse{}, bits, 1, 0, i++);
    benchmark::DoNotOptimize(make_example(sys, blk, PromptLayout::kFull, 0, 0));
  }
}
BENCHMARK(BM_SimulateAndEncode);

}  // namespace

BENCHMARK_MAIN();
