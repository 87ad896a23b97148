#include <benchmark/benchmark.h>

#include "e2d2/sampling.hpp"
#include "e2d2/training.hpp"

using namespace e2d2;

namespace {

ModelConfig bench_config(std::int64_t n_enc, std::int64_t n_dec) {
  ModelConfig cfg;
  cfg.vocab_size = 260;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.n_enc_layers = n_enc;
  cfg.n_dec_layers = n_dec;
  cfg.block_size = 4;
  cfg.max_len = 512;
  return cfg;
}

TokenSeq random_tokens(std::int64_t n, Rng& rng) {
  TokenSeq x;
  for (std::int64_t i = 0; i < n; ++i) x.push_back(Token(rng.uniform_int(256)));
  return x;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(1);
  Tensor a = Tensor::zeros(n, n), b = Tensor::zeros(n, n);
  for (auto& v : a.data()) v = rng.normal();
  for (auto& v : b.data()) v = rng.normal();
  for (auto _ : state) {
    Tape t;
    t.recording = false;
    Tensor c = matmul(t, a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128)->Complexity();

static void BM_TrainStep(benchmark::State& state) {
  Rng init(2);
  Model model(bench_config(4, 2), init);
  AdamState opt = init_adam(model);
  TrainHp hp;
  BlockLayout layout(32, 4);
  NoiseSchedule sched;
  Rng data(3), noise(4);
  std::vector<TokenSeq> batch = {random_tokens(32, data), random_tokens(32, data)};
  for (auto _ : state) {
    StepMetrics m = train_step(model, opt, batch, layout, sched, hp, noise);
    benchmark::DoNotOptimize(m.loss);
  }
}
BENCHMARK(BM_TrainStep);

static void BM_DecoderDenoiseStep(benchmark::State& state) {
  const std::int64_t n_dec = state.range(0);
  Rng init(5);
  Model model(bench_config(12 - n_dec, n_dec), init);
  KVCache cache = model.init_cache();
  Rng data(6);
  TokenSeq ctx = random_tokens(32, data);
  std::vector<std::int64_t> pos;
  for (std::int64_t i = 0; i < 32; ++i) pos.push_back(i);
  model.cache_append(cache, ctx, pos, std::vector<std::uint8_t>(32, 1));

  TokenSeq z(4, model.config().mask_id());
  std::vector<std::int64_t> zpos = {32, 33, 34, 35};
  for (auto _ : state) {
    Matrix logits = model.decode_step(cache, z, zpos);
    benchmark::DoNotOptimize(logits.v.data());
  }
}
BENCHMARK(BM_DecoderDenoiseStep)->Arg(2)->Arg(6)->Arg(10);

static void BM_BlockCommitEncode(benchmark::State& state) {
  Rng init(7);
  Model model(bench_config(10, 2), init);
  Rng data(8);
  TokenSeq blk = random_tokens(4, data);
  for (auto _ : state) {
    state.PauseTiming();
    KVCache cache = model.init_cache();
    TokenSeq ctx = random_tokens(32, data);
    std::vector<std::int64_t> pos;
    for (std::int64_t i = 0; i < 32; ++i) pos.push_back(i);
    model.cache_append(cache, ctx, pos, std::vector<std::uint8_t>(32, 1));
    state.ResumeTiming();
    model.cache_append(cache, blk, {32, 33, 34, 35}, {1, 1, 1, 1});
    benchmark::DoNotOptimize(cache.committed_len);
  }
}
BENCHMARK(BM_BlockCommitEncode);

BENCHMARK_MAIN();
