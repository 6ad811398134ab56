#include <benchmark/benchmark.h>

#include <vector>

#include "driftlab/drift.hpp"
#include "driftlab/metrics.hpp"
#include "driftlab/model.hpp"
#include "driftlab/strategies.hpp"
#include "driftlab/train.hpp"

using namespace driftlab;

namespace {

Corpus bench_corpus(int docs) {
  SynthParams p;
  p.n_periods = 1;
  p.docs_per_period = docs;
  p.vocab_size = 500;
  p.n_labels = 6;
  return synth_drift_corpus(p);
}

void BM_ForwardBackward(benchmark::State& state) {
  const Corpus c = bench_corpus(32);
  const auto docs = c.all();
  const std::size_t h = static_cast<std::size_t>(state.range(0));
  const ModelState m = init_model(ModelConfig{c.vocab_size(), h, h, c.label_count(), true, Nonlinearity::Tanh, 1});
  for (auto _ : state) {
    auto g = task_gradient(m, docs);
    benchmark::DoNotOptimize(g.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_ForwardBackward)->Arg(16)->Arg(32)->Arg(64);

void BM_AdamWStep(benchmark::State& state) {
  const Corpus c = bench_corpus(8);
  ModelState m = init_model(ModelConfig{c.vocab_size(), 32, 32, c.label_count(), true, Nonlinearity::Tanh, 1});
  const auto g = task_gradient(m, c.all()).grads;
  OptimizerState opt;
  for (auto _ : state) adamw_step(opt, m, g);
}
BENCHMARK(BM_AdamWStep);

void BM_Metrics(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0)), labels = 20;
  Rng rng(3);
  BinaryMatrix y(n, labels), d(n, labels);
  Tensor scores(n, labels);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < labels; ++j) {
      y.set(i, j, rng.bernoulli(0.2));
      d.set(i, j, rng.bernoulli(0.2));
      scores(i, j) = rng.uniform();
    }
  for (auto _ : state) {
    benchmark::DoNotOptimize(micro_f1(y, d));
    benchmark::DoNotOptimize(macro_f1(y, d));
    benchmark::DoNotOptimize(mean_r_precision(y, scores));
  }
}
BENCHMARK(BM_Metrics)->Arg(1000)->Arg(10000);

void BM_JsDivergence(benchmark::State& state) {
  const std::size_t k = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> p(k), q(k);
  double sp = 0, sq = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sp += p[i] = rng.uniform();
    sq += q[i] = rng.uniform();
  }
  for (std::size_t i = 0; i < k; ++i) {
    p[i] /= sp;
    q[i] /= sq;
  }
  for (auto _ : state) benchmark::DoNotOptimize(js_divergence(p, q));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(k));
}
BENCHMARK(BM_JsDivergence)->Arg(500)->Arg(50000);

void BM_ReservoirInsert(benchmark::State& state) {
  std::vector<Document> docs(10000);
  for (auto _ : state) {
    ReplayBuffer buf(1000, 7);
    for (auto& d : docs) reservoir_insert(buf, {&d, 1});
    benchmark::DoNotOptimize(buf.size());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(docs.size()));
}
BENCHMARK(BM_ReservoirInsert);

void BM_FitPeriod(benchmark::State& state) {
  const Corpus c = bench_corpus(200);
  const auto docs = c.all();
  const DocRefs train(docs.begin(), docs.begin() + 160), val(docs.begin() + 160, docs.end());
  const ModelState m = init_model(ModelConfig{c.vocab_size(), 16, 16, c.label_count(), true, Nonlinearity::Tanh, 1});
  TrainConfig cfg;
  cfg.max_epochs = 3;
  for (auto _ : state) benchmark::DoNotOptimize(fit_period(m, train, val, cfg).best_val_metric);
}
BENCHMARK(BM_FitPeriod)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
