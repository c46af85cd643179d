#include <benchmark/benchmark.h>

#include "unlearn/harness.hpp"

using namespace unlearn;

namespace {

ParamVector filled(std::size_t n, Rng& rng) {
  ParamVector v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void BM_SophiaStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = Rng::stream(Seed{1}, "bench");
  OptimizerState s = OptimizerState::zeros(n, LearningRateSchedule::constant(1e-3));
  ParamVector theta = filled(n, rng);
  const ParamVector g = filled(n, rng);
  for (auto _ : state) {
    StepResult r = sophia_step(s, g, theta);
    benchmark::DoNotOptimize(r.theta.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_SophiaStep)->Arg(1 << 10)->Arg(1 << 16);

void BM_AdamWStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = Rng::stream(Seed{2}, "bench");
  OptimizerState s = OptimizerState::zeros(n, LearningRateSchedule::constant(1e-3));
  ParamVector theta = filled(n, rng);
  const ParamVector g = filled(n, rng);
  for (auto _ : state) {
    StepResult r = adamw_step(s, g, theta);
    benchmark::DoNotOptimize(r.theta.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_AdamWStep)->Arg(1 << 10)->Arg(1 << 16);

void BM_BatchGradient(benchmark::State& state) {
  ExperimentConfig config;
  const Corpus corpus = prepare_corpus(config);
  const TinyLM model = TinyLM::initialize(config.model_config(), Seed{3});
  auto batch = training_examples(corpus, Split::retain);
  batch.resize(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    ParamVector g = grad_sequence_nll(model, batch);
    benchmark::DoNotOptimize(g.values().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_BatchGradient)->Arg(4)->Arg(32);

void BM_Evaluate(benchmark::State& state) {
  ExperimentConfig config;
  const Corpus corpus = prepare_corpus(config);
  const TinyLM model = TinyLM::initialize(config.model_config(), Seed{4});
  for (auto _ : state) {
    MetricsReport m = evaluate(model, corpus, config.eval_options());
    benchmark::DoNotOptimize(m.forget_quality);
  }
}
BENCHMARK(BM_Evaluate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
