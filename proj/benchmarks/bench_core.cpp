/*
 * Copyright 2026 dmcm-lab authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <benchmark/benchmark.h>

#include "dmcm/experiments.hpp"

using namespace dmcm;

namespace {

ModelSpec small_spec() {
  ModelSpec spec;
  spec.net = {1, {40, 40}, 1, "relu"};
  spec.ctx.entries = {{"a", 3, 0, {"amplitude"}}, {"p", 3, 0, {"phase"}}};
  return spec;
}

TaskDataset random_batch(int n, Rng& rng) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  std::vector<double> ys(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs[size_t(i)] = rng.uniform(-5.0, 5.0);
    ys[size_t(i)] = rng.uniform(-5.0, 5.0);
  }
  TaskDataset d;
  d.x = Tensor({n, 1}, std::move(xs));
  d.y = Tensor({n, 1}, std::move(ys));
  return d;
}

void BM_forward(benchmark::State& state) {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_params(spec, 1);
  const ContextBank bank = ContextBank::zeros(spec.ctx);
  Rng rng(3);
  const TaskDataset d = random_batch(10, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(spec, params, bank, d.x).values());
  }
}
BENCHMARK(BM_forward);

void BM_backward_theta(benchmark::State& state) {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_params(spec, 1);
  const ContextBank bank = ContextBank::zeros(spec.ctx);
  Rng rng(3);
  const TaskDataset d = random_batch(10, rng);
  for (auto _ : state) {
    Tape tape;
    const ParamSet w = params.watched(tape);
    const Tensor loss = mse_loss(forward(spec, w, bank, d.x), d.y);
    benchmark::DoNotOptimize(backward(loss, w.all()));
  }
}
BENCHMARK(BM_backward_theta);

void BM_inner_adapt_second_order(benchmark::State& state) {
  const ModelSpec spec = small_spec();
  const ParamSet params = init_params(spec, 1);
  Rng rng(3);
  const TaskDataset d = random_batch(10, rng);
  TrainConfig cfg;
  cfg.inner_steps = int(state.range(0));
  for (auto _ : state) {
    Tape tape;
    const ParamSet w = params.watched(tape);
    const ContextBank bank = ContextBank::zeros(spec.ctx);
    benchmark::DoNotOptimize(inner_adapt(tape, spec, w, bank, 0, d, cfg));
  }
}
BENCHMARK(BM_inner_adapt_second_order)->Arg(1)->Arg(10);

void BM_dmcm_meta_step(benchmark::State& state) {
  ExperimentConfig cfg = presets::standard(Method::Dmcm);
  DmcmEngine engine(cfg.model_spec(), cfg.train, 1);
  SineStream stream(cfg.factors, cfg.partition(), Rng(7));
  for (auto _ : state) {
    benchmark::DoNotOptimize(engine.step(stream));
  }
}
BENCHMARK(BM_dmcm_meta_step);

void BM_adapt_test(benchmark::State& state) {
  ExperimentConfig cfg = presets::standard(Method::Dmcm);
  const ModelSpec spec = cfg.model_spec();
  const ParamSet params = init_params(spec, 1);
  Rng rng(3);
  const TaskDataset d = random_batch(10, rng);
  const std::vector<TaskDataset> per_context(size_t(spec.ctx.count()), d);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        adapt_test(spec, params, per_context, cfg.train));
  }
}
BENCHMARK(BM_adapt_test);

}  // namespace

BENCHMARK_MAIN();
