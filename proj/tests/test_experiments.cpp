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
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "dmcm/experiments.hpp"

using namespace dmcm;

namespace {

// Small configs keep this suite in seconds; the acceptance suite runs the
// full-size studies.
ExperimentConfig tiny(Method method) {
  ExperimentConfig cfg = presets::standard(method);
  cfg.network.hidden = {12, 12};
  cfg.train.inner_steps = 3;
  cfg.train.s_adapt = method == Method::Dmcm ? 2 : 1;
  cfg.train.chain_tasks = method == Method::Dmcm ? 8 : 5;
  cfg.train.warmup_tasks = method == Method::Dmcm ? 3 : 0;
  cfg.budget = 4;
  cfg.eval_every = 2;
  cfg.eval_task_count = 20;
  cfg.eval_points = 30;
  return cfg;
}

}  // namespace

TEST_CASE("stats_of: mean and 1.96-sigma confidence half-width") {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  const EvalStats s = stats_of(xs);
  CHECK(s.mean == doctest::Approx(2.5));
  const double sd = std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 3.0);
  CHECK(s.ci95 == doctest::Approx(1.96 * sd / 2.0).epsilon(1e-12));
  CHECK(stats_of({7.0}).ci95 == 0.0);
}

TEST_CASE("make_eval_set freezes tasks, shot sets and test sets") {
  const auto factors = presets::standard(Method::Dmcm).factors;
  const EvalSet a = make_eval_set(factors, 10, 5, 20, Rng(3));
  const EvalSet b = make_eval_set(factors, 10, 5, 20, Rng(3));
  REQUIRE(a.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(a.tasks[size_t(i)].values == b.tasks[size_t(i)].values);
    CHECK(a.shot_sets[size_t(i)].x.same_values(b.shot_sets[size_t(i)].x));
    CHECK(a.test_sets[size_t(i)].y.same_values(b.test_sets[size_t(i)].y));
    CHECK(a.shot_sets[size_t(i)].size() == 5);
    CHECK(a.test_sets[size_t(i)].size() == 20);
  }
}

TEST_CASE("eval_tasks: a perfect predictor has zero mean and zero CI") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  const ModelSpec spec = cfg.model_spec();
  const ParamSet params = init_params(spec, 3);
  EvalSet eval = make_eval_set(cfg.factors, 5, cfg.train.shots, 10, Rng(5));
  const ContextBank zeros = ContextBank::zeros(spec.ctx);
  for (int i = 0; i < eval.size(); ++i) {
    eval.shot_sets[size_t(i)].y =
        forward(spec, params, zeros, eval.shot_sets[size_t(i)].x).detached();
    eval.test_sets[size_t(i)].y =
        forward(spec, params, zeros, eval.test_sets[size_t(i)].x).detached();
  }
  const EvalStats stats =
      eval_tasks(Method::Dmcm, spec, params, eval, cfg.train);
  CHECK(stats.mean == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(stats.ci95 == doctest::Approx(0.0).epsilon(1e-20));
}

TEST_CASE("eval_tasks: deterministic and does not mutate parameters") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  const ModelSpec spec = cfg.model_spec();
  const ParamSet params = init_params(spec, 7);
  const EvalSet eval =
      make_eval_set(cfg.factors, 8, cfg.train.shots, 16, Rng(7));
  const std::vector<double> before = params.weights[0].values();
  const EvalStats s1 = eval_tasks(Method::Dmcm, spec, params, eval, cfg.train);
  const EvalStats s2 = eval_tasks(Method::Dmcm, spec, params, eval, cfg.train);
  CHECK(s1.mean == s2.mean);
  CHECK(s1.ci95 == s2.ci95);
  CHECK(params.weights[0].values() == before);
}

TEST_CASE("CI cross-check against a direct recomputation") {
  ExperimentConfig cfg = tiny(Method::Cavia);
  const ModelSpec spec = cfg.model_spec();
  const ParamSet params = init_params(spec, 9);
  const EvalSet eval =
      make_eval_set(cfg.factors, 12, cfg.train.shots, 16, Rng(9));
  const EvalStats stats =
      eval_tasks(Method::Cavia, spec, params, eval, cfg.train);
  std::vector<double> mses;
  for (int i = 0; i < eval.size(); ++i) {
    const std::vector<TaskDataset> per_context(1, eval.shot_sets[size_t(i)]);
    const ContextBank bank = adapt_test(spec, params, per_context, cfg.train);
    mses.push_back(mse_loss(forward(spec, params, bank,
                                    eval.test_sets[size_t(i)].x),
                            eval.test_sets[size_t(i)].y)
                       .item());
  }
  double mean = 0;
  for (const double m : mses) mean += m;
  mean /= double(mses.size());
  double sq = 0;
  for (const double m : mses) sq += (m - mean) * (m - mean);
  const double ci = 1.96 * std::sqrt(sq / double(mses.size() - 1)) /
                    std::sqrt(double(mses.size()));
  CHECK(stats.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(stats.ci95 == doctest::Approx(ci).epsilon(1e-12));
}

TEST_CASE("trainer: rows appear at the evaluation cadence") {
  ExperimentConfig cfg = tiny(Method::Cavia);
  cfg.budget = 6;
  cfg.eval_every = 2;
  Trainer t(cfg, 1);
  t.train_to(cfg.budget);
  REQUIRE(t.rows().size() == 3);
  CHECK(t.rows()[0].meta_step == 2);
  CHECK(t.rows()[2].meta_step == 6);
  CHECK(t.rows()[0].method == "cavia");
  for (const MetricRow& r : t.rows()) CHECK(r.wall_time_s == 0.0);
}

TEST_CASE("trainer: fixed (config, seed) reproduces every row bitwise") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  Trainer a(cfg, 5);
  Trainer b(cfg, 5);
  a.train_to(cfg.budget);
  b.train_to(cfg.budget);
  REQUIRE(a.rows().size() == b.rows().size());
  for (std::size_t i = 0; i < a.rows().size(); ++i) {
    CHECK(a.rows()[i].mean_mse == b.rows()[i].mean_mse);
    CHECK(a.rows()[i].ci95 == b.rows()[i].ci95);
    CHECK(a.rows()[i].meta_step == b.rows()[i].meta_step);
  }
}

TEST_CASE("trainer: divergence aborts with a diagnostic row") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  cfg.train.inner_lr = 1e9;
  Trainer t(cfg, 3);
  t.train_to(cfg.budget);
  CHECK(t.diverged());
  REQUIRE_FALSE(t.rows().empty());
  CHECK(std::isnan(t.rows().back().mean_mse));
}

TEST_CASE("mislabel rate 0 equals the standard training path bitwise") {
  ExperimentConfig base = tiny(Method::Dmcm);
  ExperimentConfig zero = base;
  zero.train.mislabel_rate = 0.0;
  Trainer a(base, 11);
  Trainer b(zero, 11);
  a.train_to(base.budget);
  b.train_to(zero.budget);
  for (std::size_t l = 0; l < a.params().weights.size(); ++l) {
    CHECK(a.params().weights[l].same_values(b.params().weights[l]));
  }
  ExperimentConfig noisy = base;
  noisy.train.mislabel_rate = 0.5;
  Trainer c(noisy, 11);
  c.train_to(noisy.budget);
  CHECK_FALSE(a.params().weights[0].same_values(c.params().weights[0]));
}

TEST_CASE("run_training_curve emits one row block per seed") {
  ExperimentConfig cfg = tiny(Method::Cavia);
  cfg.budget = 4;
  cfg.eval_every = 2;
  cfg.seeds = {0, 1};
  const auto rows = run_training_curve(cfg, 2);
  CHECK(rows.size() == 4);
  CHECK(rows[0].seed == 0);
  CHECK(rows[2].seed == 1);
}

TEST_CASE("run_ood_sweep: rows per (fraction, trial, method)") {
  ExperimentConfig dmcm = tiny(Method::Dmcm);
  ExperimentConfig cavia = tiny(Method::Cavia);
  dmcm.budget = cavia.budget = 2;
  dmcm.eval_every = cavia.eval_every = 2;
  const auto rows = run_ood_sweep({dmcm, cavia}, {0.6}, 2, 2);
  CHECK(rows.size() == 4);
  int dmcm_rows = 0;
  for (const MetricRow& r : rows) {
    CHECK(r.trial.substr(0, 6) == "frac60");
    if (r.method == "dmcm") ++dmcm_rows;
  }
  CHECK(dmcm_rows == 2);
}

TEST_CASE("ood training stays in admissible cells; evaluation ignores them") {
  const auto factors = presets::standard(Method::Dmcm).factors;
  Rng ex_rng(Rng::splitmix64(Rng::fnv1a("ood-trial")));
  RangePartition p;
  p.bins = {5, 5};
  p.excluded = random_exclusions(factors, p.bins, 15, ex_rng);
  SineStream stream(factors, p, Rng(21));
  for (int i = 0; i < 2000; ++i) {
    CHECK_FALSE(p.is_excluded(factors, stream.initial().values));
  }
  const EvalSet eval = make_eval_set(factors, 200, 10, 10, Rng(33));
  int excluded_seen = 0;
  for (const SineTask& t : eval.tasks) {
    if (p.is_excluded(factors, t.values)) ++excluded_seen;
  }
  CHECK(excluded_seen > 0);
}

TEST_CASE("zero_shot_eval: structure, determinism, empty-restriction error") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  const ModelSpec spec = cfg.model_spec();
  const ParamSet params = init_params(spec, 13);
  const auto r1 = zero_shot_eval(spec, params, cfg.train, cfg.factors,
                                 {1.5, 5.0}, 10, Rng(3));
  const auto r2 = zero_shot_eval(spec, params, cfg.train, cfg.factors,
                                 {1.5, 5.0}, 10, Rng(3));
  CHECK(r1.pairs == 10);
  CHECK(r1.self_adapted.mean == r2.self_adapted.mean);
  CHECK(r1.recomb_full.mean == r2.recomb_full.mean);
  CHECK(r1.recomb_restricted.mean == r2.recomb_restricted.mean);
  CHECK(r1.self_adapted.mean > 0.0);
  CHECK_THROWS_AS(zero_shot_eval(spec, params, cfg.train, cfg.factors,
                                 {5.0, 1.5}, 4, Rng(3)),
                  std::invalid_argument);
}

TEST_CASE("run_mislabel aggregates means per rate") {
  ExperimentConfig cfg = tiny(Method::Dmcm);
  cfg.seeds = {0, 1};
  const MislabelReport report = run_mislabel(cfg, {0.0, 0.5}, 2);
  CHECK(report.mean_by_rate.size() == 2);
  CHECK(report.mean_by_rate.count(0.0) == 1);
  CHECK(report.mean_by_rate.count(0.5) == 1);
  CHECK(report.rows.size() == 2 * 2 * 2);  // rates x seeds x eval points
}

TEST_CASE("run_param_ablation rejects non-positive sizes and tags rows") {
  ExperimentConfig base = presets::param_ablation(3);
  base.network.hidden = {8, 8};
  base.train.chain_tasks = 6;
  base.train.warmup_tasks = 2;
  base.train.inner_steps = 2;
  base.train.s_adapt = 1;
  base.budget = 2;
  base.eval_every = 2;
  base.eval_task_count = 5;
  base.eval_points = 5;
  CHECK_THROWS_AS(run_param_ablation(base, {0}, 1), std::invalid_argument);
  const auto rows = run_param_ablation(base, {1, 2}, 1);
  CHECK(rows.size() == 2);
  CHECK(rows[0].trial == "size1");
  CHECK(rows[1].trial == "size2");
}

TEST_CASE("ncontext presets match the declared context layouts") {
  const ExperimentConfig c1 = presets::ncontext("1[APY]");
  CHECK(c1.method == Method::Cavia);
  CHECK(c1.context.entries.size() == 1);
  CHECK(c1.context.entries[0].size == 9);
  const ExperimentConfig c2 = presets::ncontext("2[A][Y]");
  CHECK(c2.context.entries.size() == 2);
  for (const auto& e : c2.context.entries) {
    for (const auto& f : e.factors) CHECK(f != "phase");
  }
  const ExperimentConfig c3 = presets::ncontext("3[A][Y][P]");
  CHECK(c3.context.entries[0].inject_layer == 1);
  CHECK(c3.context.entries[1].inject_layer == 2);
  CHECK(c3.context.entries[2].inject_layer == 0);
  const ExperimentConfig c4 = presets::ncontext("4[A1][A2][Y][P]");
  CHECK(c4.factors.size() == 4);
  CHECK(c4.context.entries.size() == 4);
  CHECK(c4.factors[0].low == doctest::Approx(0.05));
  CHECK(c4.factors[0].high == doctest::Approx(2.5));
  CHECK_THROWS_AS(presets::ncontext("9[?]"), std::invalid_argument);
  CHECK(presets::ncontext("3[A][Y][P]", true).train.s_adapt == 10);
  CHECK(presets::ncontext("3[A][Y][P]", false).train.s_adapt == 5);
}

TEST_CASE("timing set holds the five named configurations") {
  const auto set = presets::timing_set();
  REQUIRE(set.size() == 5);
  CHECK(set[0].name == "maml");
  CHECK(set[0].method == Method::Maml);
  CHECK(set[0].context.empty());
  CHECK(set[1].name == "cavia(1)");
  CHECK(set[2].name == "dmcm(2)");
  CHECK(set[3].name == "dmcm(3)");
  CHECK(set[4].name == "dmcm(4)");
  for (const auto& cfg : set) CHECK(cfg.train.s_adapt == 5);
}

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](int i) { hits[size_t(i)] += 1; });
  for (const int h : hits) CHECK(h == 1);
}

TEST_CASE("default_workers honors the DMCM_WORKERS environment override") {
  ::setenv("DMCM_WORKERS", "3", 1);
  CHECK(default_workers(8) == 3);
  ::unsetenv("DMCM_WORKERS");
  CHECK(default_workers(8) == 8);
  CHECK(default_workers(0) == 1);
}
