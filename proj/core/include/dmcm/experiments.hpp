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
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>

#include "dmcm/meta.hpp"
#include "dmcm/metrics.hpp"

namespace dmcm {

// Full training / evaluation recipe for one run or study.
struct ExperimentConfig {
  std::string name = "run";
  Method method = Method::Dmcm;
  TrainConfig train;
  NetworkConfig network;
  ContextSpec context;
  std::vector<FactorSpec> factors;
  std::vector<int> partition_bins;             // per factor
  std::set<std::vector<int>> excluded_cells;   // explicit training exclusions
  double exclusion_fraction = 0.0;             // for random-exclusion sweeps
  int trials = 30;
  long long budget = 4000;    // meta-gradient updates
  int eval_task_count = 500;  // frozen evaluation tasks
  int eval_points = 100;      // test points per evaluation task
  long long eval_every = 100;
  std::vector<std::uint64_t> seeds = {0};
  std::uint64_t eval_seed = 9000;  // shared across methods for comparability
  std::optional<std::pair<double, double>> restrict_amplitude;

  void validate() const;
  ModelSpec model_spec() const { return {network, context}; }
  RangePartition partition() const;
  std::vector<int> amplitude_factor_indices() const;
};

// Frozen evaluation material: tasks drawn once from the full distribution,
// with fixed shot sets and fresh test points per task.
struct EvalSet {
  std::vector<SineTask> tasks;
  std::vector<TaskDataset> shot_sets;
  std::vector<TaskDataset> test_sets;
  int size() const { return int(tasks.size()); }
};

EvalSet make_eval_set(const std::vector<FactorSpec>& factors, int n_tasks,
                      int shots, int test_points, Rng rng);

struct EvalStats {
  double mean = 0.0;
  double ci95 = 0.0;
  int count = 0;
};

EvalStats stats_of(const std::vector<double>& values);

// Adapt-then-score over a frozen evaluation set; never mutates params.
EvalStats eval_tasks(Method method, const ModelSpec& spec,
                     const ParamSet& params, const EvalSet& eval,
                     const TrainConfig& cfg);

// One training run: owns the engine, the task stream, and the metric rows.
// Fully deterministic for a fixed (config, seed); checkpointable.
class Trainer {
 public:
  Trainer(ExperimentConfig cfg, std::uint64_t seed);

  // Advances to `target` meta-steps, evaluating at every multiple of
  // eval_every and at the final step. Divergence aborts with a diagnostic
  // row (mean_mse = NaN) and marks the trainer diverged.
  void train_to(long long target);

  EvalStats evaluate_now();

  long long steps_done() const;
  bool diverged() const { return diverged_; }
  const std::vector<MetricRow>& rows() const { return rows_; }
  std::vector<MetricRow>& rows() { return rows_; }

  const ExperimentConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  const ModelSpec& model_spec() const { return spec_; }
  const ParamSet& params() const;
  ParamSet& params();
  bool is_dmcm() const { return dmcm_ != nullptr; }
  DmcmEngine& dmcm() { return *dmcm_; }
  BaselineEngine& baseline() { return *baseline_; }
  SineStream& stream() { return *stream_; }
  const EvalSet& eval_set();
  std::string trial_tag;  // copied into emitted rows

 private:
  ExperimentConfig cfg_;
  std::uint64_t seed_;
  ModelSpec spec_;
  std::unique_ptr<DmcmEngine> dmcm_;
  std::unique_ptr<BaselineEngine> baseline_;
  std::unique_ptr<SineStream> stream_;
  std::optional<EvalSet> eval_;
  std::vector<MetricRow> rows_;
  bool diverged_ = false;
};

// Runs fn(0..n-1) on a bounded pool; results must be written into
// index-addressed slots so aggregation is order-independent.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);
int default_workers(int requested = 0);  // DMCM_WORKERS env overrides

// ---- studies ----------------------------------------------------------

// Training curve over the budget for every configured seed.
std::vector<MetricRow> run_training_curve(const ExperimentConfig& cfg,
                                          int workers = 1);

// Random range-exclusion sweep: per trial, an exclusion set of the given
// fraction is drawn (shared across method configs), each config is trained,
// and the full-distribution MSE is recorded at 2000/4000 meta-gradients.
std::vector<MetricRow> run_ood_sweep(const std::vector<ExperimentConfig>& cfgs,
                                     const std::vector<double>& fractions,
                                     int trials, int workers = 1);

struct ZeroShotReport {
  EvalStats self_adapted;
  EvalStats recomb_full;
  EvalStats recomb_restricted;
  int pairs = 0;
};

// Zero-shot sharing evaluation on a trained model. For each sampled target
// task, every context vector is taken from a bank adapted to a different
// task sharing only that context's factors; the restricted variant draws
// the nuisance amplitude of non-amplitude sources from the given range.
ZeroShotReport zero_shot_eval(const ModelSpec& spec, const ParamSet& params,
                              const TrainConfig& cfg,
                              const std::vector<FactorSpec>& factors,
                              std::pair<double, double> restricted_amp,
                              int pairs, Rng rng);

// Trains with the recombination recipe and reports the Table-5-style rows.
ZeroShotReport run_zeroshot(const ExperimentConfig& cfg,
                            std::vector<MetricRow>* rows_out = nullptr);

struct MislabelReport {
  std::vector<MetricRow> rows;
  std::map<double, double> mean_by_rate;  // across seeds
};

MislabelReport run_mislabel(const ExperimentConfig& base,
                            const std::vector<double>& rates,
                            int workers = 1);

// N-context study: full-range runs for every variant, or per-trial
// interval-restricted training with full-range evaluation.
std::vector<MetricRow> run_ncontext(const std::vector<ExperimentConfig>& cfgs,
                                    bool ood, int trials, int workers = 1);

std::vector<MetricRow> run_param_ablation(const ExperimentConfig& base,
                                          const std::vector<int>& sizes,
                                          int workers = 1);

struct TimingRow {
  std::string config;
  double train_seconds = 0.0;
  double adapt_seconds = 0.0;
  double adapt_seconds_repeat = 0.0;  // stability: re-timed adaptation
};

// Wall time of `train_steps` meta-gradients and of adapting `adapt_tasks`
// fresh tasks, single thread pinned. Absolute values are report-only.
std::vector<TimingRow> run_timing(const std::vector<ExperimentConfig>& cfgs,
                                  long long train_steps = 400,
                                  int adapt_tasks = 300);

struct GradCheckReport {
  // max-over-seeds relative error of reverse-mode gradients of a random
  // 1-40-40-1 context-MLP MSE against central finite differences
  double first_order_max_rel = 0.0;
  double first_order_seconds = 0.0;
  // relative error of the meta-gradient (one inner step, then the test
  // loss) on a 1-4-1 network against finite differences over theta
  double second_order_max_rel = 0.0;
  double second_order_seconds = 0.0;
  // absolute error of the one-step meta-gradient on the linear model
  // against the hand-derived closed form
  double closed_form_abs_err = 0.0;
};

GradCheckReport run_gradcheck(int seeds = 20);

// ---- study presets ----------------------------------------------------

namespace presets {

// Standard two-factor study: amplitude in [0.1,5], phase in [0,pi],
// 2x40 net, 10 inner steps, meta-batch of 25 tasks raised by B=10 warm-up
// chain positions for dmcm.
ExperimentConfig standard(Method method, int shots = 10);

// Two-context recombination recipe used for the zero-shot study.
ExperimentConfig zeroshot();

// Three-factor study variants: "1[APY]", "2[A][Y]", "2[AY][P]",
// "3[A][Y][P]", "4[A1][A2][Y][P]".
ExperimentConfig ncontext(const std::string& variant, bool ood = false);
std::vector<std::string> ncontext_variants();

// Three-context recombination necessity comparison.
ExperimentConfig recomb_necessity(bool with_loop);

// Entangled amplitude-phase context of the given size plus a y-shift
// context.
ExperimentConfig param_ablation(int entangled_size);

// The five timing configurations.
std::vector<ExperimentConfig> timing_set();

}  // namespace presets

}  // namespace dmcm
