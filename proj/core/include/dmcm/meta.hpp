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

#include <deque>
#include <memory>
#include <optional>
#include <vector>

#include "dmcm/model.hpp"
#include "dmcm/tasks.hpp"

namespace dmcm {

enum class GradOrder { First, Second };
enum class ThetaOpt { Sgd, Adam };
enum class Method { Maml, Anil, Cavia, Dmcm };

std::string method_name(Method m);
Method method_from(const std::string& name);

struct TrainConfig {
  double inner_lr = 0.1;
  double inner_decay = 1.0;  // per-step factor within one adaptation call
  double meta_lr = 0.001;
  int inner_steps = 10;
  int chain_tasks = 35;   // N: tasks per meta-update (chain length for DMCM,
                          // batch size for the baselines, which take B = 0)
  int warmup_tasks = 10;  // B: leading chain tasks excluded from the meta-loss
  int s_adapt = 1;        // evaluation-time sweeps over the contexts
  int shots = 10;
  bool recombination = false;
  GradOrder order = GradOrder::Second;
  ThetaOpt optimizer = ThetaOpt::Sgd;
  double mislabel_rate = 0.0;

  void validate(int num_contexts, Method method) const;
};

// Source of tasks and datasets. Production code uses SineStream; tests
// inject wrappers to replay or corrupt the stream.
class TaskStream {
 public:
  virtual ~TaskStream() = default;
  virtual SineTask initial() = 0;
  virtual SineTask conditional(const SineTask& prev,
                               const std::vector<int>& changing_factors) = 0;
  virtual TaskDataset draw(const SineTask& task, int n) = 0;
  virtual const std::vector<FactorSpec>& factors() const = 0;
};

class SineStream final : public TaskStream {
 public:
  SineStream(std::vector<FactorSpec> factors, RangePartition partition,
             Rng rng)
      : factors_(std::move(factors)), partition_(std::move(partition)),
        rng_(std::move(rng)) {}

  SineTask initial() override {
    return sample_task(factors_, partition_, rng_);
  }
  SineTask conditional(const SineTask& prev,
                       const std::vector<int>& changing) override {
    return sample_conditional(prev, changing, factors_, partition_, rng_);
  }
  TaskDataset draw(const SineTask& task, int n) override {
    return sample_shots(factors_, task, n, rng_);
  }
  const std::vector<FactorSpec>& factors() const override { return factors_; }
  const RangePartition& partition() const { return partition_; }
  Rng& rng() { return rng_; }

 private:
  std::vector<FactorSpec> factors_;
  RangePartition partition_;
  Rng rng_;
};

// A context vector stashed for the recombination loop, together with the
// chain position at which it was adapted and the task it was adapted to.
struct SavedContext {
  long long adapted_at = -1;
  Tensor phi;
  SineTask task;
};

struct ChainState {
  int cursor = 0;                        // context index in [0, K)
  std::optional<SineTask> prev_task;
  ContextBank bank;
  std::vector<long long> last_adapted;   // per context: global task index
  std::vector<SineTask> last_task;       // per context: task when adapted
  std::vector<std::deque<SavedContext>> saved;  // recombination buffer
  long long tasks_done = 0;              // global task counter

  void init(const ContextSpec& spec);
  // Drops graph handles; called when the meta-step tape is discarded.
  void detach_all();
};

struct RecombLoad {
  long long at_task = 0;
  int context = 0;
  long long adapted_at = 0;
};

struct MetaStepReport {
  double meta_basic = 0.0;
  double meta_recomb = 0.0;
  std::vector<double> inner_losses;  // final inner training loss per task
  double theta_grad_norm = 0.0;
  int recomb_applied = 0;
  int recomb_skipped = 0;  // buffer underfilled; term skipped and flagged
  std::vector<RecombLoad> recomb_loads;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  long long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

// One adaptation call: `inner_steps` gradient steps on phi^s only, with
// step size inner_lr * inner_decay^t. Other context vectors are untouched.
// With GradOrder::Second the steps are recorded so the result stays
// differentiable w.r.t. theta; with GradOrder::First the updated vector is
// a constant. The caller controls zero-initialization of phi^s.
ContextBank inner_adapt(Tape& tape, const ModelSpec& spec,
                        const ParamSet& params, const ContextBank& bank,
                        int s, const TaskDataset& train,
                        const TrainConfig& cfg,
                        double* final_loss = nullptr);

// Sequential test-time adaptation: s_adapt sweeps over contexts 1..K in
// order, each adaptation restarting phi^s from zero with the other vectors
// held at their latest values. One dataset per context (they may all alias
// the same dataset).
ContextBank adapt_test(const ModelSpec& spec, const ParamSet& params,
                       const std::vector<TaskDataset>& per_context,
                       const TrainConfig& cfg);

// Full-parameter (Maml) or head-only (Anil) evaluation-time adaptation:
// s_adapt * inner_steps plain gradient steps.
ParamSet adapt_params_eval(Method mode, const ModelSpec& spec,
                           const ParamSet& params, const TaskDataset& train,
                           const TrainConfig& cfg);

// Bank whose phi^k is copied from the k-th source bank; no gradient steps.
// Exactly one source per context index is required.
ContextBank compose_zero_shot(
    const std::vector<std::pair<ContextBank, int>>& sources, int K);

// Plain gradient descent / adaptive-moment update of theta.
void apply_theta_update(ParamSet& theta, const ParamSet& watched,
                        const GradMap& grads, const TrainConfig& cfg,
                        AdamState& adam);

// The chained DMCM trainer (Alg. 1 semantics): conditional task sampling
// with a cycling factor cursor, warm-up masking, optional recombination
// loop, persistent chain state across meta-steps.
class DmcmEngine {
 public:
  DmcmEngine(ModelSpec spec, TrainConfig cfg, std::uint64_t seed);

  MetaStepReport step(TaskStream& stream);

  const ModelSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }
  const ParamSet& params() const { return theta_; }
  ParamSet& params() { return theta_; }
  ChainState& chain() { return chain_; }
  const ChainState& chain() const { return chain_; }
  AdamState& adam() { return adam_; }
  Rng& label_rng() { return label_rng_; }
  long long steps_done() const { return steps_; }
  void set_steps_done(long long n) { steps_ = n; }

 private:
  ModelSpec spec_;
  TrainConfig cfg_;
  ParamSet theta_;
  ChainState chain_;
  AdamState adam_;
  Rng label_rng_;
  long long steps_ = 0;
};

// Batch trainer for the MAML / ANIL / CAVIA baselines: chain_tasks
// independent tasks per meta-update, Eq. 2 averaging.
class BaselineEngine {
 public:
  BaselineEngine(Method mode, ModelSpec spec, TrainConfig cfg,
                 std::uint64_t seed);

  MetaStepReport step(TaskStream& stream);

  Method mode() const { return mode_; }
  const ModelSpec& spec() const { return spec_; }
  const TrainConfig& config() const { return cfg_; }
  const ParamSet& params() const { return theta_; }
  ParamSet& params() { return theta_; }
  AdamState& adam() { return adam_; }
  long long steps_done() const { return steps_; }
  void set_steps_done(long long n) { steps_ = n; }

 private:
  Method mode_;
  ModelSpec spec_;
  TrainConfig cfg_;
  ParamSet theta_;
  AdamState adam_;
  long long steps_ = 0;
};

}  // namespace dmcm
