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
#include "dmcm/experiments.hpp"

#include "dmcm/gradcheck.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <thread>

#ifdef __linux__
#include <sched.h>
#endif

namespace dmcm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!factors.empty(), "config.factors must not be empty");
  for (const FactorSpec& f : factors) f.validate();
  require(partition_bins.size() == factors.size(),
          "config.partition_bins must have one entry per factor");
  require(budget >= 1, "config.budget must be >= 1");
  require(eval_task_count >= 1, "config.eval_task_count must be >= 1");
  require(eval_points >= 1, "config.eval_points must be >= 1");
  require(eval_every >= 1, "config.eval_every must be >= 1");
  require(trials >= 1, "config.trials must be >= 1");
  require(!seeds.empty(), "config.seeds must not be empty");
  require(exclusion_fraction >= 0.0 && exclusion_fraction < 1.0,
          "config.exclusion_fraction must be in [0,1)");
  if (restrict_amplitude) {
    require(restrict_amplitude->first < restrict_amplitude->second,
            "config.restrict_amplitude must be a non-empty range");
  }
  model_spec().validate();
  train.validate(context.count(), method);
  partition().validate(factors);
  // context factor labels must resolve
  for (const ContextEntry& e : context.entries) {
    for (const std::string& name : e.factors) {
      bool found = false;
      for (const FactorSpec& f : factors) found = found || f.name == name;
      require(found, "context '" + e.name + "' references unknown factor '" +
                         name + "'");
    }
  }
}

RangePartition ExperimentConfig::partition() const {
  RangePartition p;
  p.bins = partition_bins;
  p.excluded = excluded_cells;
  return p;
}

std::vector<int> ExperimentConfig::amplitude_factor_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    if (factors[i].role == FactorRole::Amplitude) out.push_back(int(i));
  }
  return out;
}

EvalSet make_eval_set(const std::vector<FactorSpec>& factors, int n_tasks,
                      int shots, int test_points, Rng rng) {
  const RangePartition full = RangePartition::trivial(factors.size());
  EvalSet set;
  set.tasks.reserve(size_t(n_tasks));
  for (int i = 0; i < n_tasks; ++i) {
    SineTask task = sample_task(factors, full, rng);
    set.shot_sets.push_back(sample_shots(factors, task, shots, rng));
    set.test_sets.push_back(sample_shots(factors, task, test_points, rng));
    set.tasks.push_back(std::move(task));
  }
  return set;
}

EvalStats stats_of(const std::vector<double>& values) {
  EvalStats s;
  s.count = int(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / double(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (const double v : values) sq += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(sq / double(values.size() - 1));
    s.ci95 = 1.96 * sd / std::sqrt(double(values.size()));
  }
  return s;
}

EvalStats eval_tasks(Method method, const ModelSpec& spec,
                     const ParamSet& params, const EvalSet& eval,
                     const TrainConfig& cfg) {
  std::vector<double> mses(static_cast<std::size_t>(eval.size()));
  for (int i = 0; i < eval.size(); ++i) {
    const TaskDataset& shots = eval.shot_sets[size_t(i)];
    const TaskDataset& test = eval.test_sets[size_t(i)];
    double mse = 0.0;
    if (method == Method::Maml || method == Method::Anil) {
      const ParamSet adapted =
          adapt_params_eval(method, spec, params, shots, cfg);
      const ContextBank none = ContextBank::zeros(spec.ctx);
      mse = mse_loss(forward(spec, adapted, none, test.x), test.y).item();
    } else {
      const std::vector<TaskDataset> per_context(size_t(spec.ctx.count()),
                                                 shots);
      const ContextBank bank = adapt_test(spec, params, per_context, cfg);
      mse = mse_loss(forward(spec, params, bank, test.x), test.y).item();
    }
    mses[size_t(i)] = mse;
  }
  return stats_of(mses);
}

Trainer::Trainer(ExperimentConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  spec_ = cfg_.model_spec();
  stream_ = std::make_unique<SineStream>(
      cfg_.factors, cfg_.partition(),
      Rng(Rng::splitmix64(seed ^ Rng::fnv1a("train-stream"))));
  if (cfg_.method == Method::Dmcm) {
    dmcm_ = std::make_unique<DmcmEngine>(spec_, cfg_.train, seed);
  } else {
    baseline_ =
        std::make_unique<BaselineEngine>(cfg_.method, spec_, cfg_.train, seed);
  }
}

long long Trainer::steps_done() const {
  return dmcm_ ? dmcm_->steps_done() : baseline_->steps_done();
}

const ParamSet& Trainer::params() const {
  return dmcm_ ? dmcm_->params() : baseline_->params();
}

ParamSet& Trainer::params() {
  return dmcm_ ? dmcm_->params() : baseline_->params();
}

const EvalSet& Trainer::eval_set() {
  if (!eval_) {
    eval_ = make_eval_set(cfg_.factors, cfg_.eval_task_count, cfg_.train.shots,
                          cfg_.eval_points,
                          Rng(Rng::splitmix64(cfg_.eval_seed)));
  }
  return *eval_;
}

EvalStats Trainer::evaluate_now() {
  return eval_tasks(cfg_.method, spec_, params(), eval_set(), cfg_.train);
}

void Trainer::train_to(long long target) {
  while (steps_done() < target && !diverged_) {
    try {
      if (dmcm_) {
        dmcm_->step(*stream_);
      } else {
        baseline_->step(*stream_);
      }
    } catch (const NumericalError&) {
      diverged_ = true;
      MetricRow row;
      row.method = method_name(cfg_.method);
      row.seed = seed_;
      row.meta_step = steps_done();
      row.mean_mse = std::numeric_limits<double>::quiet_NaN();
      row.ci95 = 0.0;
      row.trial = trial_tag;
      rows_.push_back(std::move(row));
      return;
    }
    const long long step = steps_done();
    if (step % cfg_.eval_every == 0 || step == cfg_.budget) {
      const EvalStats stats = evaluate_now();
      MetricRow row;
      row.method = method_name(cfg_.method);
      row.seed = seed_;
      row.meta_step = step;
      row.mean_mse = stats.mean;
      row.ci95 = stats.ci95;
      row.trial = trial_tag;
      rows_.push_back(std::move(row));
    }
  }
}

int default_workers(int requested) {
  if (const char* env = std::getenv("DMCM_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return requested >= 1 ? requested : 1;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::min(std::max(workers, 1), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<MetricRow> run_training_curve(const ExperimentConfig& cfg,
                                          int workers) {
  const int n = int(cfg.seeds.size());
  std::vector<std::vector<MetricRow>> per_seed(static_cast<std::size_t>(n));
  parallel_for(n, workers, [&](int i) {
    Trainer t(cfg, cfg.seeds[size_t(i)]);
    t.train_to(cfg.budget);
    per_seed[size_t(i)] = t.rows();
  });
  std::vector<MetricRow> rows;
  for (auto& r : per_seed) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

std::vector<MetricRow> run_ood_sweep(const std::vector<ExperimentConfig>& cfgs,
                                     const std::vector<double>& fractions,
                                     int trials, int workers) {
  require(!cfgs.empty(), "run_ood_sweep: no configs");
  struct Job {
    double fraction;
    int trial;
    std::size_t cfg_index;
  };
  std::vector<Job> jobs;
  for (const double f : fractions) {
    for (int t = 0; t < trials; ++t) {
      for (std::size_t c = 0; c < cfgs.size(); ++c) jobs.push_back({f, t, c});
    }
  }
  std::vector<std::vector<MetricRow>> results(jobs.size());
  parallel_for(int(jobs.size()), workers, [&](int ji) {
    const Job& job = jobs[size_t(ji)];
    ExperimentConfig cfg = cfgs[job.cfg_index];
    const long long cells = RangePartition{cfg.partition_bins, {}}.total_cells();
    const int count = int(std::llround(job.fraction * double(cells)));
    // The exclusion draw depends only on (fraction, trial) so that every
    // method sees the identical excluded region in a given trial.
    Rng ex_rng(Rng::splitmix64(Rng::fnv1a("ood-trial") ^
                               (std::uint64_t(std::llround(job.fraction * 100))
                                << 32) ^
                               std::uint64_t(job.trial)));
    cfg.excluded_cells =
        random_exclusions(cfg.factors, cfg.partition_bins, count, ex_rng);
    cfg.exclusion_fraction = job.fraction;
    Trainer t(cfg, cfg.seeds.front());
    t.trial_tag = "frac" + std::to_string(int(std::llround(job.fraction * 100))) +
                  "/t" + std::to_string(job.trial);
    t.train_to(cfg.budget);
    results[size_t(ji)] = t.rows();
  });
  std::vector<MetricRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

ZeroShotReport zero_shot_eval(const ModelSpec& spec, const ParamSet& params,
                              const TrainConfig& cfg,
                              const std::vector<FactorSpec>& factors,
                              std::pair<double, double> restricted_amp,
                              int pairs, Rng rng) {
  require(restricted_amp.first < restricted_amp.second,
          "zero_shot_eval: empty amplitude restriction");
  const int K = spec.ctx.count();
  require(K >= 2, "zero_shot_eval: needs at least two contexts");
  const RangePartition full = RangePartition::trivial(factors.size());

  // Factor indices covered by each context.
  std::vector<std::vector<int>> covered(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    for (const std::string& name : spec.ctx.entries[size_t(k)].factors) {
      for (std::size_t f = 0; f < factors.size(); ++f) {
        if (factors[f].name == name) covered[size_t(k)].push_back(int(f));
      }
    }
  }

  auto adapt_to = [&](const SineTask& task, Rng& r) {
    const TaskDataset shots = sample_shots(factors, task, cfg.shots, r);
    const std::vector<TaskDataset> per_context(size_t(K), shots);
    return adapt_test(spec, params, per_context, cfg);
  };

  std::vector<double> self_mse, full_mse, restr_mse;
  for (int p = 0; p < pairs; ++p) {
    const SineTask target = sample_task(factors, full, rng);
    const TaskDataset test = sample_shots(factors, target, 100, rng);

    const ContextBank self_bank = adapt_to(target, rng);
    self_mse.push_back(
        mse_loss(forward(spec, params, self_bank, test.x), test.y).item());

    for (const bool restricted : {false, true}) {
      std::vector<std::pair<ContextBank, int>> sources;
      for (int k = 0; k < K; ++k) {
        // Source task shares only this context's factors with the target;
        // the remaining factors are resampled.
        SineTask source = target;
        bool covers_amplitude = false;
        for (const int f : covered[size_t(k)]) {
          covers_amplitude = covers_amplitude ||
                             factors[size_t(f)].role == FactorRole::Amplitude;
        }
        for (std::size_t f = 0; f < factors.size(); ++f) {
          bool is_covered = false;
          for (const int cf : covered[size_t(k)]) {
            is_covered = is_covered || cf == int(f);
          }
          if (is_covered) continue;
          double lo = factors[f].low, hi = factors[f].high;
          if (restricted && !covers_amplitude &&
              factors[f].role == FactorRole::Amplitude) {
            lo = restricted_amp.first;
            hi = restricted_amp.second;
          }
          source.values[f] = rng.uniform(lo, hi);
        }
        sources.emplace_back(adapt_to(source, rng), k);
      }
      const ContextBank composed = compose_zero_shot(sources, K);
      const double mse =
          mse_loss(forward(spec, params, composed, test.x), test.y).item();
      (restricted ? restr_mse : full_mse).push_back(mse);
    }
  }

  ZeroShotReport report;
  report.pairs = pairs;
  report.self_adapted = stats_of(self_mse);
  report.recomb_full = stats_of(full_mse);
  report.recomb_restricted = stats_of(restr_mse);
  return report;
}

ZeroShotReport run_zeroshot(const ExperimentConfig& cfg,
                            std::vector<MetricRow>* rows_out) {
  require(cfg.train.recombination,
          "run_zeroshot: model must be trained with the recombination loop");
  Trainer t(cfg, cfg.seeds.front());
  t.train_to(cfg.budget);
  if (rows_out) *rows_out = t.rows();
  const std::pair<double, double> restriction =
      cfg.restrict_amplitude.value_or(std::make_pair(1.5, 5.0));
  return zero_shot_eval(t.model_spec(), t.params(), cfg.train, cfg.factors,
                        restriction, cfg.eval_task_count,
                        Rng(Rng::splitmix64(cfg.eval_seed ^
                                            Rng::fnv1a("zeroshot"))));
}

MislabelReport run_mislabel(const ExperimentConfig& base,
                            const std::vector<double>& rates, int workers) {
  struct Job {
    double rate;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const double r : rates) {
    for (const std::uint64_t s : base.seeds) jobs.push_back({r, s});
  }
  std::vector<std::vector<MetricRow>> results(jobs.size());
  std::vector<double> finals(jobs.size());
  parallel_for(int(jobs.size()), workers, [&](int ji) {
    const Job& job = jobs[size_t(ji)];
    ExperimentConfig cfg = base;
    cfg.train.mislabel_rate = job.rate;
    cfg.seeds = {job.seed};
    Trainer t(cfg, job.seed);
    t.trial_tag = "rate" + std::to_string(int(std::llround(job.rate * 100)));
    t.train_to(cfg.budget);
    results[size_t(ji)] = t.rows();
    finals[size_t(ji)] = t.rows().empty()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : t.rows().back().mean_mse;
  });
  MislabelReport report;
  for (auto& r : results) {
    report.rows.insert(report.rows.end(), r.begin(), r.end());
  }
  for (const double r : rates) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t ji = 0; ji < jobs.size(); ++ji) {
      if (jobs[ji].rate == r && std::isfinite(finals[ji])) {
        sum += finals[ji];
        n += 1;
      }
    }
    report.mean_by_rate[r] = n > 0 ? sum / double(n)
                                   : std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

std::vector<MetricRow> run_ncontext(const std::vector<ExperimentConfig>& cfgs,
                                    bool ood, int trials, int workers) {
  require(!cfgs.empty(), "run_ncontext: no configs");
  if (!ood) {
    std::vector<std::vector<MetricRow>> results(cfgs.size());
    parallel_for(int(cfgs.size()), workers, [&](int i) {
      Trainer t(cfgs[size_t(i)], cfgs[size_t(i)].seeds.front());
      t.trial_tag = cfgs[size_t(i)].name;
      t.train_to(cfgs[size_t(i)].budget);
      results[size_t(i)] = t.rows();
    });
    std::vector<MetricRow> rows;
    for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
    return rows;
  }

  struct Job {
    int trial;
    std::size_t cfg_index;
  };
  std::vector<Job> jobs;
  for (int t = 0; t < trials; ++t) {
    for (std::size_t c = 0; c < cfgs.size(); ++c) jobs.push_back({t, c});
  }
  std::vector<std::vector<MetricRow>> results(jobs.size());
  parallel_for(int(jobs.size()), workers, [&](int ji) {
    const Job& job = jobs[size_t(ji)];
    ExperimentConfig cfg = cfgs[job.cfg_index];
    // Training covers two of the four intervals per factor; the selection
    // depends only on the trial so every variant sees the same region.
    Rng sel(Rng::splitmix64(Rng::fnv1a("ncontext-ood") ^
                            std::uint64_t(job.trial)));
    std::vector<std::vector<int>> allowed;
    for (std::size_t f = 0; f < cfg.factors.size(); ++f) {
      const int bins = cfg.partition_bins[f];
      const int first = sel.uniform_int(0, bins - 1);
      int second = sel.uniform_int(0, bins - 2);
      if (second >= first) second += 1;
      allowed.push_back({first, second});
    }
    cfg.excluded_cells =
        exclusions_outside_intervals(cfg.partition_bins, allowed);
    cfg.eval_every = cfg.budget;  // final evaluation only
    Trainer t(cfg, cfg.seeds.front());
    t.trial_tag = cfg.name + "/t" + std::to_string(job.trial);
    t.train_to(cfg.budget);
    results[size_t(ji)] = t.rows();
  });
  std::vector<MetricRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

std::vector<MetricRow> run_param_ablation(const ExperimentConfig& base,
                                          const std::vector<int>& sizes,
                                          int workers) {
  std::vector<std::vector<MetricRow>> results(sizes.size());
  parallel_for(int(sizes.size()), workers, [&](int i) {
    ExperimentConfig cfg = base;
    require(sizes[size_t(i)] >= 1, "run_param_ablation: context size must be >= 1");
    cfg.context.entries.front().size = sizes[size_t(i)];
    cfg.name = base.name + "/size" + std::to_string(sizes[size_t(i)]);
    Trainer t(cfg, cfg.seeds.front());
    t.trial_tag = "size" + std::to_string(sizes[size_t(i)]);
    t.train_to(cfg.budget);
    results[size_t(i)] = t.rows();
  });
  std::vector<MetricRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

namespace {

void pin_to_one_cpu() {
#ifdef __linux__
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(0, &set);
  sched_setaffinity(0, sizeof(set), &set);
#endif
}

}  // namespace

std::vector<TimingRow> run_timing(const std::vector<ExperimentConfig>& cfgs,
                                  long long train_steps, int adapt_tasks) {
  pin_to_one_cpu();
  std::vector<TimingRow> rows;
  for (const ExperimentConfig& cfg : cfgs) {
    Trainer t(cfg, cfg.seeds.front());
    TimingRow row;
    row.config = cfg.name;

    const auto t0 = std::chrono::steady_clock::now();
    for (long long s = 0; s < train_steps; ++s) {
      if (t.is_dmcm()) {
        t.dmcm().step(t.stream());
      } else {
        t.baseline().step(t.stream());
      }
    }
    row.train_seconds = elapsed_s(t0);

    const auto time_adapt = [&](std::uint64_t tag) {
      Rng rng(Rng::splitmix64(cfg.eval_seed ^ tag));
      const RangePartition full = RangePartition::trivial(cfg.factors.size());
      volatile double sink = 0.0;
      const auto a0 = std::chrono::steady_clock::now();
      for (int i = 0; i < adapt_tasks; ++i) {
        const SineTask task = sample_task(cfg.factors, full, rng);
        const TaskDataset shots =
            sample_shots(cfg.factors, task, cfg.train.shots, rng);
        if (cfg.method == Method::Maml || cfg.method == Method::Anil) {
          const ParamSet adapted = adapt_params_eval(
              cfg.method, t.model_spec(), t.params(), shots, cfg.train);
          sink = sink + adapted.weights.back().values()[0];
        } else {
          const std::vector<TaskDataset> per_context(
              size_t(t.model_spec().ctx.count()), shots);
          const ContextBank bank =
              adapt_test(t.model_spec(), t.params(), per_context, cfg.train);
          sink = sink + bank.phis.front().values()[0];
        }
      }
      (void)sink;
      return elapsed_s(a0);
    };
    row.adapt_seconds = time_adapt(Rng::fnv1a("adapt-timing"));
    row.adapt_seconds_repeat = time_adapt(Rng::fnv1a("adapt-timing-2"));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

// Random context-MLP with inputs/targets; parameters are all weights,
// biases and both context vectors.
struct MlpProbe {
  ModelSpec spec;
  Tensor x, y;
  std::vector<Tensor> params;  // weights/biases then contexts
};

// Smallest |pre-activation| over the hidden layers; central differences are
// only a valid oracle away from the relu kinks.
double min_abs_preactivation(const ModelSpec& spec, const ParamSet& params,
                             const ContextBank& bank, const Tensor& x) {
  double best = std::numeric_limits<double>::infinity();
  Tensor h = x;
  const int batch = x.shape()[0];
  for (int l = 0; l < spec.net.num_layers(); ++l) {
    Tensor input = h;
    for (int k = 0; k < spec.ctx.count(); ++k) {
      if (spec.ctx.entries[size_t(k)].inject_layer == l) {
        input = concat_cols(input, broadcast_rows(bank.phis[size_t(k)], batch));
      }
    }
    const Tensor z = add(matmul(input, params.weights[size_t(l)]),
                         broadcast_rows(params.biases[size_t(l)], batch));
    if (l < spec.net.num_layers() - 1) {
      for (const double v : z.values()) best = std::min(best, std::abs(v));
      h = relu(z);
    }
  }
  return best;
}

MlpProbe make_mlp_probe(std::uint64_t seed, const std::vector<int>& hidden,
                        int ctx_count, int ctx_size, int batch) {
  MlpProbe probe;
  probe.spec.net = {1, hidden, 1, "relu"};
  for (int k = 0; k < ctx_count; ++k) {
    probe.spec.ctx.entries.push_back(
        {"c" + std::to_string(k), ctx_size, 0, {}});
  }
  const ParamSet init = init_params(probe.spec, seed);
  Rng rng(Rng::splitmix64(seed ^ Rng::fnv1a("probe-data")));
  // Redraw until every hidden unit is clear of its kink by well more than
  // the finite-difference step.
  while (true) {
    std::vector<double> xs(static_cast<std::size_t>(batch));
    std::vector<double> ys(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      xs[size_t(i)] = rng.uniform(-5.0, 5.0);
      ys[size_t(i)] = rng.uniform(-5.0, 5.0);
    }
    probe.x = Tensor({batch, 1}, std::move(xs));
    probe.y = Tensor({batch, 1}, std::move(ys));
    probe.params = init.all();
    ContextBank bank;
    for (int k = 0; k < ctx_count; ++k) {
      std::vector<double> phi(static_cast<std::size_t>(ctx_size));
      for (double& v : phi) v = rng.uniform(-0.5, 0.5);
      probe.params.emplace_back(Shape{1, ctx_size}, std::move(phi));
      bank.phis.push_back(probe.params.back());
    }
    if (min_abs_preactivation(probe.spec, init, bank, probe.x) > 1e-3) break;
    probe.params.clear();
  }
  return probe;
}

// Splits a flat parameter list back into ParamSet + ContextBank.
std::pair<ParamSet, ContextBank> unpack_probe_params(
    const MlpProbe& probe, std::span<const Tensor> params) {
  ParamSet ps;
  const int layers = probe.spec.net.num_layers();
  for (int l = 0; l < layers; ++l) {
    ps.weights.push_back(params[size_t(2 * l)]);
    ps.biases.push_back(params[size_t(2 * l + 1)]);
  }
  ContextBank bank;
  for (int k = 0; k < probe.spec.ctx.count(); ++k) {
    bank.phis.push_back(params[size_t(2 * layers + k)]);
  }
  return {std::move(ps), std::move(bank)};
}

}  // namespace

GradCheckReport run_gradcheck(int seeds) {
  GradCheckReport report;

  {
    const auto t0 = std::chrono::steady_clock::now();
    for (int seed = 0; seed < seeds; ++seed) {
      const MlpProbe probe = make_mlp_probe(std::uint64_t(seed), {40, 40},
                                            /*ctx_count=*/2, /*ctx_size=*/3,
                                            /*batch=*/5);
      const ScalarFn fn = [&](std::span<const Tensor> params) {
        auto [ps, bank] = unpack_probe_params(probe, params);
        return mse_loss(forward(probe.spec, ps, bank, probe.x), probe.y);
      };
      // Denominator floored at 1e-3: coordinates whose gradient sits below
      // the central-difference noise floor are judged in absolute terms.
      const double err = finite_diff_check(fn, probe.params, 1e-5, 1e-3);
      report.first_order_max_rel = std::max(report.first_order_max_rel, err);
    }
    report.first_order_seconds = elapsed_s(t0);
  }

  {
    // Meta-gradient of the post-inner-step test loss on a 1-4-1 network:
    // theta -> L_test(theta, phi(theta)) with one gradient step on phi.
    const auto t0 = std::chrono::steady_clock::now();
    const MlpProbe probe = make_mlp_probe(7, {4}, /*ctx_count=*/1,
                                          /*ctx_size=*/2, /*batch=*/5);
    Rng rng(Rng::splitmix64(Rng::fnv1a("meta-probe")));
    std::vector<double> xs(5), ys(5);
    for (int i = 0; i < 5; ++i) {
      xs[size_t(i)] = rng.uniform(-5.0, 5.0);
      ys[size_t(i)] = rng.uniform(-5.0, 5.0);
    }
    const Tensor test_x({5, 1}, std::move(xs));
    const Tensor test_y({5, 1}, std::move(ys));
    const double alpha = 0.05;
    const int layers = probe.spec.net.num_layers();
    const std::vector<Tensor> theta(probe.params.begin(),
                                    probe.params.begin() + 2 * layers);

    std::vector<Tensor> analytic_;
    const auto composite = [&](std::span<const Tensor> params,
                               bool retain) -> Tensor {
      Tape tape;
      std::vector<Tensor> all(params.begin(), params.end());
      for (Tensor& p : all) {
        p = p.detached();
        tape.watch(p);
      }
      ParamSet ps;
      for (int l = 0; l < layers; ++l) {
        ps.weights.push_back(all[size_t(2 * l)]);
        ps.biases.push_back(all[size_t(2 * l + 1)]);
      }
      ContextBank bank = ContextBank::zeros(probe.spec.ctx);
      Tensor phi = bank.phis[0];
      tape.watch(phi);
      bank.phis[0] = phi;
      const Tensor inner =
          mse_loss(forward(probe.spec, ps, bank, probe.x), probe.y);
      const std::vector<Tensor> wrt{phi};
      const GradMap g = backward(inner, wrt, retain);
      bank.phis[0] = sub(phi, scale(g.at(phi), alpha));
      const Tensor test_loss =
          mse_loss(forward(probe.spec, ps, bank, test_x), test_y);
      if (retain) {
        const GradMap meta = backward(test_loss, all);
        // stash analytic grads through the tape-side channel below
        analytic_.clear();
        for (const Tensor& p : all) analytic_.push_back(meta.at(p).detached());
      }
      return test_loss.detached();
    };
    // analytic side
    composite(theta, /*retain=*/true);
    const std::vector<Tensor> analytic = analytic_;
    const ScalarFn value_fn = [&](std::span<const Tensor> params) {
      return composite(params, /*retain=*/false);
    };
    report.second_order_max_rel =
        finite_diff_against(value_fn, theta, analytic, 1e-5);
    report.second_order_seconds = elapsed_s(t0);
  }

  {
    // Linear model f(x) = w*x + u*phi, squared loss, one inner step on phi:
    // closed-form meta-gradient.
    Rng rng(Rng::splitmix64(Rng::fnv1a("linear-oracle")));
    const int n = 5, m = 5;
    std::vector<double> tx(n), ty(n), vx(m), vy(m);
    for (int i = 0; i < n; ++i) {
      tx[size_t(i)] = rng.uniform(-2.0, 2.0);
      ty[size_t(i)] = rng.uniform(-2.0, 2.0);
    }
    for (int i = 0; i < m; ++i) {
      vx[size_t(i)] = rng.uniform(-2.0, 2.0);
      vy[size_t(i)] = rng.uniform(-2.0, 2.0);
    }
    const double w0 = 0.7, u0 = -0.4, alpha = 0.1;

    Tape tape;
    Tensor w = Tensor({1, 1}, {w0});
    Tensor u = Tensor({1, 1}, {u0});
    Tensor phi = Tensor::zeros({1, 1});
    tape.watch(w);
    tape.watch(u);
    tape.watch(phi);
    const Tensor train_x({n, 1}, std::vector<double>(tx));
    const Tensor train_y({n, 1}, std::vector<double>(ty));
    const Tensor test_x({m, 1}, std::vector<double>(vx));
    const Tensor test_y({m, 1}, std::vector<double>(vy));
    const auto predict = [&](const Tensor& inputs, const Tensor& ctx) {
      const int rows = inputs.shape()[0];
      return add(matmul(inputs, w), broadcast_rows(mul(u, ctx), rows));
    };
    const Tensor inner = mse_loss(predict(train_x, phi), train_y);
    const std::vector<Tensor> wrt_phi{phi};
    const GradMap g = backward(inner, wrt_phi, /*retain=*/true);
    const Tensor phi1 = sub(phi, scale(g.at(phi), alpha));
    const Tensor test_loss = mse_loss(predict(test_x, phi1), test_y);
    const std::vector<Tensor> wrt_theta{w, u};
    const GradMap meta = backward(test_loss, wrt_theta);

    // closed form, derived by hand:
    //   phi' = -2 a u (w xbar - ybar)
    //   dL/dw = (2/m) sum r_j (x_j - 2 a u^2 xbar)
    //   dL/du = (2/m) sum r_j * 2 phi'
    double xbar = 0, ybar = 0;
    for (int i = 0; i < n; ++i) {
      xbar += tx[size_t(i)];
      ybar += ty[size_t(i)];
    }
    xbar /= n;
    ybar /= n;
    const double phi1_cf = -2.0 * alpha * u0 * (w0 * xbar - ybar);
    double dw = 0, du = 0;
    for (int j = 0; j < m; ++j) {
      const double r = w0 * vx[size_t(j)] + u0 * phi1_cf - vy[size_t(j)];
      dw += 2.0 / m * r * (vx[size_t(j)] - 2.0 * alpha * u0 * u0 * xbar);
      du += 2.0 / m * r * 2.0 * phi1_cf;
    }
    report.closed_form_abs_err =
        std::max(std::abs(meta.at(w).item() - dw),
                 std::abs(meta.at(u).item() - du));
  }

  return report;
}

// ---- study presets ----------------------------------------------------

namespace presets {

namespace {

std::vector<FactorSpec> two_factor() {
  return {{"amplitude", 0.1, 5.0, FactorRole::Amplitude, true},
          {"phase", 0.0, 3.14159265358979323846, FactorRole::Phase, true}};
}

std::vector<FactorSpec> three_factor() {
  auto f = two_factor();
  f.push_back({"y_shift", -2.0, 2.0, FactorRole::YShift, true});
  return f;
}

}  // namespace

ExperimentConfig standard(Method method, int shots) {
  ExperimentConfig cfg;
  cfg.name = "standard-" + method_name(method);
  cfg.method = method;
  cfg.factors = two_factor();
  cfg.partition_bins = {5, 5};
  cfg.network = {1, {40, 40}, 1, "relu"};
  cfg.train.inner_lr = method == Method::Maml ? 0.001 : 0.1;
  cfg.train.inner_decay = 1.0;
  cfg.train.meta_lr = 0.001;
  cfg.train.inner_steps = 10;
  cfg.train.shots = shots;
  cfg.train.optimizer = ThetaOpt::Adam;
  cfg.train.order = GradOrder::Second;
  if (method == Method::Dmcm) {
    cfg.context.entries = {
        {"amp_ctx", 3, 0, {"amplitude"}},
        {"phase_ctx", 3, 0, {"phase"}},
    };
    cfg.train.chain_tasks = 35;  // 10 warm-up + 25 contributing tasks
    cfg.train.warmup_tasks = 10;
    cfg.train.s_adapt = 10;
  } else {
    if (method == Method::Cavia) {
      cfg.context.entries = {{"ctx", 6, 0, {"amplitude", "phase"}}};
    }
    cfg.train.chain_tasks = 25;
    cfg.train.warmup_tasks = 0;
    cfg.train.s_adapt = 1;
  }
  cfg.budget = 4000;
  cfg.eval_every = 100;
  return cfg;
}

ExperimentConfig zeroshot() {
  ExperimentConfig cfg = standard(Method::Dmcm);
  cfg.name = "zeroshot";
  cfg.train.inner_lr = 0.08;
  cfg.train.inner_decay = 0.92;
  cfg.train.inner_steps = 30;
  cfg.train.s_adapt = 3;
  cfg.train.recombination = true;
  cfg.budget = 6000;
  cfg.restrict_amplitude = {1.5, 5.0};
  return cfg;
}

std::vector<std::string> ncontext_variants() {
  return {"1[APY]", "2[A][Y]", "2[AY][P]", "3[A][Y][P]", "4[A1][A2][Y][P]"};
}

ExperimentConfig ncontext(const std::string& variant, bool ood) {
  ExperimentConfig cfg;
  cfg.name = "ncontext-" + variant;
  cfg.factors = three_factor();
  cfg.partition_bins = {4, 4, 4};
  cfg.network = {1, {40, 40, 40, 40}, 1, "relu"};
  cfg.train.inner_lr = 0.05;
  cfg.train.inner_decay = 0.92;
  cfg.train.meta_lr = 0.00033;
  cfg.train.inner_steps = 20;
  cfg.train.shots = 10;
  cfg.train.optimizer = ThetaOpt::Adam;
  cfg.train.s_adapt = ood ? 10 : 5;
  cfg.budget = 4000;
  cfg.eval_every = 100;

  if (variant == "1[APY]") {
    cfg.method = Method::Cavia;
    cfg.context.entries = {{"ctx", 9, 0, {"amplitude", "phase", "y_shift"}}};
    cfg.train.chain_tasks = 45;
    cfg.train.warmup_tasks = 0;
    return cfg;
  }
  cfg.method = Method::Dmcm;
  cfg.train.chain_tasks = 65;  // 20 warm-up + 45 contributing tasks
  cfg.train.warmup_tasks = 20;
  if (variant == "2[A][Y]") {
    cfg.context.entries = {{"amp_ctx", 4, 0, {"amplitude"}},
                           {"y_ctx", 4, 0, {"y_shift"}}};
  } else if (variant == "2[AY][P]") {
    cfg.context.entries = {{"amp_y_ctx", 4, 0, {"amplitude", "y_shift"}},
                           {"phase_ctx", 4, 0, {"phase"}}};
  } else if (variant == "3[A][Y][P]") {
    cfg.context.entries = {{"amp_ctx", 3, 1, {"amplitude"}},
                           {"y_ctx", 3, 2, {"y_shift"}},
                           {"phase_ctx", 3, 0, {"phase"}}};
  } else if (variant == "4[A1][A2][Y][P]") {
    cfg.factors = {{"amplitude1", 0.05, 2.5, FactorRole::Amplitude, true},
                   {"amplitude2", 0.05, 2.5, FactorRole::Amplitude, true},
                   {"phase", 0.0, 3.14159265358979323846, FactorRole::Phase,
                    true},
                   {"y_shift", -2.0, 2.0, FactorRole::YShift, true}};
    cfg.partition_bins = {4, 4, 4, 4};
    cfg.context.entries = {{"amp1_ctx", 2, 1, {"amplitude1"}},
                           {"amp2_ctx", 2, 1, {"amplitude2"}},
                           {"y_ctx", 2, 2, {"y_shift"}},
                           {"phase_ctx", 2, 0, {"phase"}}};
  } else {
    throw std::invalid_argument("unknown ncontext variant '" + variant + "'");
  }
  return cfg;
}

ExperimentConfig recomb_necessity(bool with_loop) {
  ExperimentConfig cfg = ncontext("3[A][Y][P]", /*ood=*/false);
  cfg.name = with_loop ? "recomb-on" : "recomb-off";
  cfg.train.recombination = with_loop;
  cfg.restrict_amplitude = {1.5, 5.0};
  return cfg;
}

ExperimentConfig param_ablation(int entangled_size) {
  ExperimentConfig cfg = ncontext("2[AY][P]", /*ood=*/false);
  cfg.name = "param-ablation";
  cfg.context.entries = {{"amp_phase_ctx", entangled_size, 0,
                          {"amplitude", "phase"}},
                         {"y_ctx", 3, 0, {"y_shift"}}};
  return cfg;
}

std::vector<ExperimentConfig> timing_set() {
  std::vector<ExperimentConfig> out;
  {
    ExperimentConfig maml = ncontext("1[APY]", false);
    maml.name = "maml";
    maml.method = Method::Maml;
    maml.context = ContextSpec::none();
    maml.train.inner_lr = 0.001;
    out.push_back(std::move(maml));
  }
  {
    ExperimentConfig cavia = ncontext("1[APY]", false);
    cavia.name = "cavia(1)";
    out.push_back(std::move(cavia));
  }
  for (const auto& [variant, label] :
       std::vector<std::pair<std::string, std::string>>{
           {"2[AY][P]", "dmcm(2)"},
           {"3[A][Y][P]", "dmcm(3)"},
           {"4[A1][A2][Y][P]", "dmcm(4)"}}) {
    ExperimentConfig cfg = ncontext(variant, false);
    cfg.name = label;
    out.push_back(std::move(cfg));
  }
  return out;
}

}  // namespace presets

}  // namespace dmcm
