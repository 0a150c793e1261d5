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
#include "dmcm/meta.hpp"

#include <algorithm>
#include <concepts>
#include <cmath>

namespace dmcm {

namespace {

[[noreturn]] void fail_arg(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const char* msg) {
  if (!cond) [[unlikely]] fail_arg(msg);
}

template <typename MakeMsg>
  requires std::invocable<MakeMsg>
inline void require(bool cond, MakeMsg&& make_msg) {
  if (!cond) [[unlikely]] fail_arg(make_msg());
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) [[unlikely]] fail_arg(msg);
}

// Resolves each context's covered factor names to indices in the stream's
// factor list.
std::vector<std::vector<int>> context_factor_indices(
    const ContextSpec& ctx, const std::vector<FactorSpec>& factors) {
  std::vector<std::vector<int>> out(ctx.entries.size());
  for (std::size_t k = 0; k < ctx.entries.size(); ++k) {
    for (const std::string& name : ctx.entries[k].factors) {
      int idx = -1;
      for (std::size_t f = 0; f < factors.size(); ++f) {
        if (factors[f].name == name) {
          idx = int(f);
          break;
        }
      }
      require(idx >= 0, "context '" + ctx.entries[k].name +
                            "' references unknown factor '" + name + "'");
      out[k].push_back(idx);
    }
    require(!out[k].empty(), "context '" + ctx.entries[k].name +
                                 "' covers no task factors");
  }
  return out;
}

double grad_l2_norm(const GradMap& grads, const ParamSet& watched) {
  double sq = 0.0;
  for (const Tensor& p : watched.all()) {
    for (const double g : grads.at(p).values()) sq += g * g;
  }
  return std::sqrt(sq);
}

std::vector<double> updated_values(const Tensor& param, const Tensor& grad,
                                   double lr) {
  std::vector<double> v = param.values();
  const auto& g = grad.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  return v;
}

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::Maml: return "maml";
    case Method::Anil: return "anil";
    case Method::Cavia: return "cavia";
    case Method::Dmcm: return "dmcm";
  }
  return "?";
}

Method method_from(const std::string& name) {
  if (name == "maml") return Method::Maml;
  if (name == "anil") return Method::Anil;
  if (name == "cavia") return Method::Cavia;
  if (name == "dmcm") return Method::Dmcm;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void TrainConfig::validate(int num_contexts, Method method) const {
  require(inner_lr > 0.0, "train.inner_lr must be > 0");
  require(meta_lr > 0.0, "train.meta_lr must be > 0");
  require(inner_decay > 0.0 && inner_decay <= 1.0,
          "train.inner_decay must be in (0,1]");
  require(inner_steps >= 0, "train.inner_steps must be >= 0");
  require(chain_tasks >= 1, "train.chain_tasks must be >= 1");
  require(shots >= 1, "train.shots must be >= 1");
  require(s_adapt >= 0, "train.s_adapt must be >= 0");
  require(mislabel_rate >= 0.0 && mislabel_rate <= 1.0,
          "train.mislabel_rate must be in [0,1]");
  if (method == Method::Dmcm) {
    require(num_contexts >= 1, "dmcm requires at least one context vector");
    require(warmup_tasks >= 0 && warmup_tasks < chain_tasks,
            "train.warmup_tasks must satisfy 0 <= B < N");
    if (recombination) {
      require(num_contexts >= 2,
              "train.recombination requires at least two context vectors");
    }
    if (mislabel_rate > 0.0) {
      require(num_contexts >= 2,
              "train.mislabel_rate > 0 requires at least two context vectors");
    }
  } else if (method == Method::Cavia) {
    require(num_contexts == 1, "cavia requires exactly one context vector");
  } else {
    require(num_contexts == 0,
            method_name(method) + " must not declare context vectors");
  }
}

void ChainState::init(const ContextSpec& spec) {
  const int K = spec.count();
  if (bank.count() != K) bank = ContextBank::zeros(spec);
  if (int(last_adapted.size()) != K) last_adapted.assign(size_t(K), -1);
  if (int(last_task.size()) != K) last_task.assign(size_t(K), SineTask{});
  if (int(saved.size()) != K) saved.assign(size_t(K), {});
}

void ChainState::detach_all() {
  bank = bank.detached();
  for (auto& dq : saved) {
    for (SavedContext& sc : dq) sc.phi = sc.phi.detached();
  }
}

ContextBank inner_adapt(Tape& tape, const ModelSpec& spec,
                        const ParamSet& params, const ContextBank& bank,
                        int s, const TaskDataset& train,
                        const TrainConfig& cfg, double* final_loss) {
  require(s >= 0 && s < bank.count(),
          "inner_adapt: context index out of range");
  ContextBank cur = bank;
  double lr = cfg.inner_lr;
  double last = 0.0;
  const bool second = cfg.order == GradOrder::Second;
  for (int t = 0; t < cfg.inner_steps; ++t) {
    Tensor phi = second ? cur.phis[size_t(s)] : cur.phis[size_t(s)].detached();
    tape.watch(phi);
    cur.phis[size_t(s)] = phi;
    const Tensor loss =
        mse_loss(forward(spec, params, cur, train.x), train.y);
    last = loss.item();
    if (!std::isfinite(last)) {
      throw NumericalError("inner_adapt: non-finite loss mid-loop");
    }
    const std::vector<Tensor> wrt{phi};
    const GradMap grads = backward(loss, wrt, /*retain=*/second);
    if (second) {
      cur.phis[size_t(s)] = sub(phi, scale(grads.at(phi), lr));
    } else {
      cur.phis[size_t(s)] =
          sub(phi.detached(), scale(grads.at(phi).detached(), lr));
    }
    lr *= cfg.inner_decay;
  }
  if (final_loss) *final_loss = last;
  return cur;
}

ContextBank adapt_test(const ModelSpec& spec, const ParamSet& params,
                       const std::vector<TaskDataset>& per_context,
                       const TrainConfig& cfg) {
  require(cfg.s_adapt >= 0, "adapt_test: s_adapt must be >= 0");
  const int K = spec.ctx.count();
  require(int(per_context.size()) == K,
          "adapt_test: expected one dataset per context (" +
              std::to_string(K) + "), got " +
              std::to_string(per_context.size()));
  ContextBank bank = ContextBank::zeros(spec.ctx);
  if (cfg.s_adapt == 0 || K == 0) return bank;
  Tape tape;
  const ParamSet local = params.detached();
  TrainConfig eval_cfg = cfg;
  eval_cfg.order = GradOrder::First;  // no meta-gradient at evaluation time
  for (int sweep = 0; sweep < cfg.s_adapt; ++sweep) {
    for (int s = 0; s < K; ++s) {
      // Each adaptation restarts phi^s from zero, mirroring the inner-loop
      // initialization; the sweeps iterate the contexts to a joint fixed
      // point. Adapting in place instead leaves vectors entangled across
      // contexts and breaks zero-shot recombination.
      bank.phis[size_t(s)] = Tensor::zeros(bank.phis[size_t(s)].shape());
      bank = inner_adapt(tape, spec, local, bank, s, per_context[size_t(s)],
                         eval_cfg);
    }
  }
  return bank.detached();
}

ParamSet adapt_params_eval(Method mode, const ModelSpec& spec,
                           const ParamSet& params, const TaskDataset& train,
                           const TrainConfig& cfg) {
  require(mode == Method::Maml || mode == Method::Anil,
          "adapt_params_eval: parameter-space adaptation is for maml/anil");
  Tape tape;
  ParamSet cur = params.detached();
  const ContextBank bank = ContextBank::zeros(spec.ctx);
  for (int sweep = 0; sweep < std::max(cfg.s_adapt, 1); ++sweep) {
    double lr = cfg.inner_lr;
    for (int t = 0; t < cfg.inner_steps; ++t) {
      ParamSet w = cur.watched(tape);
      const Tensor loss = mse_loss(forward(spec, w, bank, train.x), train.y);
      std::vector<Tensor> wrt;
      if (mode == Method::Maml) {
        wrt = w.all();
      } else {
        wrt = {w.weights.back(), w.biases.back()};
      }
      const GradMap grads = backward(loss, wrt, /*retain=*/false);
      if (mode == Method::Maml) {
        for (std::size_t l = 0; l < cur.weights.size(); ++l) {
          cur.weights[l] = Tensor(cur.weights[l].shape(),
                                  updated_values(w.weights[l],
                                                 grads.at(w.weights[l]), lr));
          cur.biases[l] = Tensor(cur.biases[l].shape(),
                                 updated_values(w.biases[l],
                                                grads.at(w.biases[l]), lr));
        }
      } else {
        const std::size_t l = cur.weights.size() - 1;
        cur.weights[l] = Tensor(cur.weights[l].shape(),
                                updated_values(w.weights[l],
                                               grads.at(w.weights[l]), lr));
        cur.biases[l] = Tensor(cur.biases[l].shape(),
                               updated_values(w.biases[l],
                                              grads.at(w.biases[l]), lr));
      }
      lr *= cfg.inner_decay;
    }
  }
  return cur;
}

ContextBank compose_zero_shot(
    const std::vector<std::pair<ContextBank, int>>& sources, int K) {
  require(K >= 1, "compose_zero_shot: K must be >= 1");
  std::vector<char> seen(size_t(K), 0);
  ContextBank out;
  out.phis.resize(size_t(K));
  for (const auto& [bank, k] : sources) {
    require(k >= 0 && k < K, "compose_zero_shot: factor index out of range");
    require(!seen[size_t(k)],
            "compose_zero_shot: duplicate source for factor " +
                std::to_string(k));
    require(bank.count() == K,
            "compose_zero_shot: source bank has wrong context count");
    out.phis[size_t(k)] = bank.phis[size_t(k)].detached();
    seen[size_t(k)] = 1;
  }
  for (int k = 0; k < K; ++k) {
    require(seen[size_t(k)],
            "compose_zero_shot: missing source for factor " +
                std::to_string(k));
  }
  return out;
}

void apply_theta_update(ParamSet& theta, const ParamSet& watched,
                        const GradMap& grads, const TrainConfig& cfg,
                        AdamState& adam) {
  std::vector<Tensor> params = theta.all();
  std::vector<Tensor> wparams = watched.all();
  if (cfg.optimizer == ThetaOpt::Adam && adam.m.empty()) {
    for (const Tensor& p : params) {
      adam.m.emplace_back(size_t(p.size()), 0.0);
      adam.v.emplace_back(size_t(p.size()), 0.0);
    }
  }
  std::vector<Tensor> updated;
  updated.reserve(params.size());
  if (cfg.optimizer == ThetaOpt::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      updated.emplace_back(params[i].shape(),
                           updated_values(params[i], grads.at(wparams[i]),
                                          cfg.meta_lr));
    }
  } else {
    adam.t += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, double(adam.t));
    const double bc2 = 1.0 - std::pow(adam.beta2, double(adam.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = grads.at(wparams[i]).values();
      std::vector<double> v = params[i].values();
      auto& m1 = adam.m[i];
      auto& m2 = adam.v[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        m1[j] = adam.beta1 * m1[j] + (1.0 - adam.beta1) * g[j];
        m2[j] = adam.beta2 * m2[j] + (1.0 - adam.beta2) * g[j] * g[j];
        const double mhat = m1[j] / bc1;
        const double vhat = m2[j] / bc2;
        v[j] -= cfg.meta_lr * mhat / (std::sqrt(vhat) + adam.eps);
      }
      updated.emplace_back(params[i].shape(), std::move(v));
    }
  }
  for (std::size_t l = 0; l < theta.weights.size(); ++l) {
    theta.weights[l] = updated[2 * l];
    theta.biases[l] = updated[2 * l + 1];
  }
}

DmcmEngine::DmcmEngine(ModelSpec spec, TrainConfig cfg, std::uint64_t seed)
    : spec_(std::move(spec)), cfg_(cfg),
      label_rng_(Rng::splitmix64(seed ^ Rng::fnv1a("labels"))) {
  spec_.validate();
  cfg_.validate(spec_.ctx.count(), Method::Dmcm);
  theta_ = init_params(spec_, seed);
  chain_.init(spec_.ctx);
}

MetaStepReport DmcmEngine::step(TaskStream& stream) {
  const int K = spec_.ctx.count();
  const int N = cfg_.chain_tasks;
  const int B = cfg_.warmup_tasks;
  const auto ctx_factors = context_factor_indices(spec_.ctx, stream.factors());
  const double weight = 1.0 / double(N - B);

  Tape tape;
  const ParamSet theta_w = theta_.watched(tape);
  chain_.init(spec_.ctx);

  MetaStepReport report;
  Tensor basic, recomb;

  for (int i = 0; i < N; ++i) {
    const long long global = chain_.tasks_done;
    const int s_true = chain_.cursor;
    const int s_used = mislabel(s_true, cfg_.mislabel_rate, K, label_rng_);

    const SineTask task =
        (i == 0 || !chain_.prev_task)
            ? stream.initial()
            : stream.conditional(*chain_.prev_task,
                                 ctx_factors[size_t(s_true)]);
    const TaskDataset train = stream.draw(task, cfg_.shots);
    const TaskDataset test = stream.draw(task, cfg_.shots);

    // Alg. 1: the changing context restarts from zero, the rest persist.
    chain_.bank.phis[size_t(s_used)] =
        Tensor::zeros(chain_.bank.phis[size_t(s_used)].shape());
    double inner_loss = 0.0;
    chain_.bank = inner_adapt(tape, spec_, theta_w, chain_.bank, s_used,
                              train, cfg_, &inner_loss);
    report.inner_losses.push_back(inner_loss);
    chain_.last_adapted[size_t(s_used)] = global;
    chain_.last_task[size_t(s_used)] = task;

    if (i >= B) {
      const Tensor pred = forward(spec_, theta_w, chain_.bank, test.x);
      const Tensor term = scale(mse_loss(pred, test.y), weight);
      basic = basic.defined() ? add(basic, term) : term;
    }

    if (cfg_.recombination && i >= B) {
      // Load the saved vectors named by Alg. 1: context (s-d) adapted at
      // task global - d*(K+1), for d = 1..K-1.
      std::vector<std::pair<int, long long>> wanted;
      for (int d = 1; d <= K - 1; ++d) {
        const int c = ((s_used - d) % K + K) % K;
        wanted.emplace_back(c, global - (long long)d * (K + 1));
      }
      std::vector<const SavedContext*> loaded;
      bool complete = true;
      for (const auto& [c, at] : wanted) {
        const auto& dq = chain_.saved[size_t(c)];
        const SavedContext* hit = nullptr;
        for (const SavedContext& sc : dq) {
          if (sc.adapted_at == at) {
            hit = &sc;
            break;
          }
        }
        if (!hit) {
          complete = false;
          break;
        }
        loaded.push_back(hit);
      }
      if (complete) {
        SineTask composed = task;
        ContextBank rbank = chain_.bank;
        for (std::size_t d = 0; d < wanted.size(); ++d) {
          const auto& [c, at] = wanted[d];
          for (const int f : ctx_factors[size_t(c)]) {
            composed.values[size_t(f)] = loaded[d]->task.values[size_t(f)];
          }
          rbank.phis[size_t(c)] = loaded[d]->phi;
          report.recomb_loads.push_back({global, c, at});
        }
        const TaskDataset dj = stream.draw(composed, cfg_.shots);
        const Tensor pred = forward(spec_, theta_w, rbank, dj.x);
        const Tensor term = scale(mse_loss(pred, dj.y), weight);
        recomb = recomb.defined() ? add(recomb, term) : term;
        report.recomb_applied += 1;
      } else {
        report.recomb_skipped += 1;
      }
      // Save phi^{s+1}, the vector adapted at task global - K + 1.
      const int nxt = (s_used + 1) % K;
      if (chain_.last_adapted[size_t(nxt)] >= 0) {
        chain_.saved[size_t(nxt)].push_back(
            {chain_.last_adapted[size_t(nxt)], chain_.bank.phis[size_t(nxt)],
             chain_.last_task[size_t(nxt)]});
      }
      const long long horizon = (long long)(K - 1) * (K + 1);
      for (auto& dq : chain_.saved) {
        while (!dq.empty() && dq.front().adapted_at < global - horizon) {
          dq.pop_front();
        }
      }
    }

    chain_.cursor = (s_true + 1) % K;
    chain_.prev_task = task;
    chain_.tasks_done += 1;
  }

  Tensor total = recomb.defined() ? add(basic, recomb) : basic;
  report.meta_basic = basic.item();
  report.meta_recomb = recomb.defined() ? recomb.item() : 0.0;
  const GradMap grads = backward(total, theta_w.all(), /*retain=*/false);
  report.theta_grad_norm = grad_l2_norm(grads, theta_w);
  apply_theta_update(theta_, theta_w, grads, cfg_, adam_);
  chain_.detach_all();
  steps_ += 1;
  return report;
}

BaselineEngine::BaselineEngine(Method mode, ModelSpec spec, TrainConfig cfg,
                               std::uint64_t seed)
    : mode_(mode), spec_(std::move(spec)), cfg_(cfg) {
  require(mode != Method::Dmcm, "BaselineEngine: use DmcmEngine for dmcm");
  spec_.validate();
  cfg_.validate(spec_.ctx.count(), mode);
  theta_ = init_params(spec_, seed);
}

MetaStepReport BaselineEngine::step(TaskStream& stream) {
  const int N = cfg_.chain_tasks;
  const double weight = 1.0 / double(N);
  const bool second = cfg_.order == GradOrder::Second;

  Tape tape;
  const ParamSet theta_w = theta_.watched(tape);
  MetaStepReport report;
  Tensor total;
  // First-order maml/anil evaluate the test gradient at the adapted
  // parameters; those leaves stand in for theta in the meta-update.
  std::vector<std::vector<Tensor>> proxy_leaves;

  for (int i = 0; i < N; ++i) {
    const SineTask task = stream.initial();
    const TaskDataset train = stream.draw(task, cfg_.shots);
    const TaskDataset test = stream.draw(task, cfg_.shots);
    Tensor term;

    if (mode_ == Method::Cavia) {
      ContextBank bank = ContextBank::zeros(spec_.ctx);
      double inner_loss = 0.0;
      bank = inner_adapt(tape, spec_, theta_w, bank, 0, train, cfg_,
                         &inner_loss);
      report.inner_losses.push_back(inner_loss);
      term = scale(mse_loss(forward(spec_, theta_w, bank, test.x), test.y),
                   weight);
    } else {
      const ContextBank nobank = ContextBank::zeros(spec_.ctx);
      if (second) {
        ParamSet cur = theta_w;
        double lr = cfg_.inner_lr;
        for (int t = 0; t < cfg_.inner_steps; ++t) {
          const Tensor loss =
              mse_loss(forward(spec_, cur, nobank, train.x), train.y);
          if (t == cfg_.inner_steps - 1) {
            report.inner_losses.push_back(loss.item());
          }
          std::vector<Tensor> wrt =
              mode_ == Method::Maml
                  ? cur.all()
                  : std::vector<Tensor>{cur.weights.back(), cur.biases.back()};
          const GradMap g = backward(loss, wrt, /*retain=*/true);
          if (mode_ == Method::Maml) {
            for (std::size_t l = 0; l < cur.weights.size(); ++l) {
              cur.weights[l] =
                  sub(cur.weights[l], scale(g.at(cur.weights[l]), lr));
              cur.biases[l] =
                  sub(cur.biases[l], scale(g.at(cur.biases[l]), lr));
            }
          } else {
            cur.weights.back() =
                sub(cur.weights.back(), scale(g.at(cur.weights.back()), lr));
            cur.biases.back() =
                sub(cur.biases.back(), scale(g.at(cur.biases.back()), lr));
          }
          lr *= cfg_.inner_decay;
        }
        term = scale(mse_loss(forward(spec_, cur, nobank, test.x), test.y),
                     weight);
      } else {
        ParamSet adapted = adapt_params_eval(mode_, spec_, theta_, train, [&] {
          TrainConfig c = cfg_;
          c.s_adapt = 1;
          return c;
        }());
        ParamSet leaves = adapted.watched(tape);
        proxy_leaves.push_back(leaves.all());
        term = scale(mse_loss(forward(spec_, leaves, nobank, test.x), test.y),
                     weight);
      }
    }
    total = total.defined() ? add(total, term) : term;
  }

  report.meta_basic = total.item();
  GradMap grads = [&] {
    if (proxy_leaves.empty()) {
      return backward(total, theta_w.all(), /*retain=*/false);
    }
    std::vector<Tensor> wrt;
    for (const auto& leaves : proxy_leaves) {
      wrt.insert(wrt.end(), leaves.begin(), leaves.end());
    }
    const GradMap per_task = backward(total, wrt, /*retain=*/false);
    // Sum the per-task proxy gradients into theta-shaped slots.
    GradMap out;
    const std::vector<Tensor> tw = theta_w.all();
    for (std::size_t j = 0; j < tw.size(); ++j) {
      Tensor acc = Tensor::zeros(tw[j].shape());
      for (const auto& leaves : proxy_leaves) {
        acc = add(acc, per_task.at(leaves[j]).detached());
      }
      out.put(tw[j].node(), acc);
    }
    return out;
  }();
  report.theta_grad_norm = grad_l2_norm(grads, theta_w);
  apply_theta_update(theta_, theta_w, grads, cfg_, adam_);
  steps_ += 1;
  return report;
}

}  // namespace dmcm
