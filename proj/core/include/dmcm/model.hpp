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

#include <cstdint>
#include <string>
#include <vector>

#include "dmcm/tensor.hpp"

namespace dmcm {

struct NetworkConfig {
  int input_dim = 1;
  std::vector<int> hidden = {40, 40};
  int output_dim = 1;
  std::string activation = "relu";

  int num_layers() const { return int(hidden.size()) + 1; }
  void validate() const;
};

// One context vector: its size, the layer whose input it joins
// (0 = concatenated with the network input, 1 = with the first hidden
// activations, ...), and the task factors it is responsible for.
struct ContextEntry {
  std::string name;
  int size = 0;
  int inject_layer = 0;
  std::vector<std::string> factors;  // factor names covered by this context
};

struct ContextSpec {
  std::vector<ContextEntry> entries;

  int count() const { return int(entries.size()); }
  bool empty() const { return entries.empty(); }
  int params_at_layer(int layer) const;
  void validate(const NetworkConfig& net) const;

  static ContextSpec none() { return {}; }
};

struct ModelSpec {
  NetworkConfig net;
  ContextSpec ctx;

  // Weight input extent of layer l, context columns included.
  int layer_fan_in(int layer) const;
  int layer_fan_out(int layer) const;
  void validate() const;
};

// Shared network parameters (theta): per-layer weight matrices shaped to
// admit the declared context concatenations, plus bias row vectors.
struct ParamSet {
  std::vector<Tensor> weights;  // (fan_in, fan_out)
  std::vector<Tensor> biases;   // (1, fan_out)

  std::size_t num_layers() const { return weights.size(); }
  std::vector<Tensor> all() const;
  ParamSet detached() const;
  ParamSet watched(Tape& tape) const;
  std::int64_t num_scalars() const;
};

// The K context vectors phi^1..phi^K. Fresh banks are all-zero.
struct ContextBank {
  std::vector<Tensor> phis;  // each (1, size_k)

  static ContextBank zeros(const ContextSpec& spec);
  int count() const { return int(phis.size()); }
  ContextBank detached() const;
};

// Deterministic initialization: weights uniform in +-1/sqrt(fan_in) with
// fan_in including context columns, biases zero.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

// Batched prediction, differentiable w.r.t. params and contexts.
// x has shape (batch, input_dim); result (batch, output_dim).
Tensor forward(const ModelSpec& spec, const ParamSet& params,
               const ContextBank& contexts, const Tensor& x);

// Per-layer post-activation outputs (last entry is the prediction).
std::vector<Tensor> forward_trace(const ModelSpec& spec,
                                  const ParamSet& params,
                                  const ContextBank& contexts,
                                  const Tensor& x);

// Mean of squared residuals; differentiable.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace dmcm
