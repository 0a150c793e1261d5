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
#include "dmcm/model.hpp"

#include <cmath>

#include "dmcm/rng.hpp"

namespace dmcm {

void NetworkConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("network.input_dim must be >= 1");
  if (output_dim < 1) throw std::invalid_argument("network.output_dim must be >= 1");
  if (hidden.empty()) throw std::invalid_argument("network.hidden must have at least one layer");
  for (const int w : hidden) {
    if (w < 1) throw std::invalid_argument("network.hidden widths must be >= 1");
  }
  if (activation != "relu") {
    throw std::invalid_argument("network.activation: only 'relu' is supported");
  }
}

int ContextSpec::params_at_layer(int layer) const {
  int total = 0;
  for (const ContextEntry& e : entries) {
    if (e.inject_layer == layer) total += e.size;
  }
  return total;
}

void ContextSpec::validate(const NetworkConfig& net) const {
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const ContextEntry& e = entries[k];
    const std::string where = "context.entries[" + std::to_string(k) + "]";
    if (e.size < 1) throw std::invalid_argument(where + ".size must be >= 1");
    if (e.inject_layer < 0 || e.inject_layer > int(net.hidden.size())) {
      throw std::invalid_argument(where + ".inject_layer must be in [0, " +
                                  std::to_string(net.hidden.size()) + "]");
    }
  }
}

int ModelSpec::layer_fan_in(int layer) const {
  const int prev = layer == 0 ? net.input_dim : net.hidden[size_t(layer - 1)];
  return prev + ctx.params_at_layer(layer);
}

int ModelSpec::layer_fan_out(int layer) const {
  return layer == net.num_layers() - 1 ? net.output_dim
                                       : net.hidden[size_t(layer)];
}

void ModelSpec::validate() const {
  net.validate();
  ctx.validate(net);
}

std::vector<Tensor> ParamSet::all() const {
  std::vector<Tensor> out;
  out.reserve(weights.size() * 2);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(weights[l]);
    out.push_back(biases[l]);
  }
  return out;
}

ParamSet ParamSet::detached() const {
  ParamSet p;
  for (const Tensor& w : weights) p.weights.push_back(w.detached());
  for (const Tensor& b : biases) p.biases.push_back(b.detached());
  return p;
}

ParamSet ParamSet::watched(Tape& tape) const {
  ParamSet p = detached();
  for (Tensor& w : p.weights) tape.watch(w);
  for (Tensor& b : p.biases) tape.watch(b);
  return p;
}

std::int64_t ParamSet::num_scalars() const {
  std::int64_t n = 0;
  for (const Tensor& w : weights) n += w.size();
  for (const Tensor& b : biases) n += b.size();
  return n;
}

ContextBank ContextBank::zeros(const ContextSpec& spec) {
  ContextBank bank;
  bank.phis.reserve(spec.entries.size());
  for (const ContextEntry& e : spec.entries) {
    bank.phis.push_back(Tensor::zeros({1, e.size}));
  }
  return bank;
}

ContextBank ContextBank::detached() const {
  ContextBank b;
  for (const Tensor& phi : phis) b.phis.push_back(phi.detached());
  return b;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(Rng::splitmix64(seed));
  ParamSet params;
  for (int l = 0; l < spec.net.num_layers(); ++l) {
    const int fan_in = spec.layer_fan_in(l);
    const int fan_out = spec.layer_fan_out(l);
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::vector<double> w(size_t(fan_in) * size_t(fan_out));
    for (double& x : w) x = rng.uniform(-bound, bound);
    params.weights.emplace_back(Shape{fan_in, fan_out}, std::move(w));
    params.biases.push_back(Tensor::zeros({1, fan_out}));
  }
  return params;
}

std::vector<Tensor> forward_trace(const ModelSpec& spec,
                                  const ParamSet& params,
                                  const ContextBank& contexts,
                                  const Tensor& x) {
  if (x.shape().size() != 2 || x.shape()[1] != spec.net.input_dim)
      [[unlikely]] {
    throw std::invalid_argument("forward: input must have shape (batch, " +
                                std::to_string(spec.net.input_dim) +
                                "), got " + shape_str(x.shape()));
  }
  if (contexts.count() != spec.ctx.count()) [[unlikely]] {
    throw std::invalid_argument("forward: context bank has " +
                                std::to_string(contexts.count()) +
                                " vectors, spec declares " +
                                std::to_string(spec.ctx.count()));
  }
  const int batch = x.shape()[0];
  const int layers = spec.net.num_layers();
  std::vector<Tensor> trace;
  trace.reserve(size_t(layers));
  Tensor h = x;
  for (int l = 0; l < layers; ++l) {
    Tensor input = h;
    for (int k = 0; k < spec.ctx.count(); ++k) {
      if (spec.ctx.entries[size_t(k)].inject_layer == l) {
        input = concat_cols(input, broadcast_rows(contexts.phis[size_t(k)], batch));
      }
    }
    Tensor z = add(matmul(input, params.weights[size_t(l)]),
                   broadcast_rows(params.biases[size_t(l)], batch));
    h = l < layers - 1 ? relu(z) : z;  // linear output layer
    trace.push_back(h);
  }
  return trace;
}

Tensor forward(const ModelSpec& spec, const ParamSet& params,
               const ContextBank& contexts, const Tensor& x) {
  return forward_trace(spec, params, contexts, x).back();
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("mse_loss: shape mismatch " +
                                shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  }
  if (pred.size() == 0) throw std::invalid_argument("mse_loss: empty batch");
  return mean(square(sub(pred, target)));
}

}  // namespace dmcm
