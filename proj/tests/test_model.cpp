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

#include "dmcm/gradcheck.hpp"
#include "dmcm/model.hpp"
#include "dmcm/rng.hpp"

using namespace dmcm;

namespace {

ModelSpec two_ctx_spec() {
  ModelSpec spec;
  spec.net = {1, {40, 40}, 1, "relu"};
  spec.ctx.entries = {{"a", 3, 0, {"amplitude"}}, {"p", 3, 0, {"phase"}}};
  return spec;
}

Tensor random_batch(int n, Rng& rng) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (double& v : xs) v = rng.uniform(-5.0, 5.0);
  return Tensor({n, 1}, std::move(xs));
}

}  // namespace

TEST_CASE("init_params shapes admit the declared context concatenations") {
  const ModelSpec spec = two_ctx_spec();
  const ParamSet params = init_params(spec, 0);
  REQUIRE(params.num_layers() == 3);
  CHECK(params.weights[0].shape() == Shape{1 + 3 + 3, 40});
  CHECK(params.weights[1].shape() == Shape{40, 40});
  CHECK(params.weights[2].shape() == Shape{40, 1});
  CHECK(params.biases[0].shape() == Shape{1, 40});
}

TEST_CASE("init_params: single 6-parameter context gives input extent 7") {
  ModelSpec spec;
  spec.net = {1, {40, 40}, 1, "relu"};
  spec.ctx.entries = {{"ctx", 6, 0, {}}};
  const ParamSet params = init_params(spec, 3);
  CHECK(params.weights[0].shape() == Shape{7, 40});
}

TEST_CASE("init_params is deterministic for a fixed seed") {
  const ModelSpec spec = two_ctx_spec();
  const ParamSet a = init_params(spec, 42);
  const ParamSet b = init_params(spec, 42);
  const ParamSet c = init_params(spec, 43);
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    CHECK(a.weights[l].same_values(b.weights[l]));
    CHECK(a.biases[l].same_values(b.biases[l]));
  }
  CHECK_FALSE(a.weights[0].same_values(c.weights[0]));
}

TEST_CASE("init_params draws weights within +-1/sqrt(fan_in), biases zero") {
  const ModelSpec spec = two_ctx_spec();
  const ParamSet params = init_params(spec, 9);
  const double bound0 = 1.0 / std::sqrt(7.0);
  for (const double w : params.weights[0].values()) {
    CHECK(std::abs(w) <= bound0);
  }
  for (const double b : params.biases[0].values()) CHECK(b == 0.0);
}

TEST_CASE("forward: batching and shape checks") {
  const ModelSpec spec = two_ctx_spec();
  const ParamSet params = init_params(spec, 1);
  const ContextBank bank = ContextBank::zeros(spec.ctx);
  Rng rng(5);
  const Tensor x = random_batch(100, rng);
  const Tensor out = forward(spec, params, bank, x);
  CHECK(out.shape() == Shape{100, 1});
  CHECK_THROWS_AS(forward(spec, params, bank, Tensor({2, 3}, {1, 2, 3, 4, 5, 6})),
                  std::invalid_argument);
}

TEST_CASE("forward determinism: identical inputs give bitwise identical outputs") {
  const ModelSpec spec = two_ctx_spec();
  const ParamSet params = init_params(spec, 1);
  const ContextBank bank = ContextBank::zeros(spec.ctx);
  Rng rng(5);
  const Tensor x = random_batch(10, rng);
  CHECK(forward(spec, params, bank, x)
            .same_values(forward(spec, params, bank, x)));
}

TEST_CASE("zero contexts make context-facing weight columns irrelevant") {
  const ModelSpec spec = two_ctx_spec();
  ParamSet params = init_params(spec, 7);
  const ContextBank zero_bank = ContextBank::zeros(spec.ctx);
  Rng rng(11);
  const Tensor x = random_batch(10, rng);
  const Tensor base = forward(spec, params, zero_bank, x);

  // Perturb the rows of W0 that multiply context entries (the input owns
  // row 0, the contexts rows 1..6).
  std::vector<double> w = params.weights[0].values();
  for (int row = 1; row < 7; ++row) {
    for (int col = 0; col < 40; ++col) {
      w[size_t(row) * 40 + size_t(col)] += rng.uniform(-1.0, 1.0);
    }
  }
  params.weights[0] = Tensor(params.weights[0].shape(), std::move(w));
  CHECK(forward(spec, params, zero_bank, x).same_values(base));
}

TEST_CASE("context locality: phi^k only affects layers at or after injection") {
  ModelSpec spec;
  spec.net = {1, {8, 8, 8}, 1, "relu"};
  spec.ctx.entries = {{"late", 2, 2, {}}};  // joins the third layer's input
  const ParamSet params = init_params(spec, 13);
  Rng rng(17);
  const Tensor x = random_batch(6, rng);
  const ContextBank zero = ContextBank::zeros(spec.ctx);
  ContextBank perturbed = ContextBank::zeros(spec.ctx);
  perturbed.phis[0] = Tensor({1, 2}, {0.5, -0.8});
  const auto t0 = forward_trace(spec, params, zero, x);
  const auto t1 = forward_trace(spec, params, perturbed, x);
  CHECK(t0[0].same_values(t1[0]));
  CHECK(t0[1].same_values(t1[1]));
  CHECK_FALSE(t0[2].same_values(t1[2]));
}

TEST_CASE("per-layer injection routes each vector to its declared layer") {
  ModelSpec spec;
  spec.net = {1, {8, 8}, 1, "relu"};
  spec.ctx.entries = {{"amp", 3, 1, {}}, {"y", 3, 2, {}}, {"phase", 3, 0, {}}};
  spec.validate();
  CHECK(spec.layer_fan_in(0) == 1 + 3);   // phase with the input
  CHECK(spec.layer_fan_in(1) == 8 + 3);   // amp with the first activations
  CHECK(spec.layer_fan_in(2) == 8 + 3);   // y with the second activations
  const ParamSet params = init_params(spec, 21);
  CHECK(params.weights[0].shape() == Shape{4, 8});
  CHECK(params.weights[1].shape() == Shape{11, 8});
  CHECK(params.weights[2].shape() == Shape{11, 1});
}

TEST_CASE("config validation rejects bad specs") {
  NetworkConfig net;
  net.hidden = {};
  CHECK_THROWS_AS(net.validate(), std::invalid_argument);
  ModelSpec spec;
  spec.net = {1, {8}, 1, "relu"};
  spec.ctx.entries = {{"c", 0, 0, {}}};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);  // size < 1
  spec.ctx.entries = {{"c", 2, 2, {}}};
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);  // layer > hidden
}

TEST_CASE("mse_loss examples") {
  CHECK(mse_loss(Tensor({2, 1}, {1, 3}), Tensor({2, 1}, {1, 3})).item() == 0.0);
  CHECK(mse_loss(Tensor({2, 1}, {0, 0}), Tensor({2, 1}, {1, 3})).item() ==
        doctest::Approx(5.0));
  CHECK_THROWS_AS(mse_loss(Tensor({2, 1}, {0, 0}), Tensor({1, 1}, {1})),
                  std::invalid_argument);
}

TEST_CASE("mse_loss gradient w.r.t. predictions matches finite differences") {
  Rng rng(23);
  std::vector<double> pv(4), tv(4);
  for (double& v : pv) v = rng.uniform(-2, 2);
  for (double& v : tv) v = rng.uniform(-2, 2);
  const Tensor target({4, 1}, std::move(tv));
  const Tensor pred({4, 1}, std::move(pv));
  const ScalarFn fn = [&](std::span<const Tensor> p) {
    return mse_loss(p[0], target);
  };
  CHECK(finite_diff_check(fn, {pred}, 1e-5) < 1e-8);
  Tape tape;
  Tensor p = pred.detached();
  tape.watch(p);
  const std::vector<Tensor> wrt{p};
  const GradMap g = backward(mse_loss(p, target), wrt);
  for (int i = 0; i < 4; ++i) {
    CHECK(g.at(p)[i] ==
          doctest::Approx(2.0 * (pred[i] - target[i]) / 4.0).epsilon(1e-12));
  }
}
