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
#include "dmcm/rng.hpp"
#include "dmcm/tensor.hpp"

using namespace dmcm;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::vector<double> v(size_t(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

}  // namespace

TEST_CASE("backward: power rule on x^2") {
  Tape tape;
  Tensor x = Tensor::scalar(3.0);
  tape.watch(x);
  const Tensor loss = square(x);
  const std::vector<Tensor> wrt{x};
  const GradMap g = backward(loss, wrt);
  CHECK(g.at(x).item() == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward: batched linear MSE matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(Rng::splitmix64(seed));
    const Tensor w = random_tensor({1, 1}, rng);
    const Tensor x = random_tensor({5, 1}, rng, -2.0, 2.0);
    const Tensor y = random_tensor({5, 1}, rng, -2.0, 2.0);
    const ScalarFn fn = [&](std::span<const Tensor> params) {
      return mean(square(sub(matmul(x, params[0]), y)));
    };
    CHECK(finite_diff_check(fn, {w}, 1e-5) < 1e-6);
  }
}

TEST_CASE("backward: parameters unreachable from the loss get zero grads") {
  Tape tape;
  Tensor x = Tensor::scalar(2.0);
  Tensor unused = Tensor({2, 2}, {1, 2, 3, 4});
  tape.watch(x);
  tape.watch(unused);
  const Tensor loss = square(x);
  const std::vector<Tensor> wrt{x, unused};
  const GradMap g = backward(loss, wrt);
  CHECK(g.at(unused).shape() == Shape{2, 2});
  for (const double v : g.at(unused).values()) CHECK(v == 0.0);
}

TEST_CASE("backward: error cases") {
  Tape tape;
  Tensor x = Tensor({2}, {1, 2});
  tape.watch(x);
  const Tensor vec = add(x, x);
  const std::vector<Tensor> wrt{x};
  CHECK_THROWS_AS(backward(vec, wrt), std::invalid_argument);  // non-scalar
  const Tensor loss = sum_all(vec);
  CHECK_THROWS_AS(backward(loss, {}), std::invalid_argument);  // empty wrt
}

TEST_CASE("backward: linearity in the loss") {
  Rng rng(42);
  const double a = 2.5, b = -1.25;
  Tape tape;
  Tensor w = random_tensor({3, 2}, rng);
  tape.watch(w);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor l1 = mean(square(matmul(x, w)));
  const Tensor l2 = mean(dmcm::sin(matmul(x, w)));
  const Tensor combined = add(scale(l1, a), scale(l2, b));
  const std::vector<Tensor> wrt{w};
  const GradMap g1 = backward(l1, wrt);
  const GradMap g2 = backward(l2, wrt);
  const GradMap gc = backward(combined, wrt);
  for (std::int64_t i = 0; i < w.size(); ++i) {
    const double expected = a * g1.at(w)[i] + b * g2.at(w)[i];
    CHECK(gc.at(w)[i] == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("higher-order: second derivative of x^3") {
  Tape tape;
  Tensor x = Tensor::scalar(2.0);
  tape.watch(x);
  const Tensor y = mul(mul(x, x), x);
  const std::vector<Tensor> wrt{x};
  const GradMap g = backward(y, wrt, /*retain=*/true);
  CHECK(g.at(x).item() == doctest::Approx(12.0));  // 3x^2
  const GradMap g2 = higher_order_backward(g.at(x), wrt);
  CHECK(g2.at(x).item() == doctest::Approx(12.0).epsilon(1e-14));  // 6x
}

TEST_CASE("higher-order: requires a retained graph") {
  Tape tape;
  Tensor x = Tensor::scalar(2.0);
  tape.watch(x);
  const Tensor y = square(x);
  const std::vector<Tensor> wrt{x};
  const GradMap g = backward(y, wrt, /*retain=*/false);
  CHECK_THROWS_AS(higher_order_backward(g.at(x), wrt), NumericalError);
}

TEST_CASE("higher-order: Schwarz symmetry of mixed partials") {
  Tape tape;
  Tensor x = Tensor::scalar(0.7);
  Tensor y = Tensor::scalar(-1.3);
  tape.watch(x);
  tape.watch(y);
  // f = sin(x) y^2 + x y^3
  const Tensor f = add(mul(dmcm::sin(x), square(y)), mul(x, mul(square(y), y)));
  const std::vector<Tensor> wrt{x, y};
  const GradMap g = backward(f, wrt, /*retain=*/true);
  const std::vector<Tensor> wrt_y{y};
  const std::vector<Tensor> wrt_x{x};
  const double dxy = higher_order_backward(g.at(x), wrt_y).at(y).item();
  const double dyx = higher_order_backward(g.at(y), wrt_x).at(x).item();
  CHECK(dxy == doctest::Approx(dyx).epsilon(1e-8));
  // closed form: 2 y cos(x) + 3 y^2
  const double expected = 2 * (-1.3) * std::cos(0.7) + 3 * 1.3 * 1.3;
  CHECK(dxy == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("finite_diff_check: quadratic is exact up to rounding") {
  const ScalarFn fn = [](std::span<const Tensor> params) {
    return sum_all(square(params[0]));
  };
  const Tensor p({3}, {1.0, -2.0, 0.5});
  CHECK(finite_diff_check(fn, {p}, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check: constant function has zero error") {
  const ScalarFn fn = [](std::span<const Tensor>) {
    return Tensor::scalar(5.0);
  };
  const Tensor p({2}, {1.0, 2.0});
  CHECK(finite_diff_check(fn, {p}, 1e-5) == 0.0);
}

TEST_CASE("finite_diff_check: random 2x40x40x1 MLP MSE") {
  Rng rng(Rng::splitmix64(2024));
  // Central differences are only valid away from relu kinks; redraw until
  // every pre-activation clears the kink by much more than the step.
  Tensor w1, b1, w2, b2, w3, b3, x, y;
  while (true) {
    w1 = random_tensor({2, 40}, rng, -0.5, 0.5);
    b1 = random_tensor({1, 40}, rng, -0.1, 0.1);
    w2 = random_tensor({40, 40}, rng, -0.15, 0.15);
    b2 = random_tensor({1, 40}, rng, -0.1, 0.1);
    w3 = random_tensor({40, 1}, rng, -0.15, 0.15);
    b3 = random_tensor({1, 1}, rng, -0.1, 0.1);
    x = random_tensor({5, 2}, rng, -2.0, 2.0);
    y = random_tensor({5, 1}, rng, -2.0, 2.0);
    const Tensor z1 = add(matmul(x, w1), broadcast_rows(b1, 5));
    const Tensor z2 = add(matmul(relu(z1), w2), broadcast_rows(b2, 5));
    double margin = 1e9;
    for (const double v : z1.values()) margin = std::min(margin, std::abs(v));
    for (const double v : z2.values()) margin = std::min(margin, std::abs(v));
    if (margin > 1e-3) break;
  }
  const ScalarFn fn = [&](std::span<const Tensor> p) {
    const int n = x.shape()[0];
    Tensor h = relu(add(matmul(x, p[0]), broadcast_rows(p[1], n)));
    h = relu(add(matmul(h, p[2]), broadcast_rows(p[3], n)));
    const Tensor out = add(matmul(h, p[4]), broadcast_rows(p[5], n));
    return mean(square(sub(out, y)));
  };
  CHECK(finite_diff_check(fn, {w1, b1, w2, b2, w3, b3}, 1e-5) < 1e-6);
}

TEST_CASE("backward of a constant loss returns zeros") {
  Tape tape;
  Tensor p = Tensor({2}, {1.0, 2.0});
  tape.watch(p);
  const Tensor loss = Tensor::scalar(3.0);  // no graph participation
  const std::vector<Tensor> wrt{p};
  const GradMap g = backward(loss, wrt);
  CHECK(g.at(p).values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("retained backward leaves gradients differentiable through concat") {
  // d/da of || concat(a,b) W ||^2 twice, against a hand-computed value.
  Tape tape;
  Tensor a = Tensor({1, 1}, {0.5});
  tape.watch(a);
  const Tensor b = Tensor({1, 1}, {2.0});
  const Tensor w = Tensor({2, 1}, {3.0, -1.0});
  const Tensor out = matmul(concat_cols(a, b), w);  // 3a - 2
  const Tensor loss = sum_all(square(out));         // (3a-2)^2
  const std::vector<Tensor> wrt{a};
  const GradMap g = backward(loss, wrt, /*retain=*/true);
  CHECK(g.at(a).item() == doctest::Approx(6 * (3 * 0.5 - 2)));  // 6(3a-2)
  const GradMap g2 = higher_order_backward(sum_all(g.at(a)), wrt);
  CHECK(g2.at(a).item() == doctest::Approx(18.0).epsilon(1e-13));
}
