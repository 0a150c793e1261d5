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
#include "dmcm/gradcheck.hpp"

#include <cmath>

namespace dmcm {

namespace {

double eval_scalar(const ScalarFn& fn, const std::vector<Tensor>& params) {
  const Tensor v = fn(params);
  const double y = v.item();
  if (!std::isfinite(y)) throw NumericalError("finite_diff: non-finite value");
  return y;
}

Tensor perturbed(const Tensor& p, std::int64_t coord, double delta) {
  std::vector<double> v = p.values();
  v[size_t(coord)] += delta;
  return Tensor(p.shape(), std::move(v));
}

double max_rel_err(const ScalarFn& fn, const std::vector<Tensor>& params,
                   const std::vector<Tensor>& analytic, double step,
                   double denom_floor) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff: step must be > 0");
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::int64_t i = 0; i < params[pi].size(); ++i) {
      std::vector<Tensor> plus = params;
      plus[pi] = perturbed(params[pi], i, step);
      std::vector<Tensor> minus = params;
      minus[pi] = perturbed(params[pi], i, -step);
      const double numeric =
          (eval_scalar(fn, plus) - eval_scalar(fn, minus)) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel =
          std::abs(a - numeric) / std::max(std::abs(a), denom_floor);
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

double checked(const ScalarFn& fn, const std::vector<Tensor>& params,
               double step, double denom_floor) {
  Tape tape;
  std::vector<Tensor> watched = params;
  for (Tensor& p : watched) {
    p = p.detached();
    tape.watch(p);
  }
  const Tensor loss = fn(watched);
  const GradMap grads = backward(loss, watched);
  std::vector<Tensor> analytic;
  analytic.reserve(watched.size());
  for (const Tensor& p : watched) analytic.push_back(grads.at(p));
  return max_rel_err(fn, params, analytic, step, denom_floor);
}

}  // namespace

double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                         double step) {
  return checked(fn, params, step, 1e-12);
}

double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                         double step, double denom_floor) {
  return checked(fn, params, step, denom_floor);
}

double finite_diff_against(const ScalarFn& fn,
                           const std::vector<Tensor>& params,
                           const std::vector<Tensor>& analytic, double step) {
  return max_rel_err(fn, params, analytic, step, 1e-12);
}

}  // namespace dmcm
