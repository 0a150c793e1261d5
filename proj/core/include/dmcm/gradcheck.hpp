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
#include <vector>

#include "dmcm/tensor.hpp"

namespace dmcm {

// A deterministic scalar-valued function of a parameter list. The function
// must use the graph ops only; it is evaluated both on watched parameters
// (analytic path) and on plain value tensors (numeric path).
using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Central finite-difference check: returns the maximum over all parameter
// coordinates of |analytic - numeric| / max(|analytic|, 1e-12).
double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                         double step);

// Same check with the denominator floored at `denom_floor`. Central
// differences in double precision carry ~1e-11 absolute round-off noise, so
// coordinates whose true gradient sits below the floor are judged in
// absolute terms (the conventional rtol/atol gradcheck semantics).
double finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                         double step, double denom_floor);

// Same check against externally supplied analytic gradients (one tensor per
// parameter, shape-matched). Used to validate second-order gradients of
// composite maps where the analytic side is produced by nested backward.
double finite_diff_against(const ScalarFn& fn,
                           const std::vector<Tensor>& params,
                           const std::vector<Tensor>& analytic, double step);

}  // namespace dmcm
