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

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dmcm/rng.hpp"
#include "dmcm/tensor.hpp"

namespace dmcm {

// Inputs are sampled uniformly over this domain, the sinusoid-benchmark
// convention.
inline constexpr double kInputLow = -5.0;
inline constexpr double kInputHigh = 5.0;

enum class FactorRole { Amplitude, Phase, YShift };

FactorRole factor_role_from(const std::string& name);
std::string factor_role_name(FactorRole role);

struct FactorSpec {
  std::string name;
  double low = 0.0;
  double high = 1.0;
  FactorRole role = FactorRole::Amplitude;
  bool active = true;

  void validate() const;
};

// A task is a point in factor space. Values are aligned with the factor
// list of the experiment. The modeled function is
//   y = (sum of amplitude factors) * sin(x - phase) + y_shift,
// with phase / y_shift equal to 0 when no such factor is declared.
struct SineTask {
  std::vector<double> values;
};

// Per-factor uniform interval split with an excluded cell set. A cell is a
// tuple of per-factor interval indices.
struct RangePartition {
  std::vector<int> bins;                 // interval count per factor
  std::set<std::vector<int>> excluded;   // excluded cells

  static RangePartition trivial(std::size_t num_factors);
  void validate(const std::vector<FactorSpec>& factors) const;
  long long total_cells() const;

  // Cell of a factor-value tuple (values on the upper boundary fall in the
  // last interval).
  std::vector<int> cell_of(const std::vector<FactorSpec>& factors,
                           const std::vector<double>& values) const;
  bool is_excluded(const std::vector<FactorSpec>& factors,
                   const std::vector<double>& values) const;
};

struct TaskDataset {
  Tensor x;  // (n, 1)
  Tensor y;  // (n, 1)
  int size() const { return x.defined() ? x.shape()[0] : 0; }
};

inline constexpr int kRejectionCap = 10000;

double sine_eval(const std::vector<FactorSpec>& factors, const SineTask& task,
                 double x);

// Uniform over the admissible (non-excluded) region, via rejection.
SineTask sample_task(const std::vector<FactorSpec>& factors,
                     const RangePartition& partition, Rng& rng);

// Next chain task: equals prev in every factor except the ones listed in
// `changing`; the joint cell stays admissible.
SineTask sample_conditional(const SineTask& prev,
                            const std::vector<int>& changing,
                            const std::vector<FactorSpec>& factors,
                            const RangePartition& partition, Rng& rng);

// n i.i.d. inputs from Uniform[-5,5] with exact targets.
TaskDataset sample_shots(const std::vector<FactorSpec>& factors,
                         const SineTask& task, int n, Rng& rng);

// With probability 1-p returns s, otherwise a uniformly chosen index != s.
// Indices are 0-based in [0, K).
int mislabel(int s, double p, int K, Rng& rng);

// Draws an exclusion set of the given size uniformly without replacement.
std::set<std::vector<int>> random_exclusions(
    const std::vector<FactorSpec>& factors, const std::vector<int>& bins,
    int count, Rng& rng);

// Exclusions that keep only the listed intervals per factor (used for the
// interval-subset OOD setting).
std::set<std::vector<int>> exclusions_outside_intervals(
    const std::vector<int>& bins,
    const std::vector<std::vector<int>>& allowed_per_factor);

// JSON (de)serialization for experiment manifests. Field names:
// factors, partition, excluded_cells, seed.
std::string task_setup_to_json(const std::vector<FactorSpec>& factors,
                               const RangePartition& partition,
                               std::uint64_t seed);
void task_setup_from_json(const std::string& text,
                          std::vector<FactorSpec>& factors,
                          RangePartition& partition, std::uint64_t& seed);

}  // namespace dmcm
