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
#include "dmcm/tasks.hpp"

#include <algorithm>
#include <concepts>
#include <cmath>

#include <json.hpp>

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

}  // namespace

FactorRole factor_role_from(const std::string& name) {
  if (name == "amplitude") return FactorRole::Amplitude;
  if (name == "phase") return FactorRole::Phase;
  if (name == "y_shift") return FactorRole::YShift;
  throw std::invalid_argument("unknown factor role '" + name + "'");
}

std::string factor_role_name(FactorRole role) {
  switch (role) {
    case FactorRole::Amplitude: return "amplitude";
    case FactorRole::Phase: return "phase";
    case FactorRole::YShift: return "y_shift";
  }
  return "?";
}

void FactorSpec::validate() const {
  if (!(low < high)) {
    throw std::invalid_argument("factor '" + name + "': low must be < high");
  }
}

RangePartition RangePartition::trivial(std::size_t num_factors) {
  RangePartition p;
  p.bins.assign(num_factors, 1);
  return p;
}

long long RangePartition::total_cells() const {
  long long n = 1;
  for (const int b : bins) n *= b;
  return n;
}

void RangePartition::validate(const std::vector<FactorSpec>& factors) const {
  require(bins.size() == factors.size(),
          "partition: bins count must match factor count");
  for (const int b : bins) require(b >= 1, "partition: bins must be >= 1");
  for (const auto& cell : excluded) {
    require(cell.size() == bins.size(), "partition: excluded cell arity mismatch");
    for (std::size_t i = 0; i < cell.size(); ++i) {
      require(cell[i] >= 0 && cell[i] < bins[i],
              "partition: excluded cell index out of range");
    }
  }
  require(static_cast<long long>(excluded.size()) < total_cells(),
          "partition: all cells excluded");
}

std::vector<int> RangePartition::cell_of(
    const std::vector<FactorSpec>& factors,
    const std::vector<double>& values) const {
  std::vector<int> cell(factors.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double width = (factors[i].high - factors[i].low) / double(bins[i]);
    int idx = int(std::floor((values[i] - factors[i].low) / width));
    idx = std::clamp(idx, 0, bins[i] - 1);
    cell[i] = idx;
  }
  return cell;
}

bool RangePartition::is_excluded(const std::vector<FactorSpec>& factors,
                                 const std::vector<double>& values) const {
  return excluded.count(cell_of(factors, values)) > 0;
}

double sine_eval(const std::vector<FactorSpec>& factors, const SineTask& task,
                 double x) {
  double amplitude = 0.0, phase = 0.0, shift = 0.0;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    switch (factors[i].role) {
      case FactorRole::Amplitude: amplitude += task.values[i]; break;
      case FactorRole::Phase: phase = task.values[i]; break;
      case FactorRole::YShift: shift = task.values[i]; break;
    }
  }
  return amplitude * std::sin(x - phase) + shift;
}

SineTask sample_task(const std::vector<FactorSpec>& factors,
                     const RangePartition& partition, Rng& rng) {
  partition.validate(factors);
  SineTask task;
  task.values.resize(factors.size());
  for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
    for (std::size_t i = 0; i < factors.size(); ++i) {
      task.values[i] = rng.uniform(factors[i].low, factors[i].high);
    }
    if (!partition.is_excluded(factors, task.values)) return task;
  }
  throw std::runtime_error("sample_task: rejection cap reached (admissible region empty?)");
}

SineTask sample_conditional(const SineTask& prev,
                            const std::vector<int>& changing,
                            const std::vector<FactorSpec>& factors,
                            const RangePartition& partition, Rng& rng) {
  require(!changing.empty(), "sample_conditional: empty changing factor set");
  for (const int s : changing) {
    require(s >= 0 && s < int(factors.size()),
            "sample_conditional: factor index out of range");
  }
  SineTask task = prev;
  for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
    for (const int s : changing) {
      task.values[size_t(s)] =
          rng.uniform(factors[size_t(s)].low, factors[size_t(s)].high);
    }
    if (!partition.is_excluded(factors, task.values)) return task;
  }
  throw std::runtime_error(
      "sample_conditional: no admissible value for the changing factors");
}

TaskDataset sample_shots(const std::vector<FactorSpec>& factors,
                         const SineTask& task, int n, Rng& rng) {
  require(n >= 1, "sample_shots: n must be >= 1");
  std::vector<double> xs(static_cast<std::size_t>(n));
  std::vector<double> ys(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs[size_t(i)] = rng.uniform(kInputLow, kInputHigh);
    ys[size_t(i)] = sine_eval(factors, task, xs[size_t(i)]);
  }
  TaskDataset d;
  d.x = Tensor({n, 1}, std::move(xs));
  d.y = Tensor({n, 1}, std::move(ys));
  return d;
}

int mislabel(int s, double p, int K, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, "mislabel: p must be in [0,1]");
  require(s >= 0 && s < K, "mislabel: index out of range");
  if (p > 0.0 && K < 2) {
    throw std::invalid_argument("mislabel: K must be >= 2 when p > 0");
  }
  if (p == 0.0 || !rng.bernoulli(p)) return s;
  const int pick = int(rng.uniform_below(std::uint64_t(K - 1)));
  return pick < s ? pick : pick + 1;
}

std::set<std::vector<int>> random_exclusions(
    const std::vector<FactorSpec>& factors, const std::vector<int>& bins,
    int count, Rng& rng) {
  require(bins.size() == factors.size(), "random_exclusions: bins/factors mismatch");
  std::vector<std::vector<int>> cells;
  std::vector<int> cell(bins.size(), 0);
  // enumerate all cells
  while (true) {
    cells.push_back(cell);
    std::size_t i = 0;
    for (; i < bins.size(); ++i) {
      if (++cell[i] < bins[i]) break;
      cell[i] = 0;
    }
    if (i == bins.size()) break;
  }
  require(count >= 0 && count < int(cells.size()),
          "random_exclusions: count must leave at least one cell");
  // partial Fisher-Yates
  for (int i = 0; i < count; ++i) {
    const int j = i + int(rng.uniform_below(std::uint64_t(cells.size() - size_t(i))));
    std::swap(cells[size_t(i)], cells[size_t(j)]);
  }
  return {cells.begin(), cells.begin() + count};
}

std::set<std::vector<int>> exclusions_outside_intervals(
    const std::vector<int>& bins,
    const std::vector<std::vector<int>>& allowed_per_factor) {
  require(allowed_per_factor.size() == bins.size(),
          "exclusions_outside_intervals: arity mismatch");
  std::set<std::vector<int>> out;
  std::vector<int> cell(bins.size(), 0);
  while (true) {
    bool allowed = true;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const auto& ok = allowed_per_factor[i];
      if (std::find(ok.begin(), ok.end(), cell[i]) == ok.end()) {
        allowed = false;
        break;
      }
    }
    if (!allowed) out.insert(cell);
    std::size_t i = 0;
    for (; i < bins.size(); ++i) {
      if (++cell[i] < bins[i]) break;
      cell[i] = 0;
    }
    if (i == bins.size()) break;
  }
  return out;
}

std::string task_setup_to_json(const std::vector<FactorSpec>& factors,
                               const RangePartition& partition,
                               std::uint64_t seed) {
  nlohmann::json j;
  j["factors"] = nlohmann::json::array();
  for (const FactorSpec& f : factors) {
    j["factors"].push_back({{"name", f.name},
                            {"low", f.low},
                            {"high", f.high},
                            {"role", factor_role_name(f.role)},
                            {"active", f.active}});
  }
  j["partition"] = partition.bins;
  j["excluded_cells"] = nlohmann::json::array();
  for (const auto& cell : partition.excluded) j["excluded_cells"].push_back(cell);
  j["seed"] = seed;
  return j.dump(2);
}

void task_setup_from_json(const std::string& text,
                          std::vector<FactorSpec>& factors,
                          RangePartition& partition, std::uint64_t& seed) {
  const nlohmann::json j = nlohmann::json::parse(text);
  factors.clear();
  for (const auto& f : j.at("factors")) {
    FactorSpec spec;
    spec.name = f.at("name").get<std::string>();
    spec.low = f.at("low").get<double>();
    spec.high = f.at("high").get<double>();
    spec.role = factor_role_from(f.at("role").get<std::string>());
    spec.active = f.value("active", true);
    spec.validate();
    factors.push_back(std::move(spec));
  }
  partition.bins = j.at("partition").get<std::vector<int>>();
  partition.excluded.clear();
  for (const auto& cell : j.at("excluded_cells")) {
    partition.excluded.insert(cell.get<std::vector<int>>());
  }
  partition.validate(factors);
  seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace dmcm
