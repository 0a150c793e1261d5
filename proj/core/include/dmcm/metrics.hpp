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
#include <filesystem>
#include <string>
#include <vector>

namespace dmcm {

// One evaluation point of a run. wall_time_s is populated by the timing
// study only; deterministic studies write 0 so that metrics.csv is
// byte-reproducible for a fixed (config, seed).
struct MetricRow {
  std::string method;
  std::uint64_t seed = 0;
  long long meta_step = 0;
  double mean_mse = 0.0;
  double ci95 = 0.0;
  std::string trial;
  double wall_time_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "method,seed,meta_step,mean_mse,ci95,trial,wall_time_s";

// 17 significant digits: doubles survive the round-trip losslessly.
std::string format_g17(double v);

std::string metrics_to_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> metrics_from_csv(const std::string& text);

// Atomic write (temp file + rename).
void write_text_file(const std::filesystem::path& path,
                     const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace dmcm
