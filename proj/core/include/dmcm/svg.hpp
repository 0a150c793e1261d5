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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dmcm/metrics.hpp"

namespace dmcm {

struct SeriesPoint {
  double x = 0.0;
  double y = 0.0;
  double band = 0.0;  // half-width of the shaded interval around y
};

using Series = std::map<std::string, std::vector<SeriesPoint>>;

// Native line plot: one polyline per series plus a shaded band polygon.
std::string render_line_plot_svg(const std::string& title,
                                 const std::string& x_label,
                                 const std::string& y_label,
                                 const Series& series);

void write_line_plot_svg(const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label, const Series& series);

// Groups rows by method: x = meta_step, y = mean_mse, band = ci95.
// Rows from multiple seeds/trials of one method are averaged per step.
Series series_from_rows(const std::vector<MetricRow>& rows);

}  // namespace dmcm
