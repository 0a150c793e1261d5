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
#include "dmcm/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dmcm {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metrics_to_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const MetricRow& r : rows) {
    os << r.method << ',' << r.seed << ',' << r.meta_step << ','
       << format_g17(r.mean_mse) << ',' << format_g17(r.ci95) << ',' << r.trial
       << ',' << format_g17(r.wall_time_s) << '\n';
  }
  return os.str();
}

std::vector<MetricRow> metrics_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) {
    throw std::invalid_argument("metrics csv: bad header");
  }
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 7) {
      throw std::invalid_argument("metrics csv: expected 7 fields, got " +
                                  std::to_string(fields.size()));
    }
    MetricRow r;
    r.method = fields[0];
    r.seed = std::stoull(fields[1]);
    r.meta_step = std::stoll(fields[2]);
    r.mean_mse = std::strtod(fields[3].c_str(), nullptr);
    r.ci95 = std::strtod(fields[4].c_str(), nullptr);
    r.trial = fields[5];
    r.wall_time_s = std::strtod(fields[6].c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_text_file(const std::filesystem::path& path,
                     const std::string& content) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& rows) {
  write_text_file(path, metrics_to_csv(rows));
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  return metrics_from_csv(read_text_file(path));
}

}  // namespace dmcm
