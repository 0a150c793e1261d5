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
#include "dmcm/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dmcm {

namespace {

constexpr double kWidth = 720, kHeight = 440;
constexpr double kMarginL = 70, kMarginR = 160, kMarginT = 40, kMarginB = 50;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

Series series_from_rows(const std::vector<MetricRow>& rows) {
  // method -> step -> (sum_y, sum_band, count)
  std::map<std::string, std::map<long long, std::array<double, 3>>> acc;
  for (const MetricRow& r : rows) {
    if (!std::isfinite(r.mean_mse)) continue;
    auto& slot = acc[r.method][r.meta_step];
    slot[0] += r.mean_mse;
    slot[1] += r.ci95;
    slot[2] += 1.0;
  }
  Series series;
  for (const auto& [method, by_step] : acc) {
    for (const auto& [step, s] : by_step) {
      series[method].push_back(
          {double(step), s[0] / s[2], s[1] / s[2]});
    }
  }
  return series;
}

std::string render_line_plot_svg(const std::string& title,
                                 const std::string& x_label,
                                 const std::string& y_label,
                                 const Series& series) {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& [name, pts] : series) {
    for (const SeriesPoint& p : pts) {
      if (first) {
        xmin = xmax = p.x;
        ymin = p.y - p.band;
        ymax = p.y + p.band;
        first = false;
      }
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y - p.band);
      ymax = std::max(ymax, p.y + p.band);
    }
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  ymin = std::min(ymin, 0.0);

  const double pw = kWidth - kMarginL - kMarginR;
  const double ph = kHeight - kMarginT - kMarginB;
  const auto px = [&](double x) {
    return kMarginL + (x - xmin) / (xmax - xmin) * pw;
  };
  const auto py = [&](double y) {
    return kMarginT + ph - (y - ymin) / (ymax - ymin) * ph;
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
     << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << " "
     << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";

  // axes
  os << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT + ph << "\" x2=\""
     << kMarginL + pw << "\" y2=\"" << kMarginT + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT << "\" x2=\""
     << kMarginL << "\" y2=\"" << kMarginT + ph << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << kMarginT + ph + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(xv) << "</text>\n";
    os << "<text x=\"" << kMarginL - 8 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          "font-size=\"11\">"
       << fmt(yv) << "</text>\n";
  }
  os << "<text x=\"" << kMarginL + pw / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\">"
     << x_label << "</text>\n";
  os << "<text x=\"18\" y=\"" << kMarginT + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"13\" transform=\"rotate(-90 18 "
     << kMarginT + ph / 2 << ")\">" << y_label << "</text>\n";

  int color = 0;
  double legend_y = kMarginT + 10;
  for (const auto& [name, pts] : series) {
    const char* c = kPalette[color % 8];
    ++color;
    if (pts.size() >= 2) {
      // shaded band
      std::ostringstream band;
      for (const SeriesPoint& p : pts) {
        band << px(p.x) << ',' << py(p.y + p.band) << ' ';
      }
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        band << px(it->x) << ',' << py(it->y - it->band) << ' ';
      }
      os << "<polygon points=\"" << band.str() << "\" fill=\"" << c
         << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    }
    std::ostringstream line;
    for (const SeriesPoint& p : pts) line << px(p.x) << ',' << py(p.y) << ' ';
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\""
       << c << "\" stroke-width=\"1.8\"/>\n";
    os << "<rect x=\"" << kMarginL + pw + 14 << "\" y=\"" << legend_y - 9
       << "\" width=\"14\" height=\"4\" fill=\"" << c << "\"/>\n";
    os << "<text x=\"" << kMarginL + pw + 34 << "\" y=\"" << legend_y - 2
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << name
       << "</text>\n";
    legend_y += 18;
  }
  os << "</svg>\n";
  return os.str();
}

void write_line_plot_svg(const std::filesystem::path& path,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label, const Series& series) {
  write_text_file(path, render_line_plot_svg(title, x_label, y_label, series));
}

}  // namespace dmcm
