// Copyright 2026 the coldboot authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef COLDBOOT_SVG_HPP_
#define COLDBOOT_SVG_HPP_

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace coldboot {

// Minimal standalone SVG charts for report output. Formatting is fixed so
// the same data always yields byte-identical files.

struct SvgSeries {
  std::string name;
  std::vector<double> values;  // one per label
};

namespace svg_detail {

constexpr double kWidth = 640, kHeight = 360;
constexpr double kLeft = 64, kRight = 24, kTop = 44, kBottom = 56;

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline const char* color(size_t i) {
  static const char* kPalette[] = {"#4878a8", "#e8823c", "#6aa84f", "#a64d79", "#8a8a8a"};
  return kPalette[i % 5];
}

// smallest "nice" value (1/2/5 times a power of ten) at or above the max
inline double nice_ceiling(double vmax) {
  if (vmax <= 0) return 1.0;
  double mag = std::pow(10.0, std::floor(std::log10(vmax)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (vmax <= m * mag * (1 + 1e-12)) return m * mag;
  return 10.0 * mag;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

inline void frame(std::string& out, const std::string& title, const std::string& y_label,
                  double vmax) {
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\" "
         "font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<rect width=\"640\" height=\"360\" fill=\"#ffffff\"/>\n";
  out += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) +
         "</text>\n";
  double h = kHeight - kTop - kBottom;
  for (int i = 0; i <= 4; ++i) {
    double y = kTop + h - h * i / 4;
    out += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" + num(kWidth - kRight) +
           "\" y2=\"" + num(y) + "\" stroke=\"" + (i == 0 ? "#333333" : "#dddddd") + "\"/>\n";
    out += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(y + 4) +
           "\" text-anchor=\"end\">" + tick(vmax * i / 4) + "</text>\n";
  }
  out += "<text x=\"16\" y=\"" + num(kTop + h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kTop + h / 2) + ")\">" + escape(y_label) + "</text>\n";
}

inline void legend(std::string& out, const std::vector<SvgSeries>& series) {
  if (series.size() < 2) return;
  double x = kWidth - kRight - 120.0 * static_cast<double>(series.size());
  for (size_t s = 0; s < series.size(); ++s) {
    out += "<rect x=\"" + num(x) + "\" y=\"30\" width=\"10\" height=\"10\" fill=\"" +
           color(s) + "\"/>\n";
    out += "<text x=\"" + num(x + 14) + "\" y=\"40\">" + escape(series[s].name) + "</text>\n";
    x += 120;
  }
}

}  // namespace svg_detail

// Grouped vertical bars, one group per label.
inline std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<SvgSeries>& series,
                                 const std::string& y_label) {
  using namespace svg_detail;
  double vmax = 0;
  for (const auto& s : series)
    for (double v : s.values) vmax = std::max(vmax, v);
  vmax = nice_ceiling(vmax);

  std::string out;
  frame(out, title, y_label, vmax);
  legend(out, series);

  double h = kHeight - kTop - kBottom;
  double w = kWidth - kLeft - kRight;
  size_t groups = labels.size();
  double slot = groups ? w / static_cast<double>(groups) : w;
  double bar = series.empty() ? slot : slot * 0.7 / static_cast<double>(series.size());
  for (size_t g = 0; g < groups; ++g) {
    double x0 = kLeft + slot * static_cast<double>(g) + slot * 0.15;
    for (size_t s = 0; s < series.size(); ++s) {
      double v = g < series[s].values.size() ? series[s].values[g] : 0.0;
      double bh = h * (v / vmax);
      out += "<rect x=\"" + num(x0 + bar * static_cast<double>(s)) + "\" y=\"" +
             num(kTop + h - bh) + "\" width=\"" + num(bar) + "\" height=\"" + num(bh) +
             "\" fill=\"" + color(s) + "\"/>\n";
    }
    out += "<text x=\"" + num(kLeft + slot * (static_cast<double>(g) + 0.5)) + "\" y=\"" +
           num(kTop + h + 16) + "\" text-anchor=\"middle\">" + escape(labels[g]) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

// One polyline per series over equally spaced labeled x positions.
inline std::string svg_line_chart(const std::string& title, const std::vector<std::string>& labels,
                                  const std::vector<SvgSeries>& series,
                                  const std::string& y_label) {
  using namespace svg_detail;
  double vmax = 0;
  for (const auto& s : series)
    for (double v : s.values) vmax = std::max(vmax, v);
  vmax = nice_ceiling(vmax);

  std::string out;
  frame(out, title, y_label, vmax);
  legend(out, series);

  double h = kHeight - kTop - kBottom;
  double w = kWidth - kLeft - kRight;
  size_t n = labels.size();
  double step = n > 1 ? w / static_cast<double>(n - 1) : 0;
  for (size_t s = 0; s < series.size(); ++s) {
    std::string pts;
    for (size_t i = 0; i < n && i < series[s].values.size(); ++i) {
      double x = kLeft + step * static_cast<double>(i);
      double y = kTop + h - h * (series[s].values[i] / vmax);
      pts += num(x) + "," + num(y) + " ";
      out += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3\" fill=\"" + color(s) +
             "\"/>\n";
    }
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color(s) +
           "\" stroke-width=\"2\"/>\n";
  }
  for (size_t i = 0; i < n; ++i) {
    out += "<text x=\"" + num(kLeft + step * static_cast<double>(i)) + "\" y=\"" +
           num(kTop + h + 16) + "\" text-anchor=\"middle\">" + escape(labels[i]) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace coldboot

#endif  // COLDBOOT_SVG_HPP_
