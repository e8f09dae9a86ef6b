#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcrec/experiment.hpp"

namespace dcrec {

struct PlotSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

namespace detail {

inline std::string fmt_tick(double v) {
  char buf[32];
  if (std::abs(v - std::round(v)) < 1e-9 && std::abs(v) < 1e6)
    std::snprintf(buf, sizeof(buf), "%.0f", v);
  else
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace detail

// Minimal static line chart: axes with five ticks per side, one colored
// polyline with point markers per series, legend in the top-right corner.
inline std::string render_line_plot_svg(const std::vector<PlotSeries>& series,
                                        const std::string& title, const std::string& x_label,
                                        const std::string& y_label) {
  if (series.empty()) throw std::invalid_argument("render_line_plot_svg: no series");
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
  bool first = true;
  for (const PlotSeries& s : series) {
    if (s.xs.size() != s.ys.size() || s.xs.empty())
      throw std::invalid_argument("render_line_plot_svg: series " + s.label +
                                  " empty or mismatched");
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (first || s.xs[i] < x_min) x_min = s.xs[i];
      if (first || s.xs[i] > x_max) x_max = s.xs[i];
      if (first || s.ys[i] < y_min) y_min = s.ys[i];
      if (first || s.ys[i] > y_max) y_max = s.ys[i];
      first = false;
    }
  }
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max == y_min) y_max = y_min + 1.0;
  const double pad_y = 0.05 * (y_max - y_min);
  y_min -= pad_y;
  y_max += pad_y;

  const double w = 640, h = 420, ml = 70, mr = 150, mt = 50, mb = 55;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * pw; };
  auto py = [&](double y) { return mt + ph - (y - y_min) / (y_max - y_min) * ph; };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::string svg;
  char buf[256];
  auto put = [&svg, &buf](auto... args) {
    std::snprintf(buf, sizeof(buf), args...);
    svg += buf;
  };
  put("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      w, h);
  put("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", w, h);
  put("<text x=\"%.0f\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">%s</text>\n",
      ml + pw / 2, title.c_str());
  // axes
  put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml, mt + ph,
      ml + pw, mt + ph);
  put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml, mt, ml,
      mt + ph);
  for (int i = 0; i <= 4; ++i) {
    const double fx = x_min + (x_max - x_min) * i / 4.0;
    const double fy = y_min + (y_max - y_min) * i / 4.0;
    put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", px(fx),
        mt + ph, px(fx), mt + ph + 5);
    put("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n", px(fx), mt + ph + 20,
        detail::fmt_tick(fx).c_str());
    put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml - 5,
        py(fy), ml, py(fy));
    put("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%s</text>\n", ml - 9, py(fy) + 4,
        detail::fmt_tick(fy).c_str());
  }
  put("<text x=\"%.0f\" y=\"%.0f\" text-anchor=\"middle\">%s</text>\n", ml + pw / 2, h - 12,
      x_label.c_str());
  put("<text x=\"18\" y=\"%.0f\" text-anchor=\"middle\" transform=\"rotate(-90 18 %.0f)\">%s"
      "</text>\n",
      mt + ph / 2, mt + ph / 2, y_label.c_str());
  // data
  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    const char* color = colors[si % 6];
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      put("%.1f,%.1f ", px(s.xs[i]), py(s.ys[i]));
    }
    svg += "\"/>\n";
    for (std::size_t i = 0; i < s.xs.size(); ++i)
      put("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", px(s.xs[i]), py(s.ys[i]),
          color);
    const double ly = mt + 16 + 18.0 * si;
    put("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
        "stroke-width=\"2\"/>\n",
        ml + pw + 12, ly - 4, ml + pw + 34, ly - 4, color);
    put("<text x=\"%.1f\" y=\"%.1f\">%s</text>\n", ml + pw + 40, ly, s.label.c_str());
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title,
                                const std::string& x_label, const std::string& y_label,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_line_plot_svg: cannot open " + path);
  out << render_line_plot_svg(series, title, x_label, y_label);
}

// Accuracy curves for a step sweep: both ranking metrics against the number
// of denoising steps used at inference time.
inline void write_sweep_plot(const SweepResult& sweep, const std::string& path) {
  PlotSeries hr{"HR@5", {}, {}}, ndcg{"NDCG@5", {}, {}};
  for (const SweepPoint& p : sweep.points) {
    hr.xs.push_back(p.num_steps);
    hr.ys.push_back(p.hr5);
    ndcg.xs.push_back(p.num_steps);
    ndcg.ys.push_back(p.ndcg5);
  }
  write_line_plot_svg({hr, ndcg}, "Ranking quality vs denoising steps", "denoising steps",
                      "metric value", path);
}

}  // namespace dcrec
