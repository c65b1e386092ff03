#pragma once

// Self-contained SVG charts for the experiment reports: multi-series line
// charts with optional per-series event markers, and grouped bar charts.
// Output is deterministic for identical inputs (fixed canvas, fixed-precision
// pixel coordinates, shortest round-trip data labels).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <pushbox/io_util.hpp>

namespace pushbox {

struct PlotSeries {
  std::string name;
  std::string color;                           // CSS color, e.g. "#1b9e77"
  std::vector<std::pair<double, double>> pts;  // (x, y) in data space
  std::optional<int> marker;                   // index into pts to circle
};

namespace plot_detail {

constexpr double kWidth = 640.0, kHeight = 400.0;
constexpr double kLeft = 70.0, kRight = 24.0, kTop = 46.0, kBottom = 54.0;

inline std::string px(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::fixed, 2);
  return std::string(buf, ptr);
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

// Largest "nice" number (1/2/5 times a power of ten) not above x, or the
// nearest one when rounding — the classic axis-labeling helper.
inline double nice_num(double x, bool round) {
  const double expv = std::floor(std::log10(x));
  const double f = x / std::pow(10.0, expv);
  double nf;
  if (round) {
    nf = f < 1.5 ? 1.0 : f < 3.0 ? 2.0 : f < 7.0 ? 5.0 : 10.0;
  } else {
    nf = f <= 1.0 ? 1.0 : f <= 2.0 ? 2.0 : f <= 5.0 ? 5.0 : 10.0;
  }
  return nf * std::pow(10.0, expv);
}

struct Axis {
  double lo = 0.0, hi = 1.0, tick = 0.5;
};

inline Axis fit_axis(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(1.0, std::abs(lo));
    lo -= 0.5 * pad;
    hi += 0.5 * pad;
  }
  Axis ax;
  const double range = nice_num(hi - lo, false);
  ax.tick = nice_num(range / 4.0, true);
  ax.lo = std::floor(lo / ax.tick) * ax.tick;
  ax.hi = std::ceil(hi / ax.tick) * ax.tick;
  return ax;
}

inline void header(std::string& s, const std::string& title) {
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
       "height=\"400\" viewBox=\"0 0 640 400\" "
       "font-family=\"sans-serif\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"#ffffff\"/>\n";
  s += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" "
       "fill=\"#222222\">" +
       escape(title) + "</text>\n";
}

inline void axis_labels(std::string& s, const std::string& xlabel,
                        const std::string& ylabel) {
  s += "<text x=\"" + px(kLeft + (kWidth - kLeft - kRight) / 2) +
       "\" y=\"392\" text-anchor=\"middle\" font-size=\"12\" "
       "fill=\"#222222\">" +
       escape(xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + px(kTop + (kHeight - kTop - kBottom) / 2) +
       "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#222222\" "
       "transform=\"rotate(-90 16 " +
       px(kTop + (kHeight - kTop - kBottom) / 2) + ")\">" +
       escape(ylabel) + "</text>\n";
}

inline void legend(std::string& s,
                   const std::vector<std::pair<std::string, std::string>>&
                       entries) {  // (name, color)
  double y = kTop + 6.0;
  for (const auto& [name, color] : entries) {
    const double x = kWidth - kRight - 150.0;
    s += "<line x1=\"" + px(x) + "\" y1=\"" + px(y) + "\" x2=\"" +
         px(x + 22) + "\" y2=\"" + px(y) + "\" stroke=\"" + color +
         "\" stroke-width=\"2.5\"/>\n";
    s += "<text x=\"" + px(x + 28) + "\" y=\"" + px(y + 4) +
         "\" font-size=\"12\" fill=\"#222222\">" + escape(name) +
         "</text>\n";
    y += 18.0;
  }
}

}  // namespace plot_detail

// Multi-series line chart; a series' optional marker index is drawn as a
// filled circle on that series (used for goal-reached markers).
inline std::string line_chart(const std::string& title,
                              const std::string& xlabel,
                              const std::string& ylabel,
                              const std::vector<PlotSeries>& series) {
  using namespace plot_detail;
  bool any = false;
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.pts) {
      if (!std::isfinite(x) || !std::isfinite(y)) {
        throw std::invalid_argument("plot series contains non-finite points");
      }
      if (!any) {
        xlo = xhi = x;
        ylo = yhi = y;
        any = true;
      }
      xlo = std::min(xlo, x), xhi = std::max(xhi, x);
      ylo = std::min(ylo, y), yhi = std::max(yhi, y);
    }
    if (s.marker && (*s.marker < 0 ||
                     *s.marker >= static_cast<int>(s.pts.size()))) {
      throw std::invalid_argument("plot marker index out of range");
    }
  }
  if (!any) throw std::invalid_argument("line chart needs at least one point");

  const Axis ax = fit_axis(xlo, xhi), ay = fit_axis(ylo, yhi);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto X = [&](double x) { return kLeft + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto Y = [&](double y) {
    return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph;
  };

  std::string s;
  header(s, title);
  // gridlines + tick labels
  for (double v = ax.lo; v <= ax.hi + 1e-9 * ax.tick; v += ax.tick) {
    s += "<line x1=\"" + px(X(v)) + "\" y1=\"" + px(kTop) + "\" x2=\"" +
         px(X(v)) + "\" y2=\"" + px(kTop + ph) +
         "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + px(X(v)) + "\" y=\"" + px(kTop + ph + 16) +
         "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#444444\">" +
         format_double(v) + "</text>\n";
  }
  for (double v = ay.lo; v <= ay.hi + 1e-9 * ay.tick; v += ay.tick) {
    s += "<line x1=\"" + px(kLeft) + "\" y1=\"" + px(Y(v)) + "\" x2=\"" +
         px(kLeft + pw) + "\" y2=\"" + px(Y(v)) +
         "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + px(kLeft - 6) + "\" y=\"" + px(Y(v) + 4) +
         "\" text-anchor=\"end\" font-size=\"11\" fill=\"#444444\">" +
         format_double(v) + "</text>\n";
  }
  s += "<rect x=\"" + px(kLeft) + "\" y=\"" + px(kTop) + "\" width=\"" +
       px(pw) + "\" height=\"" + px(ph) +
       "\" fill=\"none\" stroke=\"#888888\"/>\n";

  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& sr : series) {
    if (sr.pts.empty()) continue;
    std::string poly = "<polyline fill=\"none\" stroke=\"" + sr.color +
                       "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sr.pts.size(); ++i) {
      if (i) poly += ' ';
      poly += px(X(sr.pts[i].first)) + ',' + px(Y(sr.pts[i].second));
    }
    s += poly + "\"/>\n";
    if (sr.marker) {
      const auto& [mx, my] = sr.pts[*sr.marker];
      s += "<circle cx=\"" + px(X(mx)) + "\" cy=\"" + px(Y(my)) +
           "\" r=\"5\" fill=\"" + sr.color + "\" stroke=\"#ffffff\"/>\n";
    }
    entries.emplace_back(sr.name, sr.color);
  }
  legend(s, entries);
  axis_labels(s, xlabel, ylabel);
  s += "</svg>\n";
  return s;
}

struct BarGroup {
  std::string label;           // category shown under the group
  std::vector<double> values;  // one per series
};

// Grouped bar chart; `series` pairs are (name, color), one bar per group.
inline std::string bar_chart(
    const std::string& title, const std::string& ylabel,
    const std::vector<std::pair<std::string, std::string>>& series,
    const std::vector<BarGroup>& groups) {
  using namespace plot_detail;
  if (series.empty() || groups.empty()) {
    throw std::invalid_argument("bar chart needs series and groups");
  }
  double vmax = 0.0;
  for (const auto& g : groups) {
    if (g.values.size() != series.size()) {
      throw std::invalid_argument("bar group size does not match series");
    }
    for (double v : g.values) {
      if (!std::isfinite(v) || v < 0.0) {
        throw std::invalid_argument("bar values must be finite and >= 0");
      }
      vmax = std::max(vmax, v);
    }
  }
  const Axis ay = fit_axis(0.0, vmax > 0.0 ? vmax : 1.0);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto Y = [&](double y) {
    return kTop + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph;
  };

  std::string s;
  header(s, title);
  for (double v = ay.lo; v <= ay.hi + 1e-9 * ay.tick; v += ay.tick) {
    s += "<line x1=\"" + px(kLeft) + "\" y1=\"" + px(Y(v)) + "\" x2=\"" +
         px(kLeft + pw) + "\" y2=\"" + px(Y(v)) +
         "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    s += "<text x=\"" + px(kLeft - 6) + "\" y=\"" + px(Y(v) + 4) +
         "\" text-anchor=\"end\" font-size=\"11\" fill=\"#444444\">" +
         format_double(v) + "</text>\n";
  }
  const double slot = pw / groups.size();
  const double bar = 0.7 * slot / series.size();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double cx = kLeft + (g + 0.5) * slot;
    const double x0 = cx - 0.5 * bar * series.size();
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = groups[g].values[k];
      s += "<rect x=\"" + px(x0 + k * bar) + "\" y=\"" + px(Y(v)) +
           "\" width=\"" + px(bar) + "\" height=\"" + px(Y(ay.lo) - Y(v)) +
           "\" fill=\"" + series[k].second + "\"/>\n";
    }
    s += "<text x=\"" + px(cx) + "\" y=\"" + px(kTop + ph + 16) +
         "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#444444\">" +
         escape(groups[g].label) + "</text>\n";
  }
  s += "<rect x=\"" + px(kLeft) + "\" y=\"" + px(kTop) + "\" width=\"" +
       px(pw) + "\" height=\"" + px(ph) +
       "\" fill=\"none\" stroke=\"#888888\"/>\n";
  legend(s, series);
  axis_labels(s, "", ylabel);
  s += "</svg>\n";
  return s;
}

}  // namespace pushbox
