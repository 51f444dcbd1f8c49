#include "afcv/cli/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "afcv/core/error.hpp"

namespace afcv::cli {

namespace {

constexpr const char* kSeries[6] = {"total", "cls", "loc", "mask", "crossover", "embed"};
constexpr const char* kColors[6] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
constexpr double kPanelW = 420, kPanelH = 240, kMargin = 48;

double series_value(const trainer::LossReport& r, int s) {
  switch (s) {
    case 0: return r.total;
    case 1: return r.components.cls;
    case 2: return r.components.loc;
    case 3: return r.components.mask;
    case 4: return r.components.crossover;
    default: return r.components.embed;
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace

LossCurve read_loss_log(const std::filesystem::path& path, const std::string& name) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read loss log " + path.string());
  LossCurve curve;
  curve.name = name;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      curve.records.push_back(trainer::parse_log_line(line));
    } catch (const DataError&) {
      ++curve.skipped_lines;
    }
  }
  return curve;
}

std::string render_loss_svg(const std::vector<LossCurve>& curves) {
  if (curves.empty()) throw DataError("nothing to plot");
  for (const auto& c : curves) {
    if (c.records.empty()) throw DataError("loss log '" + c.name + "' has no records");
  }
  const int cols = 3;
  const double legend_h = 24.0 * curves.size() + 16;
  const double width = cols * (kPanelW + kMargin) + kMargin;
  const double height = 2 * (kPanelH + kMargin) + kMargin + legend_h;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
                    "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  double x_min = 1e300, x_max = -1e300;
  for (const auto& c : curves) {
    for (const auto& r : c.records) {
      x_min = std::min(x_min, static_cast<double>(r.iteration));
      x_max = std::max(x_max, static_cast<double>(r.iteration));
    }
  }
  if (x_max <= x_min) x_max = x_min + 1;

  for (int s = 0; s < 6; ++s) {
    const double ox = kMargin + (s % cols) * (kPanelW + kMargin);
    const double oy = kMargin + (s / cols) * (kPanelH + kMargin);
    double y_min = 1e300, y_max = -1e300;
    for (const auto& c : curves) {
      for (const auto& r : c.records) {
        y_min = std::min(y_min, series_value(r, s));
        y_max = std::max(y_max, series_value(r, s));
      }
    }
    y_min = std::min(y_min, 0.0);
    if (y_max <= y_min) y_max = y_min + 1;
    svg += "<g class=\"panel\" data-series=\"" + std::string(kSeries[s]) + "\">\n";
    svg += "<rect x=\"" + num(ox) + "\" y=\"" + num(oy) + "\" width=\"" + num(kPanelW) + "\" height=\"" +
           num(kPanelH) + "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg += "<text x=\"" + num(ox + kPanelW / 2) + "\" y=\"" + num(oy - 8) + "\" text-anchor=\"middle\">" +
           kSeries[s] + " loss</text>\n";
    svg += "<text x=\"" + num(ox - 4) + "\" y=\"" + num(oy + 10) + "\" text-anchor=\"end\">" + label(y_max) +
           "</text>\n";
    svg += "<text x=\"" + num(ox - 4) + "\" y=\"" + num(oy + kPanelH) + "\" text-anchor=\"end\">" + label(y_min) +
           "</text>\n";
    svg += "<text x=\"" + num(ox) + "\" y=\"" + num(oy + kPanelH + 16) + "\">" + label(x_min) + "</text>\n";
    svg += "<text x=\"" + num(ox + kPanelW) + "\" y=\"" + num(oy + kPanelH + 16) + "\" text-anchor=\"end\">" +
           label(x_max) + " iter</text>\n";
    for (std::size_t k = 0; k < curves.size(); ++k) {
      svg += "<polyline fill=\"none\" stroke-width=\"1.2\" stroke=\"" + std::string(kColors[k % 6]) + "\" points=\"";
      for (const auto& r : curves[k].records) {
        const double px = ox + (r.iteration - x_min) / (x_max - x_min) * kPanelW;
        const double py = oy + kPanelH - (series_value(r, s) - y_min) / (y_max - y_min) * kPanelH;
        svg += num(px) + "," + num(py) + " ";
      }
      svg.back() = '"';
      svg += "/>\n";
    }
    svg += "</g>\n";
  }

  double ly = 2 * (kPanelH + kMargin) + kMargin;
  svg += "<g class=\"legend\">\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    svg += "<line x1=\"" + num(kMargin) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kMargin + 24) + "\" y2=\"" +
           num(ly) + "\" stroke=\"" + kColors[k % 6] + "\" stroke-width=\"3\"/>\n";
    svg += "<text x=\"" + num(kMargin + 32) + "\" y=\"" + num(ly + 4) + "\">" + escape(curves[k].name) + "</text>\n";
    ly += 24;
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace afcv::cli
