#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "copt/errors.hpp"

namespace copt {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ls(line);
  while (std::getline(ls, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw ValidationError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                              std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw ValidationError("csv is empty");
  return t;
}

namespace detail {
inline std::string svg_num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}
}  // namespace detail

/// Line chart of every "miou"/"iou_*" column against "iter"; one polyline
/// per metric column. NaN points are dropped.
inline std::string metrics_svg(const CsvTable& t) {
  const auto iter_col = std::find(t.header.begin(), t.header.end(), "iter");
  if (iter_col == t.header.end()) throw ValidationError("csv has no 'iter' column");
  const auto xi = static_cast<std::size_t>(iter_col - t.header.begin());
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (t.header[c] == "miou" || t.header[c].rfind("iou_", 0) == 0) cols.push_back(c);
  if (cols.empty()) throw ValidationError("csv has no miou/iou_* columns");

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  for (const auto& r : t.rows) {
    const double x = std::stod(r[xi]);
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
  }
  if (t.rows.empty()) xmin = 0, xmax = 1;
  if (xmax <= xmin) xmax = xmin + 1;

  const double W = 640, H = 400, L = 50, R = 150, T = 20, B = 40;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - std::clamp(y, 0.0, 1.0) * (H - T - B); };
  static const char* colors[] = {"#000000", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                 "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf"};

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << (W - R + L) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n"
    << "<text x=\"" << L - 6 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"10\">1</text>\n"
    << "<text x=\"" << L - 6 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">0</text>\n"
    << "<text x=\"" << L << "\" y=\"" << H - B + 14 << "\" font-size=\"10\">" << xmin << "</text>\n"
    << "<text x=\"" << W - R << "\" y=\"" << H - B + 14 << "\" text-anchor=\"end\" font-size=\"10\">" << xmax
    << "</text>\n";
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const char* color = colors[k % 10];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << (k == 0 ? 2 : 1)
      << "\" data-metric=\"" << t.header[cols[k]] << "\" points=\"";
    bool first = true;
    for (const auto& r : t.rows) {
      const double y = std::stod(r[cols[k]]);
      if (std::isnan(y)) continue;
      if (!first) s << ' ';
      s << detail::svg_num(px(std::stod(r[xi]))) << ',' << detail::svg_num(py(y));
      first = false;
    }
    s << "\"/>\n";
    s << "<text x=\"" << W - R + 8 << "\" y=\"" << T + 14 * (k + 1) << "\" font-size=\"11\" fill=\"" << color << "\">"
      << t.header[cols[k]] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace copt
