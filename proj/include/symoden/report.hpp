#pragma once

// Self-contained SVG line plots, CSV reading and markdown tables for
// experiment reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "symoden/errors.hpp"

namespace symoden::report {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  bool log_x = false;
  bool log_y = false;
  double width = 640;
  double height = 420;
};

namespace detail {

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

}  // namespace detail

/// Line plot with one polyline per series. Points that cannot be shown on a
/// log axis (<= 0) are dropped. Distinct x values become ticks when there
/// are at most 12 of them.
inline std::string line_plot_svg(const PlotSpec& spec, const std::vector<Series>& series) {
  const double left = 80, right = 150, top = 40, bottom = 60;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
  auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
  auto usable = [&](double x, double y) {
    return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0) && (!spec.log_y || y > 0);
  };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  std::set<double> xs;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ContractError("series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      xs.insert(s.x[i]);
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  }
  if (xs.empty()) {
    x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  }
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double v) { return left + (tx(v) - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return top + ph - (ty(v) - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  using detail::num;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(spec.width) << " " << num(spec.height)
     << "\" width=\"" << num(spec.width) << "\" height=\"" << num(spec.height) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << num(spec.width) << "\" height=\"" << num(spec.height)
     << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << num(spec.width / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
     << detail::escape(spec.title) << "</text>\n";
  os << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  // x ticks
  std::vector<double> xticks;
  if (!xs.empty() && xs.size() <= 12) {
    xticks.assign(xs.begin(), xs.end());
  } else {
    for (int i = 0; i <= 5; ++i) {
      const double v = x0 + (x1 - x0) * i / 5.0;
      xticks.push_back(spec.log_x ? std::pow(10.0, v) : v);
    }
  }
  for (double v : xticks) {
    const double x = px(v);
    os << "<line class=\"xtick\" x1=\"" << num(x) << "\" y1=\"" << num(top + ph) << "\" x2=\"" << num(x)
       << "\" y2=\"" << num(top + ph + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(x) << "\" y=\"" << num(top + ph + 18) << "\" text-anchor=\"middle\" font-size=\"11\">"
       << detail::label(v) << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double t = y0 + (y1 - y0) * i / 5.0;
    const double v = spec.log_y ? std::pow(10.0, t) : t;
    const double y = py(v);
    os << "<line class=\"ytick\" x1=\"" << num(left - 5) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left)
       << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(left - 8) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
       << detail::label(v) << "</text>\n";
  }
  os << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(spec.height - 14)
     << "\" text-anchor=\"middle\" font-size=\"13\">" << detail::escape(spec.xlabel)
     << (spec.log_x ? " (log)" : "") << "</text>\n";
  os << "<text x=\"18\" y=\"" << num(top + ph / 2) << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
     << num(top + ph / 2) << ")\">" << detail::escape(spec.ylabel) << (spec.log_y ? " (log)" : "") << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = detail::kPalette[k % std::size(detail::kPalette)];
    os << "<polyline class=\"series\" data-name=\"" << detail::escape(s.name) << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.8\" points=\"";
    bool first = true;
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      pts.emplace_back(px(s.x[i]), py(s.y[i]));
      os << (first ? "" : " ") << num(pts.back().first) << "," << num(pts.back().second);
      first = false;
    }
    os << "\"/>\n";
    if (pts.size() <= 12) {
      for (const auto& [x, y] : pts) {
        os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 16.0 * static_cast<double>(k) + 8;
    os << "<line x1=\"" << num(left + pw + 10) << "\" y1=\"" << num(ly) << "\" x2=\"" << num(left + pw + 30)
       << "\" y2=\"" << num(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(left + pw + 34) << "\" y=\"" << num(ly + 4) << "\" font-size=\"11\">"
       << detail::escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Every drawn coordinate lies inside the declared viewBox.
inline bool within_viewbox(const std::string& svg) {
  std::smatch m;
  if (!std::regex_search(svg, m, std::regex("viewBox=\"([-0-9.]+) ([-0-9.]+) ([-0-9.]+) ([-0-9.]+)\""))) return false;
  const double vx = std::stod(m[1]), vy = std::stod(m[2]), vw = std::stod(m[3]), vh = std::stod(m[4]);
  auto inside_x = [&](double v) { return v >= vx && v <= vx + vw; };
  auto inside_y = [&](double v) { return v >= vy && v <= vy + vh; };
  const std::regex attr("\\b(x|x1|x2|cx|y|y1|y2|cy)=\"([-0-9.eE+]+)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), attr); it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[1];
    const double v = std::stod((*it)[2]);
    if (name[0] == 'x' || name == "cx" ? !inside_x(v) : !inside_y(v)) return false;
  }
  const std::regex points("points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), points); it != std::sregex_iterator(); ++it) {
    std::istringstream is((*it)[1].str());
    std::string pair;
    while (is >> pair) {
      const auto comma = pair.find(',');
      if (comma == std::string::npos) return false;
      if (!inside_x(std::stod(pair.substr(0, comma))) || !inside_y(std::stod(pair.substr(comma + 1)))) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// CSV

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
  bool has(const std::string& name) const { return column(name) >= 0; }

  const std::string& cell(std::size_t row, const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw ContractError("missing column '" + name + "'");
    return rows.at(row)[static_cast<std::size_t>(c)];
  }

  double number(std::size_t row, const std::string& name) const {
    const std::string& s = cell(row, name);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ContractError("column '" + name + "' row " + std::to_string(row + 1) + ": '" + s + "' is not a number");
    }
  }
};

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline Table parse_csv(const std::string& text, const std::string& what = "csv") {
  Table t;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) {
        throw ContractError(what + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                            std::to_string(cells.size()) + " fields, header has " + std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw ContractError(what + ": empty file");
  return t;
}

inline Table read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

inline std::string markdown_table(const Table& t) {
  std::ostringstream os;
  os << "|";
  for (const auto& h : t.header) os << " " << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) os << "---|";
  os << "\n";
  for (const auto& r : t.rows) {
    os << "|";
    for (const auto& c : r) os << " " << c << " |";
    os << "\n";
  }
  return os.str();
}

}  // namespace symoden::report
