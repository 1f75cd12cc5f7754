#pragma once

// Static SVG rendering of the CSV artifacts written by evaluation:
//   scatter CSV (x,y,label,split)     -> train and test panels side by side
//   sweep CSV (view,embedding_dim,k,...) -> recall against k, one line per dim
// Output depends only on the CSV bytes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gemini/common.hpp"

namespace gemini::plot {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidInputError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw InvalidInputError("empty CSV");
  t.header = split_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.header.size()) throw InvalidInputError("CSV row has " + std::to_string(cells.size()) +
                                                                 " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInputError("cannot open " + path.string());
  return read_csv(is);
}

namespace detail {

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % (sizeof palette / sizeof *palette)];
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void pad() {
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
  [[nodiscard]] double map(double v, double a, double b) const { return a + (v - lo) / (hi - lo) * (b - a); }
};

inline void header(std::ostream& os, int w, int h) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline void frame(std::ostream& os, double x0, double y0, double x1, double y1) {
  os << "<rect x=\"" << num(x0) << "\" y=\"" << num(y0) << "\" width=\"" << num(x1 - x0) << "\" height=\""
     << num(y1 - y0) << "\" fill=\"none\" stroke=\"black\"/>\n";
}

inline void text(std::ostream& os, double x, double y, const std::string& s, const char* anchor = "middle") {
  os << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\">" << escape(s)
     << "</text>\n";
}

}  // namespace detail

/// Two panels (train, test) sharing axes; one colour per label.
inline void write_scatter_svg(std::ostream& os, const CsvTable& t, const std::string& title) {
  const std::size_t cx = t.column("x"), cy = t.column("y"), cl = t.column("label"), cs = t.column("split");
  std::vector<std::string> labels;
  detail::Range rx{1e300, -1e300}, ry{1e300, -1e300};
  for (const auto& r : t.rows) {
    if (std::find(labels.begin(), labels.end(), r[cl]) == labels.end()) labels.push_back(r[cl]);
    const double x = std::stod(r[cx]), y = std::stod(r[cy]);
    rx.lo = std::min(rx.lo, x);
    rx.hi = std::max(rx.hi, x);
    ry.lo = std::min(ry.lo, y);
    ry.hi = std::max(ry.hi, y);
  }
  if (t.rows.empty()) rx = ry = {0.0, 1.0};
  std::sort(labels.begin(), labels.end());
  rx.pad();
  ry.pad();

  const int panel = 360, margin = 40, legend = 90;
  const int w = 2 * panel + 3 * margin + legend, h = panel + 2 * margin + 20;
  detail::header(os, w, h);
  detail::text(os, w / 2.0, 20, title);
  const char* splits[] = {"train", "test"};
  for (int p = 0; p < 2; ++p) {
    const double x0 = margin + p * (panel + margin), y0 = margin, x1 = x0 + panel, y1 = y0 + panel;
    detail::frame(os, x0, y0, x1, y1);
    detail::text(os, (x0 + x1) / 2, y1 + 18, splits[p]);
    for (const auto& r : t.rows) {
      if (r[cs] != splits[p]) continue;
      const auto li = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), r[cl]) - labels.begin());
      os << "<circle cx=\"" << detail::num(rx.map(std::stod(r[cx]), x0, x1)) << "\" cy=\""
         << detail::num(ry.map(std::stod(r[cy]), y1, y0)) << "\" r=\"2.5\" fill=\"" << detail::color(li)
         << "\" fill-opacity=\"0.7\"/>\n";
    }
  }
  const double lx = 2 * panel + 3 * margin;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double ly = margin + 14.0 + 18.0 * static_cast<double>(i);
    os << "<circle cx=\"" << detail::num(lx) << "\" cy=\"" << detail::num(ly - 4) << "\" r=\"4\" fill=\""
       << detail::color(i) << "\"/>\n";
    detail::text(os, lx + 10, ly, labels[i], "start");
  }
  os << "</svg>\n";
}

/// Recall against k (log axis) for one view, one polyline per embedding dim.
inline void write_recall_svg(std::ostream& os, const CsvTable& t, const std::string& view, const std::string& title) {
  const std::size_t cv = t.column("view"), cd = t.column("embedding_dim"), ck = t.column("k"), cr = t.column("recall");
  std::map<int, std::vector<std::pair<int, double>>> series;
  for (const auto& r : t.rows) {
    if (r[cv] != view) continue;
    series[std::stoi(r[cd])].emplace_back(std::stoi(r[ck]), std::stod(r[cr]));
  }
  detail::Range rx{1e300, -1e300}, ry{0.0, 1.0};
  for (auto& [dim, pts] : series) {
    std::sort(pts.begin(), pts.end());
    for (const auto& [k, v] : pts) {
      rx.lo = std::min(rx.lo, std::log10(static_cast<double>(k)));
      rx.hi = std::max(rx.hi, std::log10(static_cast<double>(k)));
      ry.lo = std::min(ry.lo, v);
    }
  }
  if (series.empty()) rx = {0.0, 1.0};
  rx.pad();
  ry.pad();

  const int pw = 480, ph = 320, margin = 50, legend = 110;
  const int w = pw + 2 * margin + legend, h = ph + 2 * margin + 10;
  detail::header(os, w, h);
  detail::text(os, w / 2.0, 22, title);
  const double x0 = margin, y0 = margin, x1 = margin + pw, y1 = margin + ph;
  detail::frame(os, x0, y0, x1, y1);
  detail::text(os, (x0 + x1) / 2, y1 + 34, "k (log scale)");
  detail::text(os, x0 - 8, y0 + 4, detail::num(ry.hi), "end");
  detail::text(os, x0 - 8, y1, detail::num(ry.lo), "end");
  std::size_t si = 0;
  for (const auto& [dim, pts] : series) {
    os << "<polyline fill=\"none\" stroke=\"" << detail::color(si) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      os << (i ? " " : "") << detail::num(rx.map(std::log10(static_cast<double>(pts[i].first)), x0, x1)) << ','
         << detail::num(ry.map(pts[i].second, y1, y0));
    }
    os << "\"/>\n";
    for (const auto& [k, v] : pts) {
      const double px = rx.map(std::log10(static_cast<double>(k)), x0, x1);
      os << "<circle cx=\"" << detail::num(px) << "\" cy=\"" << detail::num(ry.map(v, y1, y0)) << "\" r=\"3\" fill=\""
         << detail::color(si) << "\"/>\n";
      if (si == 0) detail::text(os, px, y1 + 16, std::to_string(k));
    }
    const double ly = margin + 14.0 + 18.0 * static_cast<double>(si);
    os << "<line x1=\"" << detail::num(x1 + 12) << "\" y1=\"" << detail::num(ly - 4) << "\" x2=\""
       << detail::num(x1 + 28) << "\" y2=\"" << detail::num(ly - 4) << "\" stroke=\"" << detail::color(si)
       << "\" stroke-width=\"2\"/>\n";
    detail::text(os, x1 + 34, ly, "dim " + std::to_string(dim), "start");
    ++si;
  }
  os << "</svg>\n";
}

/// Renders `csv` to `svg`, choosing the plot from the CSV header. Sweep
/// tables with several views produce one plot per view (suffix _<VIEW>).
inline std::vector<std::filesystem::path> render(const std::filesystem::path& csv, const std::filesystem::path& svg) {
  const CsvTable t = read_csv(csv);
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw Error("cannot write " + p.string());
    written.push_back(p);
    return os;
  };
  const auto has = [&](const char* c) { return std::find(t.header.begin(), t.header.end(), c) != t.header.end(); };
  if (has("x") && has("y") && has("label") && has("split")) {
    auto os = open(svg);
    write_scatter_svg(os, t, csv.stem().string());
  } else if (has("view") && has("embedding_dim") && has("k") && has("recall")) {
    std::vector<std::string> views;
    const std::size_t cv = t.column("view");
    for (const auto& r : t.rows) {
      if (std::find(views.begin(), views.end(), r[cv]) == views.end()) views.push_back(r[cv]);
    }
    for (const auto& v : views) {
      auto p = svg;
      if (views.size() > 1) p.replace_filename(svg.stem().string() + "_" + v + svg.extension().string());
      auto os = open(p);
      write_recall_svg(os, t, v, "recall vs k, " + v);
    }
  } else {
    throw InvalidInputError(csv.string() + " is neither a scatter CSV nor a sweep results CSV");
  }
  return written;
}

}  // namespace gemini::plot
