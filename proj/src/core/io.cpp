#include "core/io.hpp"

#include <sys/stat.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace displab {

void ensure_parent_dir(const std::string& path) {
  auto slash = path.find_last_of('/');
  if (slash == std::string::npos) return;
  std::string dir = path.substr(0, slash);
  std::string accum;
  std::stringstream ss(dir);
  std::string part;
  if (!dir.empty() && dir[0] == '/') accum = "/";
  while (std::getline(ss, part, '/')) {
    if (part.empty()) continue;
    accum += part;
    if (mkdir(accum.c_str(), 0755) != 0 && errno != EEXIST)
      fail(Err::io, "cannot create directory " + accum + ": " + std::strerror(errno));
    accum += "/";
  }
}

void write_file_atomic(const std::string& path, const std::string& content) {
  ensure_parent_dir(path);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(Err::io, "cannot open " + tmp + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f) fail(Err::io, "write to " + tmp + " failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail(Err::io, "rename " + tmp + " -> " + path + " failed: " + std::strerror(errno));
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Err::io, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void Table::add_row(std::initializer_list<double> vals) {
  require(vals.size() == columns.size(), Err::invalid_argument, "row width does not match columns");
  rows.emplace_back(vals);
}

void write_table_csv(const Table& t, const std::string& path) {
  std::string out;
  for (size_t i = 0; i < t.columns.size(); ++i) {
    if (i) out += ',';
    out += t.columns[i];
  }
  out += '\n';
  for (const auto& r : t.rows) {
    for (size_t i = 0; i < r.size(); ++i) {
      if (i) out += ',';
      out += fmt_double(r[i]);
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

Table read_table_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  Table t;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ls(line);
    std::string cell;
    if (header) {
      while (std::getline(ls, cell, ',')) t.columns.push_back(cell);
      header = false;
      continue;
    }
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    require(row.size() == t.columns.size(), Err::io, "ragged csv row in " + path);
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

double axis_map(double v, bool logscale) {
  if (!logscale) return v;
  return std::log10(std::max(v, 1e-300));
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

}  // namespace

void write_plot_svg(const PlotSpec& p, const std::string& path) {
  const int W = 720, H = 480, ml = 70, mr = 20, mt = 40, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : p.series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      double xv = axis_map(s.x[i], p.logx), yv = axis_map(s.y[i], p.logy);
      if (!std::isfinite(xv) || !std::isfinite(yv)) continue;
      xmin = std::min(xmin, xv);
      xmax = std::max(xmax, xv);
      ymin = std::min(ymin, yv);
      ymax = std::max(ymax, yv);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  auto px = [&](double v) { return ml + (axis_map(v, p.logx) - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto py = [&](double v) { return H - mb - (axis_map(v, p.logy) - ymin) / (ymax - ymin) * (H - mt - mb); };

  static const char* palette[] = {"#1b6ca8", "#c43d3d", "#2b8a3e", "#8a5a00", "#6741a6", "#0b7285"};
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << " " << H << "\">\n";
  s << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  s << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << (W - ml - mr) << "\" height=\"" << (H - mt - mb)
    << "\" fill=\"none\" stroke=\"#444\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
    << svg_escape(p.title) << "</text>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << svg_escape(p.xlabel)
    << "</text>\n";
  s << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
    << "transform=\"rotate(-90 16 " << H / 2 << ")\">" << svg_escape(p.ylabel) << "</text>\n";

  // axis tick labels at the corners keep the plot readable without a full
  // tick layout pass
  auto tick = [&](double vx, double vy, double val, bool isx) {
    s << "<text x=\"" << vx << "\" y=\"" << vy << "\" text-anchor=\"" << (isx ? "middle" : "end")
      << "\" font-size=\"10\" font-family=\"sans-serif\">";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", val);
    s << buf << "</text>\n";
  };
  double x0v = p.logx ? std::pow(10, xmin) : xmin, x1v = p.logx ? std::pow(10, xmax) : xmax;
  double y0v = p.logy ? std::pow(10, ymin) : ymin, y1v = p.logy ? std::pow(10, ymax) : ymax;
  tick(ml, H - mb + 16, x0v, true);
  tick(W - mr, H - mb + 16, x1v, true);
  tick(ml - 6, H - mb, y0v, false);
  tick(ml - 6, mt + 10, y1v, false);

  int ci = 0;
  for (const auto& ser : p.series) {
    const char* col = palette[ci % 6];
    std::ostringstream pts;
    for (size_t i = 0; i < ser.x.size(); ++i) {
      double xv = axis_map(ser.x[i], p.logx), yv = axis_map(ser.y[i], p.logy);
      if (!std::isfinite(xv) || !std::isfinite(yv)) continue;
      pts << px(ser.x[i]) << "," << py(ser.y[i]) << " ";
    }
    s << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\"/>\n";
    s << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 + 14 * ci << "\" font-size=\"11\" font-family=\"sans-serif\" "
      << "fill=\"" << col << "\">" << svg_escape(ser.label) << "</text>\n";
    ++ci;
  }
  s << "</svg>\n";
  write_file_atomic(path, s.str());
}

}  // namespace displab
