#pragma once

#include <string>
#include <vector>

#include "core/common.hpp"

namespace displab {

// Writes to path via a sibling temp file plus rename, so readers never see a
// partial file and reruns are byte-identical.
void write_file_atomic(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// %.17g round-trips doubles exactly; every numeric output goes through this.
std::string fmt_double(double v);

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  void add_row(std::initializer_list<double> vals);
};

void write_table_csv(const Table& t, const std::string& path);
Table read_table_csv(const std::string& path);

void ensure_parent_dir(const std::string& path);

// Minimal line plot: each series is sampled at the shared x values. Written as
// a standalone SVG so results can be inspected without extra tooling.
struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title, xlabel, ylabel;
  bool logx = false, logy = false;
  std::vector<PlotSeries> series;
};

void write_plot_svg(const PlotSpec& p, const std::string& path);

}  // namespace displab
