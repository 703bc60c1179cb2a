#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cfmimo/harness.hpp"

namespace cfmimo {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // half-width of the error bar, may be empty
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = true;
  /// Optional tick labels replacing numeric x ticks (same length as ticks).
  std::vector<double> x_ticks;
  std::vector<std::string> x_tick_labels;
  std::vector<Series> series;
};

void render_svg(std::ostream& os, const Figure& fig);

/// Groups a result table into one panel per pilot regime or one series per
/// (equalizer, reuse), picking the x axis from the experiment type.
std::vector<Figure> figures_from_results(const ResultTable& table);

/// Reads a results CSV and writes an SVG with one panel per figure.
void plot_results(const std::filesystem::path& csv, const std::filesystem::path& out);

}  // namespace cfmimo
