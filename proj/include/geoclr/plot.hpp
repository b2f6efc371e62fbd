#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace geoclr::plot {

struct ScatterPoint {
  double x = 0.0;
  double y = 0.0;
  int group = 0;
};

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static SVG documents. Output depends only on the inputs (no timestamps),
/// so re-running a command reproduces the files byte for byte.
std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<ScatterPoint>& points, const std::vector<ScatterPoint>& markers);
std::string histogram_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::string>& bins, const std::vector<double>& counts);
std::string line_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace geoclr::plot
