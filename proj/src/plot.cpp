#include "geoclr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "geoclr/errors.hpp"

namespace geoclr::plot {

namespace {

constexpr double kWidth = 720;
constexpr double kHeight = 480;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string color(int group) {
  const int n = static_cast<int>(std::size(kPalette));
  if (group < n) return kPalette[group];
  // deterministic hue spread beyond the palette
  char buf[32];
  std::snprintf(buf, sizeof(buf), "hsl(%d,65%%,45%%)", (group * 47) % 360);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;

  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

Frame make_frame(double x0, double x1, double y0, double y1) {
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  return {x0, x1, y0, y1};
}

void open_svg(std::ostringstream& out, const std::string& title, const std::string& x_label,
              const std::string& y_label, const Frame& f, bool x_ticks) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
      << "</text>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(f.py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
        << num(yv) << "</text>\n";
    if (x_ticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
      out << "<text x=\"" << num(f.px(xv)) << "\" y=\"" << kHeight - kBottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\">" << num(xv) << "</text>\n";
    }
  }
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\" font-size=\"13\">"
      << escape(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
      << kHeight / 2 << ")\">" << escape(y_label) << "</text>\n";
}

}  // namespace

std::string scatter_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<ScatterPoint>& points, const std::vector<ScatterPoint>& markers) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto* set : {&points, &markers}) {
    for (const auto& p : *set) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  if (points.empty() && markers.empty()) x0 = y0 = 0.0, x1 = y1 = 1.0;
  const Frame f = make_frame(x0, x1, y0, y1);
  std::ostringstream out;
  open_svg(out, title, x_label, y_label, f, true);
  for (const auto& p : points)
    out << "<circle cx=\"" << num(f.px(p.x)) << "\" cy=\"" << num(f.py(p.y)) << "\" r=\"2.5\" fill=\"" << color(p.group)
        << "\" fill-opacity=\"0.7\"/>\n";
  for (const auto& m : markers) {
    const double cx = f.px(m.x);
    const double cy = f.py(m.y);
    out << "<path d=\"M" << num(cx - 5) << ' ' << num(cy - 5) << " L" << num(cx + 5) << ' ' << num(cy + 5) << " M"
        << num(cx - 5) << ' ' << num(cy + 5) << " L" << num(cx + 5) << ' ' << num(cy - 5)
        << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string histogram_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<std::string>& bins, const std::vector<double>& counts) {
  if (bins.size() != counts.size()) throw ShapeError("histogram needs one count per bin");
  double top = 0.0;
  for (double c : counts) top = std::max(top, c);
  const Frame f = make_frame(0.0, static_cast<double>(std::max<std::size_t>(bins.size(), 1)), 0.0, top);
  std::ostringstream out;
  open_svg(out, title, x_label, y_label, f, false);
  const std::size_t label_every = std::max<std::size_t>(1, bins.size() / 20);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double xa = f.px(static_cast<double>(i) + 0.1);
    const double xb = f.px(static_cast<double>(i) + 0.9);
    const double ya = f.py(counts[i]);
    out << "<rect x=\"" << num(xa) << "\" y=\"" << num(ya) << "\" width=\"" << num(xb - xa) << "\" height=\""
        << num(f.py(0.0) - ya) << "\" fill=\"" << color(0) << "\"/>\n";
    if (i % label_every == 0)
      out << "<text x=\"" << num((xa + xb) / 2) << "\" y=\"" << kHeight - kBottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\">" << escape(bins[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string line_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ShapeError("line series needs matching x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = y0 = 0.0, x1 = y1 = 1.0;
  const Frame f = make_frame(x0, x1, std::min(0.0, y0), y1);
  std::ostringstream out;
  open_svg(out, title, x_label, y_label, f, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    out << "<polyline fill=\"none\" stroke=\"" << color(static_cast<int>(k)) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) out << (i ? " " : "") << num(f.px(s.x[i])) << ',' << num(f.py(s.y[i]));
    out << "\"/>\n";
    out << "<text x=\"" << kWidth - kRight - 4 << "\" y=\"" << kTop + 14 * (k + 1)
        << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << color(static_cast<int>(k)) << "\">" << escape(s.name)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace geoclr::plot
