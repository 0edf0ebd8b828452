#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "hybridckf/errors.hpp"

namespace hybridckf::svg {

// Pixel coordinates with two decimals, locale-free.
inline std::string px(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 2);
  return std::string(buf, res.ptr);
}

// Affine data-to-pixel map (y axes pass pix_lo > pix_hi to flip).
inline double map_coord(double v, double v_lo, double v_hi, double pix_lo, double pix_hi) {
  return pix_lo + (v - v_lo) / (v_hi - v_lo) * (pix_hi - pix_lo);
}

struct Series {
  enum class Kind { line, band, points, hline };
  Kind kind = Kind::line;
  std::vector<double> x, y, y2;  // y2 = band upper edge
  double scalar = 0.0;           // hline level
  std::string color = "#000000";
  double width = 1.5;
  std::string dash;
  double opacity = 1.0;
  double radius = 1.5;
  std::string label;
};

// Single set of axes rendered as a standalone <svg> group. Ranges default to
// the data envelope with 5% padding; logarithmic y uses decade ticks.
class Plot {
 public:
  Plot(std::string title, std::string xlabel, std::string ylabel)
      : title_(std::move(title)), xlabel_(std::move(xlabel)), ylabel_(std::move(ylabel)) {}

  void set_log_y(bool on) { log_y_ = on; }
  void xlim(double lo, double hi) { x_lo_ = lo; x_hi_ = hi; has_xlim_ = true; }
  void ylim(double lo, double hi) { y_lo_ = lo; y_hi_ = hi; has_ylim_ = true; }

  void add_line(std::vector<double> x, std::vector<double> y, std::string color,
                std::string label = "", double width = 1.5, std::string dash = "") {
    Series s;
    s.kind = Series::Kind::line;
    s.x = std::move(x);
    s.y = std::move(y);
    s.color = std::move(color);
    s.label = std::move(label);
    s.width = width;
    s.dash = std::move(dash);
    series_.push_back(std::move(s));
  }

  void add_band(std::vector<double> x, std::vector<double> lo, std::vector<double> hi,
                std::string color, double opacity = 0.25, std::string label = "") {
    Series s;
    s.kind = Series::Kind::band;
    s.x = std::move(x);
    s.y = std::move(lo);
    s.y2 = std::move(hi);
    s.color = std::move(color);
    s.opacity = opacity;
    s.label = std::move(label);
    series_.push_back(std::move(s));
  }

  void add_points(std::vector<double> x, std::vector<double> y, std::string color,
                  double radius = 1.2, std::string label = "") {
    Series s;
    s.kind = Series::Kind::points;
    s.x = std::move(x);
    s.y = std::move(y);
    s.color = std::move(color);
    s.radius = radius;
    s.label = std::move(label);
    series_.push_back(std::move(s));
  }

  void add_hline(double level, std::string color, std::string label = "",
                 std::string dash = "") {
    Series s;
    s.kind = Series::Kind::hline;
    s.scalar = level;
    s.color = std::move(color);
    s.dash = std::move(dash);
    s.label = std::move(label);
    series_.push_back(std::move(s));
  }

  // Renders the plot into an <svg> fragment positioned at (x0, y0).
  std::string render(double x0, double y0, double w, double h) const {
    const double ml = 58, mr = 12, mt = 26, mb = 40;  // margins
    const double ax = x0 + ml, ay = y0 + mt;
    const double aw = w - ml - mr, ah = h - mt - mb;

    double x_lo = x_lo_, x_hi = x_hi_, y_lo = y_lo_, y_hi = y_hi_;
    if (!has_xlim_ || !has_ylim_) {
      double dx_lo = std::numeric_limits<double>::infinity(), dx_hi = -dx_lo;
      double dy_lo = dx_lo, dy_hi = -dx_lo;
      for (const auto& s : series_) {
        if (s.kind == Series::Kind::hline) {
          if (usable_y(s.scalar)) { dy_lo = std::min(dy_lo, s.scalar); dy_hi = std::max(dy_hi, s.scalar); }
          continue;
        }
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!std::isfinite(s.x[i])) continue;
          if (usable_y(s.y[i])) {
            dx_lo = std::min(dx_lo, s.x[i]);
            dx_hi = std::max(dx_hi, s.x[i]);
            dy_lo = std::min(dy_lo, s.y[i]);
            dy_hi = std::max(dy_hi, s.y[i]);
          }
          if (s.kind == Series::Kind::band && usable_y(s.y2[i])) {
            dy_lo = std::min(dy_lo, s.y2[i]);
            dy_hi = std::max(dy_hi, s.y2[i]);
          }
        }
      }
      if (!std::isfinite(dx_lo)) { dx_lo = 0; dx_hi = 1; }
      if (!std::isfinite(dy_lo)) { dy_lo = log_y_ ? 0.1 : 0; dy_hi = 1; }
      if (dx_hi == dx_lo) dx_hi = dx_lo + 1;
      if (dy_hi == dy_lo) dy_hi = dy_lo + (log_y_ ? dy_lo : 1.0);
      if (!has_xlim_) {
        const double pad = 0.02 * (dx_hi - dx_lo);
        x_lo = dx_lo - pad;
        x_hi = dx_hi + pad;
      }
      if (!has_ylim_) {
        if (log_y_) {
          y_lo = dy_lo / 1.5;
          y_hi = dy_hi * 1.5;
        } else {
          const double pad = 0.05 * (dy_hi - dy_lo);
          y_lo = dy_lo - pad;
          y_hi = dy_hi + pad;
        }
      }
    }
    const double ty_lo = ty(y_lo), ty_hi = ty(y_hi);

    std::ostringstream out;
    out << "<g>\n";
    out << "<rect x=\"" << px(ax) << "\" y=\"" << px(ay) << "\" width=\"" << px(aw)
        << "\" height=\"" << px(ah) << "\" fill=\"#ffffff\" stroke=\"#404040\" stroke-width=\"1\"/>\n";

    // ticks and grid
    for (double t : (log_y_ ? decade_ticks(y_lo, y_hi) : nice_ticks(y_lo, y_hi))) {
      const double py = map_coord(ty(t), ty_lo, ty_hi, ay + ah, ay);
      if (py < ay - 0.5 || py > ay + ah + 0.5) continue;
      out << "<line x1=\"" << px(ax) << "\" y1=\"" << px(py) << "\" x2=\"" << px(ax + aw)
          << "\" y2=\"" << px(py) << "\" stroke=\"#e0e0e0\" stroke-width=\"0.7\"/>\n";
      out << "<text x=\"" << px(ax - 5) << "\" y=\"" << px(py + 3)
          << "\" font-size=\"9\" text-anchor=\"end\" font-family=\"sans-serif\">" << tick_label(t)
          << "</text>\n";
    }
    for (double t : nice_ticks(x_lo, x_hi)) {
      const double pxx = map_coord(t, x_lo, x_hi, ax, ax + aw);
      if (pxx < ax - 0.5 || pxx > ax + aw + 0.5) continue;
      out << "<line x1=\"" << px(pxx) << "\" y1=\"" << px(ay) << "\" x2=\"" << px(pxx)
          << "\" y2=\"" << px(ay + ah) << "\" stroke=\"#e0e0e0\" stroke-width=\"0.7\"/>\n";
      out << "<text x=\"" << px(pxx) << "\" y=\"" << px(ay + ah + 14)
          << "\" font-size=\"9\" text-anchor=\"middle\" font-family=\"sans-serif\">" << tick_label(t)
          << "</text>\n";
    }

    const auto map_x = [&](double v) { return map_coord(v, x_lo, x_hi, ax, ax + aw); };
    const auto map_y = [&](double v) { return map_coord(ty(v), ty_lo, ty_hi, ay + ah, ay); };

    for (const auto& s : series_) {
      if (s.kind == Series::Kind::band) {
        out << "<polygon fill=\"" << s.color << "\" fill-opacity=\"" << s.opacity
            << "\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          out << px(map_x(s.x[i])) << ',' << px(map_y(clamp_y(s.y2[i], y_lo, y_hi))) << ' ';
        }
        for (std::size_t i = s.x.size(); i-- > 0;) {
          out << px(map_x(s.x[i])) << ',' << px(map_y(clamp_y(s.y[i], y_lo, y_hi))) << ' ';
        }
        out << "\"/>\n";
      } else if (s.kind == Series::Kind::line) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"" << s.width
            << "\"";
        if (!s.dash.empty()) out << " stroke-dasharray=\"" << s.dash << "\"";
        out << " points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!usable_y(s.y[i])) continue;
          out << px(map_x(s.x[i])) << ',' << px(map_y(clamp_y(s.y[i], y_lo, y_hi))) << ' ';
        }
        out << "\"/>\n";
      } else if (s.kind == Series::Kind::points) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (!usable_y(s.y[i])) continue;
          const double vy = s.y[i];
          if (vy < y_lo || vy > y_hi || s.x[i] < x_lo || s.x[i] > x_hi) continue;
          out << "<circle cx=\"" << px(map_x(s.x[i])) << "\" cy=\"" << px(map_y(vy)) << "\" r=\""
              << s.radius << "\" fill=\"" << s.color << "\" fill-opacity=\"0.55\"/>\n";
        }
      } else {  // hline
        if (usable_y(s.scalar) && s.scalar >= y_lo && s.scalar <= y_hi) {
          out << "<line x1=\"" << px(ax) << "\" y1=\"" << px(map_y(s.scalar)) << "\" x2=\""
              << px(ax + aw) << "\" y2=\"" << px(map_y(s.scalar)) << "\" stroke=\"" << s.color
              << "\" stroke-width=\"1.3\"";
          if (!s.dash.empty()) out << " stroke-dasharray=\"" << s.dash << "\"";
          out << "/>\n";
        }
      }
    }

    // title, axis labels, legend
    out << "<text x=\"" << px(ax + aw / 2) << "\" y=\"" << px(y0 + 14)
        << "\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title_
        << "</text>\n";
    out << "<text x=\"" << px(ax + aw / 2) << "\" y=\"" << px(ay + ah + 30)
        << "\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\">" << xlabel_
        << "</text>\n";
    out << "<text x=\"" << px(x0 + 14) << "\" y=\"" << px(ay + ah / 2)
        << "\" font-size=\"10\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 "
        << px(x0 + 14) << ' ' << px(ay + ah / 2) << ")\">" << ylabel_ << "</text>\n";

    double ly = ay + 12;
    for (const auto& s : series_) {
      if (s.label.empty()) continue;
      out << "<line x1=\"" << px(ax + aw - 86) << "\" y1=\"" << px(ly - 3) << "\" x2=\""
          << px(ax + aw - 70) << "\" y2=\"" << px(ly - 3) << "\" stroke=\"" << s.color
          << "\" stroke-width=\"2.5\"";
      if (!s.dash.empty()) out << " stroke-dasharray=\"" << s.dash << "\"";
      if (s.kind == Series::Kind::band) out << " stroke-opacity=\"" << std::max(0.4, s.opacity) << "\"";
      out << "/>\n";
      out << "<text x=\"" << px(ax + aw - 66) << "\" y=\"" << px(ly)
          << "\" font-size=\"9\" font-family=\"sans-serif\">" << s.label << "</text>\n";
      ly += 12;
    }
    out << "</g>\n";
    return out.str();
  }

 private:
  bool usable_y(double v) const { return std::isfinite(v) && (!log_y_ || v > 0.0); }
  double ty(double v) const { return log_y_ ? std::log10(v) : v; }
  static double clamp_y(double v, double lo, double hi) { return std::clamp(v, lo, hi); }

  static std::vector<double> nice_ticks(double lo, double hi) {
    const double span = hi - lo;
    if (!(span > 0.0) || !std::isfinite(span)) return {};
    const double raw = span / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
      if (raw <= m * mag) {
        step = m * mag;
        break;
      }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) {
      ticks.push_back(std::abs(t) < 1e-12 * span ? 0.0 : t);
    }
    return ticks;
  }

  static std::vector<double> decade_ticks(double lo, double hi) {
    std::vector<double> ticks;
    const int k_lo = static_cast<int>(std::floor(std::log10(lo)));
    const int k_hi = static_cast<int>(std::ceil(std::log10(hi)));
    for (int k = k_lo; k <= k_hi; ++k) {
      const double t = std::pow(10.0, k);
      if (t >= lo && t <= hi) ticks.push_back(t);
    }
    return ticks;
  }

  static std::string tick_label(double v) {
    char buf[32];
    const double a = std::abs(v);
    std::to_chars_result res{};
    if (v != 0.0 && (a >= 1e4 || a < 1e-3)) {
      res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::scientific, 1);
    } else {
      res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 4);
    }
    return std::string(buf, res.ptr);
  }

  std::string title_, xlabel_, ylabel_;
  bool log_y_ = false;
  bool has_xlim_ = false, has_ylim_ = false;
  double x_lo_ = 0, x_hi_ = 1, y_lo_ = 0, y_hi_ = 1;
  std::vector<Series> series_;
};

// Stacks plots into a column (or grid) and writes a standalone SVG file.
class Figure {
 public:
  explicit Figure(int cols = 1) : cols_(cols) {}

  Plot& add(Plot plot) {
    plots_.push_back(std::move(plot));
    return plots_.back();
  }

  void write(const std::filesystem::path& path, double plot_w = 560, double plot_h = 210) const {
    const int n = static_cast<int>(plots_.size());
    const int rows = (n + cols_ - 1) / cols_;
    const double total_w = plot_w * cols_;
    const double total_h = plot_h * rows;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write SVG file: " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << total_w << "\" height=\""
        << total_h << "\" viewBox=\"0 0 " << total_w << ' ' << total_h << "\">\n";
    out << "<rect width=\"" << total_w << "\" height=\"" << total_h << "\" fill=\"#ffffff\"/>\n";
    for (int i = 0; i < n; ++i) {
      const int r = i / cols_, c = i % cols_;
      out << plots_[static_cast<std::size_t>(i)].render(c * plot_w, r * plot_h, plot_w, plot_h);
    }
    out << "</svg>\n";
  }

 private:
  int cols_;
  std::vector<Plot> plots_;
};

}  // namespace hybridckf::svg
