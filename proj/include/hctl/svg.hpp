#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace hctl {

// Dependency-free SVG primitives, enough for scatter clouds, line charts,
// and grayscale heatmaps.
class SvgWriter {
  public:
    SvgWriter(double width, double height);

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& stroke = "none", double stroke_width = 0.0);
    void circle(double cx, double cy, double r, const std::string& fill);
    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double stroke_width = 1.0, const std::string& dash = "");
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke,
                  double stroke_width = 1.5);
    void text(double x, double y, const std::string& content, double font_size = 12.0,
              const std::string& anchor = "start");

    std::string str() const;
    void save(const std::string& path) const;

  private:
    double width_, height_;
    std::string body_;
};

// Data-space scatter plot with optional outlined squares and a vertical line.
struct ScatterSpec {
    std::string title;
    double x_min = -2.5, x_max = 2.5;
    double y_min = -2.5, y_max = 2.5;
    std::vector<std::pair<double, double>> outlined_squares;  // lower-left corners, unit side
    double vline = std::nan("");
    std::string point_color = "#1f6fb2";
};

void write_scatter_svg(const std::string& path, const Eigen::Matrix2Xd& points,
                       const ScatterSpec& spec);

// Grayscale heatmap; 0 -> white, 1 -> black, per-cell squares.
void write_heatmap_svg(const std::string& path, const Eigen::MatrixXd& values,
                       const std::string& title);

// Simple multi-series line chart.
struct LineSeries {
    std::string label;
    std::string color = "#1f6fb2";
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> err;  // optional, drawn as whiskers
};

void write_linechart_svg(const std::string& path, const std::vector<LineSeries>& series,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label, bool log_x = false);

}  // namespace hctl
