#include "hctl/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hctl/errors.hpp"

namespace hctl {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

SvgWriter::SvgWriter(double width, double height) : width_(width), height_(height) {}

void SvgWriter::rect(double x, double y, double w, double h, const std::string& fill,
                     const std::string& stroke, double stroke_width) {
    body_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" +
             fmt(h) + "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
             fmt(stroke_width) + "\"/>\n";
}

void SvgWriter::circle(double cx, double cy, double r, const std::string& fill) {
    body_ += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) + "\" r=\"" + fmt(r) + "\" fill=\"" +
             fill + "\"/>\n";
}

void SvgWriter::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                     double stroke_width, const std::string& dash) {
    body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) + "\" y2=\"" +
             fmt(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + fmt(stroke_width) + "\"";
    if (!dash.empty()) body_ += " stroke-dasharray=\"" + dash + "\"";
    body_ += "/>\n";
}

void SvgWriter::polyline(const std::vector<std::pair<double, double>>& pts,
                         const std::string& stroke, double stroke_width) {
    body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
             fmt(stroke_width) + "\" points=\"";
    for (const auto& [x, y] : pts) body_ += fmt(x) + "," + fmt(y) + " ";
    body_ += "\"/>\n";
}

void SvgWriter::text(double x, double y, const std::string& content, double font_size,
                     const std::string& anchor) {
    body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-size=\"" + fmt(font_size) +
             "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" + escape(content) +
             "</text>\n";
}

std::string SvgWriter::str() const {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width_) + "\" height=\"" +
           fmt(height_) + "\" viewBox=\"0 0 " + fmt(width_) + " " + fmt(height_) + "\">\n" + body_ +
           "</svg>\n";
}

void SvgWriter::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("SvgWriter: cannot open " + path);
    os << str();
    if (!os) throw IoError("SvgWriter: write failed for " + path);
}

void write_scatter_svg(const std::string& path, const Eigen::Matrix2Xd& points,
                       const ScatterSpec& spec) {
    const double size = 480.0, margin = 40.0;
    SvgWriter svg(size, size);
    const double span_x = spec.x_max - spec.x_min;
    const double span_y = spec.y_max - spec.y_min;
    auto px = [&](double x) { return margin + (x - spec.x_min) / span_x * (size - 2 * margin); };
    auto py = [&](double y) { return size - margin - (y - spec.y_min) / span_y * (size - 2 * margin); };

    svg.rect(margin, margin, size - 2 * margin, size - 2 * margin, "white", "#333", 1.0);
    for (const auto& [sx, sy] : spec.outlined_squares) {
        svg.rect(px(sx), py(sy + 1.0), px(sx + 1.0) - px(sx), py(sy) - py(sy + 1.0), "none", "#777",
                 1.0);
    }
    if (std::isfinite(spec.vline))
        svg.line(px(spec.vline), margin, px(spec.vline), size - margin, "#c0392b", 1.0, "4,3");
    for (Eigen::Index k = 0; k < points.cols(); ++k) {
        const double x = points(0, k), y = points(1, k);
        if (x < spec.x_min || x > spec.x_max || y < spec.y_min || y > spec.y_max) continue;
        svg.circle(px(x), py(y), 1.4, spec.point_color);
    }
    svg.text(size / 2, margin - 10, spec.title, 14, "middle");
    svg.save(path);
}

void write_heatmap_svg(const std::string& path, const Eigen::MatrixXd& values,
                       const std::string& title) {
    const int n = static_cast<int>(values.rows());
    const int m = static_cast<int>(values.cols());
    const double cell = std::max(12.0, 240.0 / std::max(n, m));
    const double margin = 30.0;
    SvgWriter svg(margin * 2 + cell * m, margin * 2 + cell * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            const double v = std::clamp(values(i, j), 0.0, 1.0);
            const int gray = static_cast<int>(std::lround(255.0 * (1.0 - v)));
            char color[8];
            std::snprintf(color, sizeof(color), "#%02x%02x%02x", gray, gray, gray);
            svg.rect(margin + j * cell, margin + i * cell, cell, cell, color, "#ccc", 0.4);
        }
    svg.text(margin, margin - 8, title, 13);
    svg.save(path);
}

void write_linechart_svg(const std::string& path, const std::vector<LineSeries>& series,
                         const std::string& title, const std::string& x_label,
                         const std::string& y_label, bool log_x) {
    const double width = 560.0, height = 400.0, margin = 56.0;
    double x_min = 1e300, x_max = -1e300, y_min = 1e300, y_max = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = log_x ? std::log10(std::max(s.x[i], 1e-12)) : s.x[i];
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            const double e = s.err.size() == s.y.size() ? s.err[i] : 0.0;
            y_min = std::min(y_min, s.y[i] - e);
            y_max = std::max(y_max, s.y[i] + e);
        }
    if (!(x_max > x_min)) x_max = x_min + 1.0;
    if (!(y_max > y_min)) y_max = y_min + 1.0;
    const double pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    SvgWriter svg(width, height);
    auto px = [&](double x) {
        const double v = log_x ? std::log10(std::max(x, 1e-12)) : x;
        return margin + (v - x_min) / (x_max - x_min) * (width - 2 * margin);
    };
    auto py = [&](double y) { return height - margin - (y - y_min) / (y_max - y_min) * (height - 2 * margin); };

    svg.rect(margin, margin, width - 2 * margin, height - 2 * margin, "white", "#333", 1.0);
    double legend_y = margin + 16;
    for (const auto& s : series) {
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            pts.emplace_back(px(s.x[i]), py(s.y[i]));
            if (s.err.size() == s.y.size() && s.err[i] > 0) {
                svg.line(px(s.x[i]), py(s.y[i] - s.err[i]), px(s.x[i]), py(s.y[i] + s.err[i]),
                         s.color, 1.0);
            }
        }
        svg.polyline(pts, s.color);
        for (const auto& [x, y] : pts) svg.circle(x, y, 2.5, s.color);
        svg.line(width - margin - 120, legend_y - 4, width - margin - 100, legend_y - 4, s.color, 2.0);
        svg.text(width - margin - 94, legend_y, s.label, 11);
        legend_y += 16;
    }
    svg.text(width / 2, margin - 14, title, 14, "middle");
    svg.text(width / 2, height - 12, x_label, 12, "middle");
    svg.text(14, height / 2, y_label, 12, "middle");
    svg.save(path);
}

}  // namespace hctl
