#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcformer/common.hpp"

namespace dcformer {

// Hand-rolled SVG charts: line, scatter and histogram figures with fixed
// layout and formatting, so identical inputs produce identical bytes.

namespace svg {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 62;
constexpr int kMarginRight = 24;
constexpr int kMarginTop = 38;
constexpr int kMarginBottom = 52;

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[i % 10];
}

inline std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

inline std::string coord(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct AxisRange {
    double lo = 0.0, hi = 1.0;
    void expand(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    static AxisRange of(const std::vector<double>& values) {
        AxisRange r{std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity()};
        for (double v : values) {
            r.lo = std::min(r.lo, v);
            r.hi = std::max(r.hi, v);
        }
        if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) r = {0.0, 1.0};
        if (r.hi - r.lo < 1e-12) {
            r.lo -= 0.5;
            r.hi += 0.5;
        }
        return r;
    }
};

struct Mapper {
    AxisRange x, y;
    double px(double v) const {
        return kMarginLeft + (v - x.lo) / (x.hi - x.lo) * (kWidth - kMarginLeft - kMarginRight);
    }
    double py(double v) const {
        return kHeight - kMarginBottom -
               (v - y.lo) / (y.hi - y.lo) * (kHeight - kMarginTop - kMarginBottom);
    }
};

inline void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    os << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"15\">"
       << title << "</text>\n";
}

inline void axes(std::ostringstream& os, const Mapper& m, const std::string& xlabel,
                 const std::string& ylabel) {
    const double x0 = kMarginLeft, x1 = kWidth - kMarginRight;
    const double y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 5; ++t) {
        const double fx = m.x.lo + (m.x.hi - m.x.lo) * t / 5.0;
        const double fy = m.y.lo + (m.y.hi - m.y.lo) * t / 5.0;
        const double px = m.px(fx), py = m.py(fy);
        os << "<line x1=\"" << coord(px) << "\" y1=\"" << y0 << "\" x2=\"" << coord(px)
           << "\" y2=\"" << y0 + 4 << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << coord(px) << "\" y=\"" << y0 + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(fx)
           << "</text>\n";
        os << "<line x1=\"" << x0 - 4 << "\" y1=\"" << coord(py) << "\" x2=\"" << x0
           << "\" y2=\"" << coord(py) << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << x0 - 8 << "\" y=\"" << coord(py + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(fy)
           << "</text>\n";
    }
    os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (y0 + y1) / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
       << (y0 + y1) / 2 << ")\">" << ylabel << "</text>\n";
}

inline void legend(std::ostringstream& os, const std::vector<std::string>& labels) {
    const double x = kWidth - kMarginRight - 150;
    double y = kMarginTop + 8;
    for (std::size_t i = 0; i < labels.size(); ++i, y += 16) {
        os << "<rect x=\"" << x << "\" y=\"" << coord(y - 9) << "\" width=\"10\" height=\"10\" fill=\""
           << palette(i) << "\"/>\n";
        os << "<text x=\"" << x + 14 << "\" y=\"" << coord(y)
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << labels[i] << "</text>\n";
    }
}

}  // namespace svg

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

inline std::string line_chart_svg(const std::string& title, const std::string& xlabel,
                                  const std::string& ylabel,
                                  const std::vector<SvgSeries>& series) {
    require(!series.empty(), "line_chart_svg: no series");
    std::vector<double> xs, ys;
    for (const auto& s : series) {
        require(s.x.size() == s.y.size(), "line_chart_svg: x/y length mismatch in " + s.label);
        xs.insert(xs.end(), s.x.begin(), s.x.end());
        ys.insert(ys.end(), s.y.begin(), s.y.end());
    }
    require(!xs.empty(), "line_chart_svg: empty series data");
    svg::Mapper m{svg::AxisRange::of(xs), svg::AxisRange::of(ys)};
    std::ostringstream os;
    svg::header(os, title);
    svg::axes(os, m, xlabel, ylabel);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < series.size(); ++i) {
        labels.push_back(series[i].label);
        os << "<polyline fill=\"none\" stroke=\"" << svg::palette(i) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < series[i].x.size(); ++k) {
            if (k) os << ' ';
            os << svg::coord(m.px(series[i].x[k])) << ',' << svg::coord(m.py(series[i].y[k]));
        }
        os << "\"/>\n";
    }
    svg::legend(os, labels);
    os << "</svg>\n";
    return os.str();
}

struct SvgScatterGroup {
    std::string label;
    std::size_t color_index = 0;
    int marker = 0;  // 0 = circle, 1 = diamond, 2 = square, 3 = triangle
    std::vector<double> x, y;
};

inline std::string scatter_chart_svg(const std::string& title, const std::string& xlabel,
                                     const std::string& ylabel,
                                     const std::vector<SvgScatterGroup>& groups,
                                     bool show_legend = true) {
    require(!groups.empty(), "scatter_chart_svg: no groups");
    std::vector<double> xs, ys;
    for (const auto& g : groups) {
        xs.insert(xs.end(), g.x.begin(), g.x.end());
        ys.insert(ys.end(), g.y.begin(), g.y.end());
    }
    require(!xs.empty(), "scatter_chart_svg: empty scatter data");
    svg::Mapper m{svg::AxisRange::of(xs), svg::AxisRange::of(ys)};
    std::ostringstream os;
    svg::header(os, title);
    svg::axes(os, m, xlabel, ylabel);
    std::vector<std::string> labels;
    for (const auto& g : groups) {
        if (show_legend && !g.label.empty()) labels.push_back(g.label);
        const char* color = svg::palette(g.color_index);
        for (std::size_t k = 0; k < g.x.size(); ++k) {
            const double px = m.px(g.x[k]), py = m.py(g.y[k]);
            switch (g.marker) {
                case 1:
                    os << "<rect x=\"" << svg::coord(px - 3) << "\" y=\"" << svg::coord(py - 3)
                       << "\" width=\"6\" height=\"6\" transform=\"rotate(45 " << svg::coord(px)
                       << ' ' << svg::coord(py) << ")\" fill=\"" << color << "\"/>\n";
                    break;
                case 2:
                    os << "<rect x=\"" << svg::coord(px - 2.6) << "\" y=\"" << svg::coord(py - 2.6)
                       << "\" width=\"5.2\" height=\"5.2\" fill=\"" << color << "\"/>\n";
                    break;
                case 3:
                    os << "<polygon points=\"" << svg::coord(px) << ',' << svg::coord(py - 3.4)
                       << ' ' << svg::coord(px - 3.0) << ',' << svg::coord(py + 2.6) << ' '
                       << svg::coord(px + 3.0) << ',' << svg::coord(py + 2.6) << "\" fill=\""
                       << color << "\"/>\n";
                    break;
                default:
                    os << "<circle cx=\"" << svg::coord(px) << "\" cy=\"" << svg::coord(py)
                       << "\" r=\"2.6\" fill=\"" << color << "\"/>\n";
            }
        }
    }
    if (show_legend) svg::legend(os, labels);
    os << "</svg>\n";
    return os.str();
}

// Two overlaid count series on shared bin edges.
inline std::string histogram_svg(const std::string& title, const std::string& xlabel,
                                 const std::vector<double>& bin_edges,
                                 const std::vector<std::size_t>& counts_a,
                                 const std::string& label_a,
                                 const std::vector<std::size_t>& counts_b,
                                 const std::string& label_b) {
    require(bin_edges.size() >= 2 && counts_a.size() + 1 == bin_edges.size() &&
                counts_b.size() + 1 == bin_edges.size(),
            "histogram_svg: bins/counts mismatch");
    double max_count = 1.0;
    for (std::size_t c : counts_a) max_count = std::max(max_count, static_cast<double>(c));
    for (std::size_t c : counts_b) max_count = std::max(max_count, static_cast<double>(c));
    svg::Mapper m{{bin_edges.front(), bin_edges.back()}, {0.0, max_count}};
    std::ostringstream os;
    svg::header(os, title);
    svg::axes(os, m, xlabel, "count");
    const double base = m.py(0.0);
    for (std::size_t b = 0; b < counts_a.size(); ++b) {
        const double x0 = m.px(bin_edges[b]), x1 = m.px(bin_edges[b + 1]);
        if (counts_a[b]) {
            const double top = m.py(static_cast<double>(counts_a[b]));
            os << "<rect x=\"" << svg::coord(x0) << "\" y=\"" << svg::coord(top) << "\" width=\""
               << svg::coord(x1 - x0) << "\" height=\"" << svg::coord(base - top) << "\" fill=\""
               << svg::palette(0) << "\" fill-opacity=\"0.55\"/>\n";
        }
        if (counts_b[b]) {
            const double top = m.py(static_cast<double>(counts_b[b]));
            os << "<rect x=\"" << svg::coord(x0) << "\" y=\"" << svg::coord(top) << "\" width=\""
               << svg::coord(x1 - x0) << "\" height=\"" << svg::coord(base - top) << "\" fill=\""
               << svg::palette(1) << "\" fill-opacity=\"0.55\"/>\n";
        }
    }
    svg::legend(os, {label_a, label_b});
    os << "</svg>\n";
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write file: " + path);
    os << content;
    if (!os.good()) throw IoError("failed writing file: " + path);
}

}  // namespace dcformer
