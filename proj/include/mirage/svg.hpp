#ifndef MIRAGE_SVG_HPP
#define MIRAGE_SVG_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace mirage {

// Minimal deterministic SVG charts. Numbers are printed with fixed precision
// so regenerated reports are byte-identical.

namespace svg_detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f",
                                    "#956cb4", "#8c613c", "#dc7ec0", "#797979"};

}  // namespace svg_detail

struct ChartSeries {
    std::string label;
    std::vector<double> values;  // one per category (bar) or per x point (line)
};

struct ChartSpec {
    std::string title;
    std::string y_label;
    std::vector<std::string> x_labels;
    std::vector<ChartSeries> series;
    double y_min = 0.0;
    double y_max = 100.0;
    std::vector<double> hlines;  // reference lines (e.g. a baseline accuracy)
    std::string hline_label;
};

namespace svg_detail {

struct Frame {
    double left = 70, right = 20, top = 40, bottom = 60;
    double width = 760, height = 420;
    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
};

inline std::string chart_header(const ChartSpec& spec, const Frame& f) {
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(f.width) + "\" height=\"" +
           num(f.height) + "\" viewBox=\"0 0 " + num(f.width) + " " + num(f.height) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(f.width / 2) + "\" y=\"24\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"15\" font-weight=\"bold\">" +
           escape(spec.title) + "</text>\n";
    // y axis with 5 ticks
    for (int t = 0; t <= 5; ++t) {
        const double frac = t / 5.0;
        const double value = spec.y_min + (spec.y_max - spec.y_min) * frac;
        const double y = f.top + f.plot_h() * (1.0 - frac);
        out += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(y) + "\" x2=\"" +
               num(f.width - f.right) + "\" y2=\"" + num(y) +
               "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out += "<text x=\"" + num(f.left - 8) + "\" y=\"" + num(y + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(value) +
               "</text>\n";
    }
    out += "<text transform=\"translate(16," + num(f.top + f.plot_h() / 2) +
           ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           escape(spec.y_label) + "</text>\n";
    for (std::size_t h = 0; h < spec.hlines.size(); ++h) {
        const double frac = (spec.hlines[h] - spec.y_min) / (spec.y_max - spec.y_min);
        const double y = f.top + f.plot_h() * (1.0 - frac);
        out += "<line x1=\"" + num(f.left) + "\" y1=\"" + num(y) + "\" x2=\"" +
               num(f.width - f.right) + "\" y2=\"" + num(y) +
               "\" stroke=\"#888888\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"/>\n";
        if (!spec.hline_label.empty() && h == 0) {
            out += "<text x=\"" + num(f.width - f.right - 4) + "\" y=\"" + num(y - 5) +
                   "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" "
                   "fill=\"#555555\">" +
                   escape(spec.hline_label) + "</text>\n";
        }
    }
    return out;
}

inline std::string chart_legend(const ChartSpec& spec, const Frame& f) {
    std::string out;
    double x = f.left;
    const double y = f.height - 14;
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const char* color = kPalette[s % 8];
        out += "<rect x=\"" + num(x) + "\" y=\"" + num(y - 9) +
               "\" width=\"12\" height=\"12\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + num(x + 16) + "\" y=\"" + num(y + 1) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + escape(spec.series[s].label) +
               "</text>\n";
        x += 24 + 7.0 * static_cast<double>(spec.series[s].label.size());
    }
    return out;
}

}  // namespace svg_detail

inline std::string bar_chart_svg(const ChartSpec& spec) {
    using namespace svg_detail;
    Frame f;
    std::string out = chart_header(spec, f);
    const std::size_t groups = spec.x_labels.size();
    const std::size_t per_group = spec.series.size();
    const double group_w = f.plot_w() / static_cast<double>(std::max<std::size_t>(groups, 1));
    const double bar_w = group_w * 0.7 / static_cast<double>(std::max<std::size_t>(per_group, 1));
    for (std::size_t g = 0; g < groups; ++g) {
        const double gx = f.left + group_w * static_cast<double>(g);
        for (std::size_t s = 0; s < per_group; ++s) {
            if (g >= spec.series[s].values.size()) continue;
            const double value = spec.series[s].values[g];
            double frac = (value - spec.y_min) / (spec.y_max - spec.y_min);
            frac = std::clamp(frac, 0.0, 1.0);
            const double h = f.plot_h() * frac;
            const double x = gx + group_w * 0.15 + bar_w * static_cast<double>(s);
            const double y = f.top + f.plot_h() - h;
            out += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(bar_w * 0.92) +
                   "\" height=\"" + num(h) + "\" fill=\"" + kPalette[s % 8] + "\"/>\n";
            out += "<text x=\"" + num(x + bar_w * 0.46) + "\" y=\"" + num(y - 3) +
                   "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">" +
                   num(value) + "</text>\n";
        }
        out += "<text x=\"" + num(gx + group_w / 2) + "\" y=\"" +
               num(f.top + f.plot_h() + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               escape(spec.x_labels[g]) + "</text>\n";
    }
    out += chart_legend(spec, f);
    out += "</svg>\n";
    return out;
}

inline std::string line_chart_svg(const ChartSpec& spec) {
    using namespace svg_detail;
    Frame f;
    std::string out = chart_header(spec, f);
    const std::size_t points = spec.x_labels.size();
    const double step = points > 1 ? f.plot_w() / static_cast<double>(points - 1) : 0.0;
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const char* color = kPalette[s % 8];
        std::string path;
        for (std::size_t i = 0; i < points && i < spec.series[s].values.size(); ++i) {
            const double value = spec.series[s].values[i];
            double frac = (value - spec.y_min) / (spec.y_max - spec.y_min);
            frac = std::clamp(frac, 0.0, 1.0);
            const double x = f.left + step * static_cast<double>(i);
            const double y = f.top + f.plot_h() * (1.0 - frac);
            path += (i == 0 ? "M" : " L") + num(x) + " " + num(y);
            out += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"3\" fill=\"" + color +
                   "\"/>\n";
        }
        out += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + std::string(color) +
               "\" stroke-width=\"2\"/>\n";
    }
    for (std::size_t i = 0; i < points; ++i) {
        const double x = f.left + step * static_cast<double>(i);
        out += "<text x=\"" + num(x) + "\" y=\"" + num(f.top + f.plot_h() + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               escape(spec.x_labels[i]) + "</text>\n";
    }
    out += chart_legend(spec, f);
    out += "</svg>\n";
    return out;
}

}  // namespace mirage

#endif  // MIRAGE_SVG_HPP
