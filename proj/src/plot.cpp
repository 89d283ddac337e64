#include "survnma/plot.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace survnma::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

struct Axis {
    double lo = 0, hi = 1;
    std::vector<double> ticks;
};

Axis nice_axis(double lo, double hi, bool include_zero) {
    if (include_zero) {
        lo = std::min(lo, 0.0);
        hi = std::max(hi, 0.0);
    }
    if (!std::isfinite(lo) || !std::isfinite(hi)) lo = 0, hi = 1;
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (m * mag >= raw) {
            step = m * mag;
            break;
        }
    Axis a;
    a.lo = std::floor(lo / step) * step;
    a.hi = std::ceil(hi / step) * step;
    for (double t = a.lo; t <= a.hi + step * 1e-9; t += step) a.ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    return a;
}

std::string tick_label(double v) {
    auto s = fmt::format("{:.4g}", v);
    return s == "-0" ? "0" : s;
}

std::string header(double w, double h) {
    return fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
                       "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
                       num(w), num(h), num(w), num(h));
}

std::string text(double x, double y, const std::string& s, const std::string& anchor = "start", int size = 12) {
    return fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"{}\" font-size=\"{}\">{}</text>\n", num(x), num(y), anchor, size,
                       escape(s));
}

std::string line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1,
                 const std::string& dash = "") {
    return fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"{}\"{}/>\n", num(x1), num(y1),
                       num(x2), num(y2), stroke, num(width), dash.empty() ? "" : " stroke-dasharray=\"" + dash + "\"");
}

} // namespace

std::string num(double v) {
    if (!std::isfinite(v)) return "0";
    auto s = fmt::format("{:.2f}", v);
    return s == "-0.00" ? "0.00" : s;
}

std::string forest_svg(const ForestSeries& first, const std::optional<ForestSeries>& second, const std::string& title,
                       const std::string& axis_label) {
    const double left = 170, right = 40, top = title.empty() ? 30 : 50, row_h = second ? 44 : 32, bottom = 60;
    const double plot_w = 460;
    const std::size_t rows = first.rows.size();
    const double h = top + row_h * static_cast<double>(std::max<std::size_t>(rows, 1)) + bottom + (second ? 24 : 0);
    const double w = left + plot_w + right;

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    auto scan = [&](const ForestSeries& s) {
        for (const auto& r : s.rows) {
            lo = std::min({lo, r.lower, r.mean});
            hi = std::max({hi, r.upper, r.mean});
        }
    };
    scan(first);
    if (second) scan(*second);
    const Axis axis = nice_axis(lo, hi, true);
    auto X = [&](double v) { return left + (v - axis.lo) / (axis.hi - axis.lo) * plot_w; };

    std::string out = header(w, h);
    if (!title.empty()) out += text(w / 2, 24, title, "middle", 14);
    const double y_axis = top + row_h * static_cast<double>(rows);
    out += line(left, y_axis, left + plot_w, y_axis, "black");
    for (double t : axis.ticks) {
        out += line(X(t), y_axis, X(t), y_axis + 5, "black");
        out += text(X(t), y_axis + 18, tick_label(t), "middle");
    }
    out += text(left + plot_w / 2, y_axis + 36, axis_label, "middle");
    out += line(X(0), top - 8, X(0), y_axis, "#555555", 1, "2,3");

    auto draw = [&](const ForestSeries& s, double offset, bool primary) {
        const std::string colour = primary ? kPalette[0] : kPalette[1];
        for (std::size_t i = 0; i < rows; ++i) {
            const auto& label = first.rows[i].label;
            auto it = std::find_if(s.rows.begin(), s.rows.end(), [&](const Interval& r) { return r.label == label; });
            if (it == s.rows.end()) continue;
            const double y = top + row_h * (static_cast<double>(i) + 0.5) + offset;
            out += line(X(it->lower), y, X(it->upper), y, colour, 1.5, primary ? "" : "5,3");
            if (primary)
                out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"{}\"/>\n", num(X(it->mean) - 4),
                                   num(y - 4), colour);
            else
                out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n", num(X(it->mean)), num(y), colour);
        }
    };
    for (std::size_t i = 0; i < rows; ++i)
        out += text(left - 10, top + row_h * (static_cast<double>(i) + 0.5) + 4, first.rows[i].label, "end");
    const double offset = second ? row_h / 6 : 0;
    draw(first, -offset, true);
    if (second) {
        draw(*second, offset, false);
        const double ly = y_axis + 52;
        out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"8\" height=\"8\" fill=\"{}\"/>\n", num(left), num(ly - 4), kPalette[0]);
        out += line(left + 12, ly, left + 40, ly, kPalette[0], 1.5);
        out += text(left + 46, ly + 4, first.name);
        out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n", num(left + 234), num(ly), kPalette[1]);
        out += line(left + 242, ly, left + 270, ly, kPalette[1], 1.5, "5,3");
        out += text(left + 276, ly + 4, second->name);
    }
    out += "</svg>\n";
    return out;
}

std::string line_chart_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool zero_line) {
    const double left = 70, right = 150, top = 40, bottom = 55, plot_w = 480, plot_h = 300;
    const double w = left + plot_w + right, h = top + plot_h + bottom;
    double ylo = std::numeric_limits<double>::infinity(), yhi = -ylo;
    for (const auto& s : series)
        for (double v : s.values)
            if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
    const Axis ya = nice_axis(ylo, yhi, zero_line);
    const Axis xa = x.empty() ? Axis{} : nice_axis(x.front(), x.back(), false);
    auto X = [&](double v) { return left + (v - xa.lo) / (xa.hi - xa.lo) * plot_w; };
    auto Y = [&](double v) { return top + plot_h - (v - ya.lo) / (ya.hi - ya.lo) * plot_h; };

    std::string out = header(w, h);
    out += text(left + plot_w / 2, 24, title, "middle", 14);
    out += line(left, top + plot_h, left + plot_w, top + plot_h, "black");
    out += line(left, top, left, top + plot_h, "black");
    for (double t : xa.ticks) {
        out += line(X(t), top + plot_h, X(t), top + plot_h + 5, "black");
        out += text(X(t), top + plot_h + 18, tick_label(t), "middle");
    }
    for (double t : ya.ticks) {
        out += line(left - 5, Y(t), left, Y(t), "black");
        out += text(left - 8, Y(t) + 4, tick_label(t), "end");
    }
    if (zero_line && ya.lo < 0 && ya.hi > 0) out += line(left, Y(0), left + plot_w, Y(0), "#555555", 1, "2,3");
    out += text(left + plot_w / 2, h - 12, x_label, "middle");
    out += fmt::format("<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
                       num(top + plot_h / 2), num(top + plot_h / 2), escape(y_label));
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* colour = kPalette[s % std::size(kPalette)];
        std::string pts;
        for (std::size_t i = 0; i < x.size() && i < series[s].values.size(); ++i)
            pts += (pts.empty() ? "" : " ") + num(X(x[i])) + "," + num(Y(series[s].values[i]));
        out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", pts, colour);
        const double ly = top + 14 + 18 * static_cast<double>(s);
        out += line(left + plot_w + 12, ly, left + plot_w + 36, ly, colour, 2);
        out += text(left + plot_w + 42, ly + 4, series[s].name);
    }
    out += "</svg>\n";
    return out;
}

std::string panels_svg(const std::vector<Panel>& panels, const std::string& title) {
    const double pw = 360, ph = 240, margin_l = 60, margin_t = 40, gap = 30, legend = 30;
    const std::size_t cols = 2, rows = (panels.size() + cols - 1) / cols;
    const double w = cols * (margin_l + pw) + gap, h = 40 + rows * (margin_t + ph + 60) + legend;
    std::string out = header(w, h);
    out += text(w / 2, 22, title, "middle", 14);
    for (std::size_t p = 0; p < panels.size(); ++p) {
        const auto& panel = panels[p];
        const double ox = static_cast<double>(p % cols) * (margin_l + pw + gap / 2) + margin_l;
        const double oy = 40 + static_cast<double>(p / cols) * (margin_t + ph + 60) + margin_t;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& s : panel.series)
            for (double v : s.values)
                if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
        const Axis ya = nice_axis(lo, hi, true);
        auto Y = [&](double v) { return oy + ph - (v - ya.lo) / (ya.hi - ya.lo) * ph; };
        const double n = static_cast<double>(std::max<std::size_t>(panel.categories.size(), 1));
        auto X = [&](std::size_t i) { return ox + (static_cast<double>(i) + 0.5) / n * pw; };
        out += text(ox + pw / 2, oy - 10, panel.title, "middle", 13);
        out += line(ox, oy + ph, ox + pw, oy + ph, "black");
        out += line(ox, oy, ox, oy + ph, "black");
        for (double t : ya.ticks) {
            out += line(ox - 4, Y(t), ox, Y(t), "black");
            out += text(ox - 6, Y(t) + 4, tick_label(t), "end", 10);
        }
        if (ya.lo < 0 && ya.hi > 0) out += line(ox, Y(0), ox + pw, Y(0), "#999999", 1, "2,3");
        for (std::size_t i = 0; i < panel.categories.size(); ++i)
            out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"9\" transform=\"rotate(-40 {} {})\">{}</text>\n",
                               num(X(i)), num(oy + ph + 14), num(X(i)), num(oy + ph + 14), escape(panel.categories[i]));
        for (std::size_t s = 0; s < panel.series.size(); ++s) {
            const char* colour = kPalette[s % std::size(kPalette)];
            const double shift = (static_cast<double>(s) - (static_cast<double>(panel.series.size()) - 1) / 2) * 6;
            for (std::size_t i = 0; i < panel.categories.size() && i < panel.series[s].values.size(); ++i) {
                const double v = panel.series[s].values[i];
                if (!std::isfinite(v)) continue;
                out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"{}\"/>\n", num(X(i) + shift), num(Y(v)), colour);
            }
        }
    }
    if (!panels.empty())
        for (std::size_t s = 0; s < panels.front().series.size(); ++s) {
            const double lx = margin_l + 160 * static_cast<double>(s), ly = h - 14;
            out += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n", num(lx), num(ly - 4),
                               kPalette[s % std::size(kPalette)]);
            out += text(lx + 10, ly, panels.front().series[s].name);
        }
    out += "</svg>\n";
    return out;
}

} // namespace survnma::plot
