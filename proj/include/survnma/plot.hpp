#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace survnma::plot {

struct Interval {
    std::string label;
    double mean = 0;
    double lower = 0;
    double upper = 0;
};

struct ForestSeries {
    std::string name;
    std::vector<Interval> rows;
};

/// One row per label of `first`. The first series is drawn with rectangles and solid whiskers,
/// the optional second with circles and dashed whiskers, offset vertically. Output is a pure
/// function of the input.
std::string forest_svg(const ForestSeries& first, const std::optional<ForestSeries>& second = std::nullopt,
                       const std::string& title = "", const std::string& axis_label = "Life years gained");

struct Series {
    std::string name;
    std::vector<double> values;
};

/// Polyline chart over a shared x grid (CEAC, EIB).
std::string line_chart_svg(const std::vector<double>& x, const std::vector<Series>& series, const std::string& title,
                           const std::string& x_label, const std::string& y_label, bool zero_line = false);

struct Panel {
    std::string title;
    std::vector<std::string> categories;
    std::vector<Series> series; // one value per category
};

/// Grid of dot-plot panels sharing a legend (two columns).
std::string panels_svg(const std::vector<Panel>& panels, const std::string& title);

/// Fixed-precision number formatting used in every SVG coordinate.
std::string num(double v);

} // namespace survnma::plot
