#pragma once

// Minimal SVG charts. Figures are views over numbers that are persisted
// elsewhere; nothing here is a source of truth.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ganguards::figures {

struct Series {
    std::string name;
    std::vector<double> values;
    /// Optional symmetric error bars (same length as values).
    std::vector<double> errors;
};

struct Axes {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::optional<double> y_min, y_max;
    /// Dashed horizontal reference line, e.g. the decision threshold.
    std::optional<double> reference;
    std::string reference_label;
    bool log_x = false;
};

/// Grouped bars: one group per category, one bar per series.
void bar_chart(const std::filesystem::path& file, const std::vector<std::string>& categories,
               const std::vector<Series>& series, const Axes& axes);

void line_chart(const std::filesystem::path& file, const std::vector<double>& x, const std::vector<Series>& series,
                const Axes& axes);

struct Point {
    double x = 0.0, y = 0.0;
    int group = 0;
};

void scatter(const std::filesystem::path& file, const std::vector<Point>& points,
             const std::vector<std::string>& group_names, const Axes& axes);

}  // namespace ganguards::figures
