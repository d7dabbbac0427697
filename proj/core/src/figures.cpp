#include "ganguards/figures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ganguards/error.hpp"

namespace ganguards::figures {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* colour(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    std::ostringstream o;
    o.precision(4);
    o << v;
    return o.str();
}

struct Frame {
    double x0, x1, y0, y1;
    bool log_x = false;
    double px(double x) const {
        const double a = log_x ? std::log10(x) : x, lo = log_x ? std::log10(x0) : x0, hi = log_x ? std::log10(x1) : x1;
        return kLeft + (hi > lo ? (a - lo) / (hi - lo) : 0.5) * (kWidth - kLeft - kRight);
    }
    double py(double y) const {
        return kHeight - kBottom - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (kHeight - kTop - kBottom);
    }
};

class Svg {
public:
    Svg() {
        out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
             << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
             << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }
    std::ostringstream& raw() { return out_; }
    void text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12,
              double rotate = 0) {
        out_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" text-anchor=\"" << anchor << "\" font-size=\""
             << size << "\"";
        if (rotate != 0) out_ << " transform=\"rotate(" << rotate << " " << num(x) << " " << num(y) << ")\"";
        out_ << ">" << escape(s) << "</text>\n";
    }
    void line(double x0, double y0, double x1, double y1, const char* stroke, double width = 1,
              const char* dash = nullptr) {
        out_ << "<line x1=\"" << num(x0) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x1) << "\" y2=\"" << num(y1)
             << "\" stroke=\"" << stroke << "\" stroke-width=\"" << width << "\"";
        if (dash) out_ << " stroke-dasharray=\"" << dash << "\"";
        out_ << "/>\n";
    }
    void rect(double x, double y, double w, double h, const char* fill) {
        out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\""
             << num(h) << "\" fill=\"" << fill << "\"/>\n";
    }
    void circle(double x, double y, double r, const char* fill) {
        out_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << r << "\" fill=\"" << fill
             << "\" fill-opacity=\"0.7\"/>\n";
    }
    void save(const fs::path& file) {
        out_ << "</svg>\n";
        if (file.has_parent_path()) fs::create_directories(file.parent_path());
        std::ofstream f(file);
        require(static_cast<bool>(f), "cannot write figure " + file.string());
        f << out_.str();
    }

private:
    std::ostringstream out_;
};

void frame(Svg& svg, const Frame& f, const Axes& axes, bool y_ticks = true) {
    svg.text(kWidth / 2, 22, axes.title, "middle", 14);
    svg.line(kLeft, kHeight - kBottom, kWidth - kRight, kHeight - kBottom, "black");
    svg.line(kLeft, kTop, kLeft, kHeight - kBottom, "black");
    svg.text((kLeft + kWidth - kRight) / 2, kHeight - 15, axes.x_label);
    svg.text(18, (kTop + kHeight - kBottom) / 2, axes.y_label, "middle", 12, -90);
    if (y_ticks)
        for (int t = 0; t <= 5; ++t) {
            const double v = f.y0 + (f.y1 - f.y0) * t / 5.0;
            svg.line(kLeft - 4, f.py(v), kLeft, f.py(v), "black");
            svg.text(kLeft - 7, f.py(v) + 4, num(v), "end", 10);
        }
    if (axes.reference) {
        svg.line(kLeft, f.py(*axes.reference), kWidth - kRight, f.py(*axes.reference), "#444", 1.5, "6,4");
        svg.text(kWidth - kRight + 4, f.py(*axes.reference) + 4,
                 axes.reference_label.empty() ? num(*axes.reference) : axes.reference_label, "start", 10);
    }
}

void legend(Svg& svg, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 10 + 18.0 * static_cast<double>(i);
        svg.rect(kWidth - kRight + 12, y - 9, 10, 10, colour(i));
        svg.text(kWidth - kRight + 27, y, names[i], "start", 11);
    }
}

std::pair<double, double> value_range(const std::vector<Series>& series, const Axes& axes) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            const double e = i < s.errors.size() ? s.errors[i] : 0.0;
            lo = std::min(lo, s.values[i] - e);
            hi = std::max(hi, s.values[i] + e);
        }
    if (axes.reference) {
        lo = std::min(lo, *axes.reference);
        hi = std::max(hi, *axes.reference);
    }
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi == lo) hi = lo + 1;
    return {axes.y_min.value_or(std::min(0.0, lo)), axes.y_max.value_or(hi)};
}

}  // namespace

void bar_chart(const fs::path& file, const std::vector<std::string>& categories, const std::vector<Series>& series,
               const Axes& axes) {
    require(!categories.empty() && !series.empty(), "bar_chart: nothing to draw");
    for (const auto& s : series) require(s.values.size() == categories.size(), "bar_chart: series length mismatch");
    const auto [lo, hi] = value_range(series, axes);
    Frame f{0, 1, lo, hi};
    Svg svg;
    frame(svg, f, axes);
    const double plot_w = kWidth - kLeft - kRight;
    const double group_w = plot_w / static_cast<double>(categories.size());
    const double bar_w = group_w * 0.8 / static_cast<double>(series.size());
    for (std::size_t c = 0; c < categories.size(); ++c) {
        const double gx = kLeft + group_w * static_cast<double>(c) + group_w * 0.1;
        for (std::size_t s = 0; s < series.size(); ++s) {
            const double v = series[s].values[c];
            const double top = f.py(std::max(v, f.y0)), base = f.py(f.y0);
            svg.rect(gx + bar_w * static_cast<double>(s), top, bar_w * 0.95, std::max(0.0, base - top), colour(s));
        }
        svg.text(gx + group_w * 0.4, kHeight - kBottom + 15, categories[c], "middle", 10);
    }
    if (axes.reference)  // keep the threshold visible above the bars
        svg.line(kLeft, f.py(*axes.reference), kWidth - kRight, f.py(*axes.reference), "#444", 1.5, "6,4");
    std::vector<std::string> names;
    for (const auto& s : series) names.push_back(s.name);
    legend(svg, names);
    svg.save(file);
}

void line_chart(const fs::path& file, const std::vector<double>& x, const std::vector<Series>& series,
                const Axes& axes) {
    require(!x.empty() && !series.empty(), "line_chart: nothing to draw");
    for (const auto& s : series) require(s.values.size() == x.size(), "line_chart: series length mismatch");
    if (axes.log_x)
        for (double v : x) require(v > 0, "line_chart: log axis needs positive x");
    const auto [lo, hi] = value_range(series, axes);
    const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
    Frame f{*xmin, *xmax, lo, hi, axes.log_x};
    Svg svg;
    frame(svg, f, axes);
    for (double v : x) {
        svg.line(f.px(v), kHeight - kBottom, f.px(v), kHeight - kBottom + 4, "black");
        svg.text(f.px(v), kHeight - kBottom + 16, num(v), "middle", 10);
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        auto& out = svg.raw();
        out << "<polyline fill=\"none\" stroke=\"" << colour(s) << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < x.size(); ++i) out << num(f.px(x[i])) << "," << num(f.py(series[s].values[i])) << " ";
        out << "\"/>\n";
        for (std::size_t i = 0; i < x.size(); ++i) {
            svg.circle(f.px(x[i]), f.py(series[s].values[i]), 3, colour(s));
            if (i < series[s].errors.size() && series[s].errors[i] > 0) {
                const double e = series[s].errors[i];
                svg.line(f.px(x[i]), f.py(series[s].values[i] - e), f.px(x[i]), f.py(series[s].values[i] + e),
                         colour(s));
            }
        }
    }
    std::vector<std::string> names;
    for (const auto& s : series) names.push_back(s.name);
    legend(svg, names);
    svg.save(file);
}

void scatter(const fs::path& file, const std::vector<Point>& points, const std::vector<std::string>& group_names,
             const Axes& axes) {
    require(!points.empty(), "scatter: nothing to draw");
    double x0 = points[0].x, x1 = x0, y0 = points[0].y, y1 = y0;
    for (const auto& p : points) {
        require(p.group >= 0 && p.group < static_cast<int>(group_names.size()), "scatter: group without a name");
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
    Frame f{x0, x1, y0, y1};
    Svg svg;
    frame(svg, f, axes, false);
    for (const auto& p : points) svg.circle(f.px(p.x), f.py(p.y), 2.5, colour(static_cast<std::size_t>(p.group)));
    legend(svg, group_names);
    svg.save(file);
}

}  // namespace ganguards::figures
