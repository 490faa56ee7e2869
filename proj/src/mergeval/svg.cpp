#include "mergeval/svg.hpp"

#include <algorithm>
#include <cmath>

#include "mergeval/io.hpp"

namespace mergeval::svg {

namespace {

constexpr double kWidth = 800, kHeight = 500;
constexpr double kPlotX0 = 70, kPlotX1 = 630;
constexpr double kPlotY0 = 45, kPlotY1 = 450;

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string esc(const std::string& s) {
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

// pixel coordinates get a fixed two-decimal format
std::string px(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct LinearScale {
    double domain_min = 0.0, domain_max = 1.0;
    double range_min = 0.0, range_max = 1.0;

    double operator()(double v) const {
        const double span = domain_max - domain_min;
        const double t = span != 0.0 ? (v - domain_min) / span : 0.5;
        return range_min + t * (range_max - range_min);
    }
};

LinearScale make_x_scale(double lo, double hi) {
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    return {lo, hi, kPlotX0, kPlotX1};
}

LinearScale make_y_scale(double lo, double hi) {
    // rates/accuracies get the full unit interval for comparability
    if (lo >= 0.0 && hi <= 1.0 + 1e-12) {
        lo = 0.0;
        hi = 1.0;
    } else {
        if (lo > 0.0) lo = 0.0;
        if (lo == hi) hi = lo + 1.0;
        hi += (hi - lo) * 0.05;
    }
    return {lo, hi, kPlotY1, kPlotY0};  // inverted: SVG y grows downward
}

void open_svg(std::string& out, const std::string& title) {
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 500\" "
           "font-family=\"sans-serif\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"800\" height=\"500\" fill=\"#ffffff\"/>\n";
    out += "<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + esc(title) +
           "</text>\n";
}

void draw_frame(std::string& out, const LinearScale& xs, const LinearScale& ys,
                const std::string& x_label, const std::string& y_label, bool x_ticks) {
    out += "<line x1=\"" + px(kPlotX0) + "\" y1=\"" + px(kPlotY1) + "\" x2=\"" + px(kPlotX1) +
           "\" y2=\"" + px(kPlotY1) + "\" stroke=\"#333333\"/>\n";
    out += "<line x1=\"" + px(kPlotX0) + "\" y1=\"" + px(kPlotY0) + "\" x2=\"" + px(kPlotX0) +
           "\" y2=\"" + px(kPlotY1) + "\" stroke=\"#333333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double ty = ys.domain_min + (ys.domain_max - ys.domain_min) * i / 4.0;
        const double y = ys(ty);
        out += "<line x1=\"" + px(kPlotX0 - 4) + "\" y1=\"" + px(y) + "\" x2=\"" + px(kPlotX0) +
               "\" y2=\"" + px(y) + "\" stroke=\"#333333\"/>\n";
        out += "<text x=\"" + px(kPlotX0 - 8) + "\" y=\"" + px(y + 4) +
               "\" text-anchor=\"end\" font-size=\"11\">" + fmt_num(ty) + "</text>\n";
        if (x_ticks) {
            const double tx = xs.domain_min + (xs.domain_max - xs.domain_min) * i / 4.0;
            const double x = xs(tx);
            out += "<line x1=\"" + px(x) + "\" y1=\"" + px(kPlotY1) + "\" x2=\"" + px(x) +
                   "\" y2=\"" + px(kPlotY1 + 4) + "\" stroke=\"#333333\"/>\n";
            out += "<text x=\"" + px(x) + "\" y=\"" + px(kPlotY1 + 18) +
                   "\" text-anchor=\"middle\" font-size=\"11\">" + fmt_num(tx) + "</text>\n";
        }
    }
    out += "<text x=\"" + px((kPlotX0 + kPlotX1) / 2) + "\" y=\"" + px(kHeight - 10) +
           "\" text-anchor=\"middle\" font-size=\"13\">" + esc(x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + px((kPlotY0 + kPlotY1) / 2) +
           "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 " +
           px((kPlotY0 + kPlotY1) / 2) + ")\">" + esc(y_label) + "</text>\n";
}

void draw_legend(std::string& out, const std::vector<std::string>& names) {
    for (size_t i = 0; i < names.size(); ++i) {
        const double y = kPlotY0 + 10 + 20 * static_cast<double>(i);
        out += "<rect x=\"" + px(kPlotX1 + 14) + "\" y=\"" + px(y - 9) +
               "\" width=\"12\" height=\"12\" fill=\"" + kPalette[i % kPaletteSize] + "\"/>\n";
        out += "<text x=\"" + px(kPlotX1 + 30) + "\" y=\"" + px(y + 2) + "\" font-size=\"11\">" +
               esc(names[i]) + "</text>\n";
    }
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            if (first) {
                xmin = xmax = p.x;
                ymin = ymax = p.y;
                first = false;
            } else {
                xmin = std::min(xmin, p.x);
                xmax = std::max(xmax, p.x);
                ymin = std::min(ymin, p.y);
                ymax = std::max(ymax, p.y);
            }
        }
    }
    const LinearScale xs = make_x_scale(xmin, xmax);
    const LinearScale ys = make_y_scale(ymin, ymax);

    std::string out;
    open_svg(out, title);
    draw_frame(out, xs, ys, x_label, y_label, /*x_ticks=*/true);
    for (size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % kPaletteSize];
        const auto& pts = series[si].points;
        if (pts.size() > 1) {
            out += "<polyline fill=\"none\" stroke=\"";
            out += color;
            out += "\" stroke-width=\"2\" points=\"";
            for (size_t i = 0; i < pts.size(); ++i) {
                if (i) out += ' ';
                out += px(xs(pts[i].x)) + "," + px(ys(pts[i].y));
            }
            out += "\"/>\n";
        }
        for (const auto& p : pts) {
            out += "<circle cx=\"" + px(xs(p.x)) + "\" cy=\"" + px(ys(p.y)) +
                   "\" r=\"4\" fill=\"";
            out += color;
            out += "\">";
            out += "<title>" + esc(p.title) + "</title></circle>\n";
        }
    }
    std::vector<std::string> names;
    for (const auto& s : series) names.push_back(s.name);
    draw_legend(out, names);
    out += "</svg>\n";
    return out;
}

std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<Bar>& bars) {
    double ymax = 0;
    for (const auto& b : bars) ymax = std::max(ymax, b.value);
    const LinearScale ys = make_y_scale(0.0, ymax);

    std::string out;
    open_svg(out, title);
    draw_frame(out, {}, ys, "", y_label, /*x_ticks=*/false);
    const double n = static_cast<double>(bars.size());
    const double slot = (kPlotX1 - kPlotX0) / std::max(n, 1.0);
    for (size_t i = 0; i < bars.size(); ++i) {
        const double cx = kPlotX0 + slot * (static_cast<double>(i) + 0.5);
        const double w = slot * 0.5;
        const double y = ys(bars[i].value);
        out += "<rect x=\"" + px(cx - w / 2) + "\" y=\"" + px(y) + "\" width=\"" + px(w) +
               "\" height=\"" + px(kPlotY1 - y) + "\" fill=\"" +
               kPalette[i % kPaletteSize] + "\">";
        out += "<title>" + esc(bars[i].title) + "</title></rect>\n";
        out += "<text x=\"" + px(cx) + "\" y=\"" + px(kPlotY1 + 18) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + esc(bars[i].label) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

std::string stacked_bar_chart(const std::string& title, const std::string& y_label,
                              const std::vector<std::string>& layer_names,
                              const std::vector<StackedColumn>& columns) {
    double ymax = 0;
    for (const auto& c : columns) {
        double sum = 0;
        for (double v : c.values) sum += v;
        ymax = std::max(ymax, sum);
    }
    const LinearScale ys = make_y_scale(0.0, ymax);

    std::string out;
    open_svg(out, title);
    draw_frame(out, {}, ys, "", y_label, /*x_ticks=*/false);
    const double n = static_cast<double>(columns.size());
    const double slot = (kPlotX1 - kPlotX0) / std::max(n, 1.0);
    for (size_t i = 0; i < columns.size(); ++i) {
        const double cx = kPlotX0 + slot * (static_cast<double>(i) + 0.5);
        const double w = slot * 0.6;
        double acc = 0;
        for (size_t li = 0; li < columns[i].values.size(); ++li) {
            const double v = columns[i].values[li];
            const double y0 = ys(acc);
            const double y1 = ys(acc + v);
            out += "<rect x=\"" + px(cx - w / 2) + "\" y=\"" + px(y1) + "\" width=\"" + px(w) +
                   "\" height=\"" + px(y0 - y1) + "\" fill=\"" +
                   kPalette[li % kPaletteSize] + "\">";
            const std::string t = li < columns[i].titles.size() ? columns[i].titles[li] : "";
            out += "<title>" + esc(t) + "</title></rect>\n";
            acc += v;
        }
        out += "<text x=\"" + px(cx) + "\" y=\"" + px(kPlotY1 + 18) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + esc(columns[i].label) + "</text>\n";
    }
    draw_legend(out, layer_names);
    out += "</svg>\n";
    return out;
}

}  // namespace mergeval::svg
