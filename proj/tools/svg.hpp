#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace kfreg::cli {

/// Minimal SVG line chart: one polyline per series over a shared x axis.
/// Plot-quality output belongs to external tools working off the CSVs; this
/// exists so a run can be eyeballed without any dependencies.
inline std::string svg_line_chart(const std::string& title,
                                  const std::vector<double>& x,
                                  const std::vector<std::pair<std::string, std::vector<double>>>& series) {
    constexpr double W = 720, H = 420, L = 60, R = 150, T = 40, B = 40;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
                                    "#bcbd22", "#e377c2"};

    double xmin = x.empty() ? 0 : *std::min_element(x.begin(), x.end());
    double xmax = x.empty() ? 1 : *std::max_element(x.begin(), x.end());
    double ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& [name, ys] : series)
        for (double v : ys) {
            if (!std::isfinite(v)) continue;
            if (first) {
                ymin = ymax = v;
                first = false;
            } else {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + 1;

    auto px = [&](double v) { return L + (v - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double v) { return H - B - (v - ymin) / (ymax - ymin) * (H - T - B); };

    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    s << "<rect width='100%' height='100%' fill='white'/>\n";
    s << "<text x='" << L << "' y='24' font-family='sans-serif' font-size='16'>" << title
      << "</text>\n";
    s << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
      << "' stroke='black'/>\n";
    s << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
      << "' stroke='black'/>\n";
    s << "<text x='" << L - 6 << "' y='" << py(ymin) << "' text-anchor='end' font-size='11' "
      << "font-family='sans-serif'>" << ymin << "</text>\n";
    s << "<text x='" << L - 6 << "' y='" << py(ymax) + 4 << "' text-anchor='end' font-size='11' "
      << "font-family='sans-serif'>" << ymax << "</text>\n";

    int color = 0;
    double legend_y = T + 10;
    for (const auto& [name, ys] : series) {
        const char* c = palette[color % 10];
        s << "<polyline fill='none' stroke='" << c << "' stroke-width='1.5' points='";
        for (std::size_t i = 0; i < ys.size() && i < x.size(); ++i)
            if (std::isfinite(ys[i])) s << px(x[i]) << ',' << py(ys[i]) << ' ';
        s << "'/>\n";
        s << "<text x='" << W - R + 10 << "' y='" << legend_y << "' fill='" << c
          << "' font-size='12' font-family='sans-serif'>" << name << "</text>\n";
        legend_y += 16;
        ++color;
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace kfreg::cli
