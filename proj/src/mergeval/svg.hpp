#pragma once

#include <string>
#include <vector>

namespace mergeval::svg {

// Deterministic hand-emitted SVG charts: fixed 800x500 viewBox, axes with
// tick labels, series legend. Data values are embedded in <title> elements
// with the same formatting the CSV writers use.

struct Point {
    double x = 0.0;
    double y = 0.0;
    std::string title;  // tooltip text carrying the datum
};

struct Series {
    std::string name;
    std::vector<Point> points;
};

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

struct Bar {
    std::string label;
    double value = 0.0;
    std::string title;
};

std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<Bar>& bars);

struct StackedColumn {
    std::string label;
    std::vector<double> values;  // one per layer
    std::vector<std::string> titles;
};

std::string stacked_bar_chart(const std::string& title, const std::string& y_label,
                              const std::vector<std::string>& layer_names,
                              const std::vector<StackedColumn>& columns);

}  // namespace mergeval::svg
