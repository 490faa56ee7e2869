#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mergeval/scoring.hpp"

namespace mergeval::report {

// One scored (alpha, task_kind, dataset) group.
struct SummaryRow {
    std::string dataset;
    std::string task_kind;
    double alpha = 0.0;
    int n = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::map<scoring::Category, double> category_rates;
    std::map<std::string, scoring::ClassMetrics> per_class;
};

void write_metrics_json(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);
std::vector<SummaryRow> load_metrics_json(const std::filesystem::path& path);

// metrics.csv: one row per alpha per category (plus accuracy/macro-F1).
void write_metrics_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path);

struct ReportOptions {
    // The two alpha points compared in the F1 bar chart; defaults to the
    // lowest and highest alpha present.
    std::optional<std::pair<double, double>> compare_alphas;
};

// Emits the four chart types as CSV + SVG pairs under out_dir:
//   accuracy_vs_alpha      - accuracy per alpha, one line per series
//   combined_tradeoff      - combined accuracy vs mean individual accuracy
//   error_breakdown-<slug> - stacked category rates per alpha
//   f1_comparison          - macro-F1 bars at the two compared alphas
// Returns the written file paths. Throws EmptySummary when rows is empty.
std::vector<std::filesystem::path> emit_report(const std::vector<SummaryRow>& rows,
                                               const std::filesystem::path& out_dir,
                                               const ReportOptions& opts = {});

}  // namespace mergeval::report
