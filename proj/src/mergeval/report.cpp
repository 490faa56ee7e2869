#include "mergeval/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"
#include "mergeval/svg.hpp"

namespace mergeval::report {

namespace {

using nlohmann::json;

const scoring::Category kCategories[] = {
    scoring::Category::Correct,
    scoring::Category::InSetConfusion,
    scoring::Category::OutOfSet,
    scoring::Category::Abstention,
};

std::string series_name(const SummaryRow& r) {
    return r.dataset.empty() ? r.task_kind : r.dataset + " " + r.task_kind;
}

std::vector<SummaryRow> sorted_rows(std::vector<SummaryRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
        if (a.dataset != b.dataset) return a.dataset < b.dataset;
        if (a.task_kind != b.task_kind) return a.task_kind < b.task_kind;
        return a.alpha < b.alpha;
    });
    return rows;
}

}  // namespace

void write_metrics_json(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    json arr = json::array();
    for (const auto& r : rows) {
        json row = {
            {"dataset", r.dataset}, {"task_kind", r.task_kind}, {"alpha", r.alpha},
            {"n", r.n},             {"accuracy", r.accuracy},   {"macro_f1", r.macro_f1},
        };
        json rates = json::object();
        for (const auto& [cat, rate] : r.category_rates) {
            rates[std::string(scoring::category_name(cat))] = rate;
        }
        row["category_rates"] = rates;
        json per_class = json::object();
        for (const auto& [cls, m] : r.per_class) {
            per_class[cls] = {{"precision", m.precision},
                              {"recall", m.recall},
                              {"f1", m.f1},
                              {"support", m.support}};
        }
        row["per_class"] = per_class;
        arr.push_back(std::move(row));
    }
    write_file(path, arr.dump(2) + "\n");
}

std::vector<SummaryRow> load_metrics_json(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const json arr = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) {
        throw ManifestError(path.string() + ": expected a JSON array of metric rows");
    }
    std::vector<SummaryRow> rows;
    for (const auto& row : arr) {
        SummaryRow r;
        r.dataset = row.value("dataset", "");
        r.task_kind = row.value("task_kind", "");
        r.alpha = row.value("alpha", 0.0);
        r.n = row.value("n", 0);
        r.accuracy = row.value("accuracy", 0.0);
        r.macro_f1 = row.value("macro_f1", 0.0);
        if (row.contains("category_rates")) {
            for (const auto& [k, v] : row["category_rates"].items()) {
                r.category_rates[scoring::parse_category(k)] = v.get<double>();
            }
        }
        if (row.contains("per_class")) {
            for (const auto& [k, v] : row["per_class"].items()) {
                scoring::ClassMetrics m;
                m.precision = v.value("precision", 0.0);
                m.recall = v.value("recall", 0.0);
                m.f1 = v.value("f1", 0.0);
                m.support = v.value("support", 0);
                r.per_class[k] = m;
            }
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_metrics_csv(const std::vector<SummaryRow>& rows, const std::filesystem::path& path) {
    std::string out = "alpha,task_kind,dataset,n,category,rate,accuracy,macro_f1\n";
    for (const auto& r : sorted_rows(rows)) {
        for (const auto cat : kCategories) {
            const auto it = r.category_rates.find(cat);
            const double rate = it != r.category_rates.end() ? it->second : 0.0;
            out += fmt_num(r.alpha) + "," + csv_field(r.task_kind) + "," + csv_field(r.dataset) +
                   "," + std::to_string(r.n) + "," + std::string(scoring::category_name(cat)) + "," +
                   fmt_num(rate) + "," + fmt_num(r.accuracy) + "," + fmt_num(r.macro_f1) + "\n";
        }
    }
    write_file(path, out);
}

std::vector<std::filesystem::path> emit_report(const std::vector<SummaryRow>& input,
                                               const std::filesystem::path& out_dir,
                                               const ReportOptions& opts) {
    if (input.empty()) throw EmptySummary("no summary rows to report on");
    {
        std::set<std::tuple<std::string, std::string, std::string>> keys;
        for (const auto& r : input) {
            if (!keys.emplace(fmt_num(r.alpha), r.task_kind, r.dataset).second) {
                throw DuplicateSample("duplicate summary row: alpha=" + fmt_num(r.alpha) + " kind=" +
                                      r.task_kind + " dataset=" + (r.dataset.empty() ? "-" : r.dataset));
            }
        }
    }
    const auto rows = sorted_rows(input);
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    auto emit = [&](const std::filesystem::path& p, const std::string& content) {
        write_file(p, content);
        written.push_back(p);
    };

    // (a) accuracy vs alpha, one series per (dataset, kind)
    {
        std::string csv = "dataset,task_kind,alpha,accuracy\n";
        std::vector<svg::Series> series;
        for (const auto& r : rows) {
            csv += csv_field(r.dataset) + "," + csv_field(r.task_kind) + "," + fmt_num(r.alpha) +
                   "," + fmt_num(r.accuracy) + "\n";
            const std::string name = series_name(r);
            if (series.empty() || series.back().name != name) series.push_back({name, {}});
            series.back().points.push_back(
                {r.alpha, r.accuracy,
                 "alpha=" + fmt_num(r.alpha) + " accuracy=" + fmt_num(r.accuracy)});
        }
        emit(out_dir / "accuracy_vs_alpha.csv", csv);
        emit(out_dir / "accuracy_vs_alpha.svg",
             svg::line_chart("Accuracy vs alpha", "alpha", "accuracy", series));
    }

    // (b) combined accuracy vs mean individual accuracy, traced over alpha
    {
        std::map<std::string, std::map<std::string, double>> acc;  // dataset|alpha -> kind -> acc
        std::vector<std::pair<std::string, double>> order;         // (dataset, alpha), first-seen
        for (const auto& r : rows) {
            const std::string key = r.dataset + "\x1f" + fmt_num(r.alpha);
            if (!acc.count(key)) order.emplace_back(r.dataset, r.alpha);
            acc[key][r.task_kind] = r.accuracy;
        }
        std::string csv = "dataset,alpha,mean_individual_accuracy,combined_accuracy\n";
        std::map<std::string, svg::Series> by_dataset;
        for (const auto& [dataset, alpha] : order) {
            const auto& kinds = acc[dataset + "\x1f" + fmt_num(alpha)];
            if (!kinds.count("COMMON") || !kinds.count("SCIENTIFIC") || !kinds.count("COMBINED")) {
                continue;  // tradeoff needs all three prompt kinds at this alpha
            }
            const double mean_ind = (kinds.at("COMMON") + kinds.at("SCIENTIFIC")) / 2.0;
            const double combined = kinds.at("COMBINED");
            csv += csv_field(dataset) + "," + fmt_num(alpha) + "," + fmt_num(mean_ind) + "," +
                   fmt_num(combined) + "\n";
            auto& s = by_dataset[dataset];
            if (s.name.empty()) s.name = dataset.empty() ? "all" : dataset;
            s.points.push_back({mean_ind, combined,
                                "alpha=" + fmt_num(alpha) + " individual=" + fmt_num(mean_ind) +
                                    " combined=" + fmt_num(combined)});
        }
        std::vector<svg::Series> series;
        for (auto& [_, s] : by_dataset) series.push_back(std::move(s));
        if (!series.empty()) {
            emit(out_dir / "combined_tradeoff.csv", csv);
            emit(out_dir / "combined_tradeoff.svg",
                 svg::line_chart("Combined vs individual accuracy (traced over alpha)",
                                 "mean individual accuracy", "combined accuracy", series));
        }
    }

    // (c) stacked error-category bars vs alpha, one chart per (dataset, kind)
    {
        std::string csv = "dataset,task_kind,alpha,category,rate\n";
        std::map<std::string, std::vector<const SummaryRow*>> groups;
        for (const auto& r : rows) {
            groups[r.dataset + "\x1f" + r.task_kind].push_back(&r);
            for (const auto cat : kCategories) {
                const auto it = r.category_rates.find(cat);
                const double rate = it != r.category_rates.end() ? it->second : 0.0;
                csv += csv_field(r.dataset) + "," + csv_field(r.task_kind) + "," + fmt_num(r.alpha) +
                       "," + std::string(scoring::category_name(cat)) + "," + fmt_num(rate) + "\n";
            }
        }
        emit(out_dir / "error_breakdown.csv", csv);
        std::vector<std::string> layer_names;
        for (const auto cat : kCategories) layer_names.emplace_back(scoring::category_name(cat));
        for (const auto& [key, group] : groups) {
            std::vector<svg::StackedColumn> columns;
            for (const SummaryRow* r : group) {
                svg::StackedColumn col;
                col.label = "alpha=" + fmt_num(r->alpha);
                for (const auto cat : kCategories) {
                    const auto it = r->category_rates.find(cat);
                    const double rate = it != r->category_rates.end() ? it->second : 0.0;
                    col.values.push_back(rate);
                    col.titles.push_back(std::string(scoring::category_name(cat)) + "=" +
                                         fmt_num(rate));
                }
                columns.push_back(std::move(col));
            }
            const SummaryRow* first = group.front();
            const std::string slug = slugify(first->dataset.empty() ? first->task_kind
                                                                    : first->dataset + "-" +
                                                                          first->task_kind);
            emit(out_dir / ("error_breakdown-" + slug + ".svg"),
                 svg::stacked_bar_chart("Error breakdown: " + series_name(*first), "rate",
                                        layer_names, columns));
        }
    }

    // (d) macro-F1 comparison between two alpha points
    {
        double lo = rows.front().alpha, hi = rows.front().alpha;
        for (const auto& r : rows) {
            lo = std::min(lo, r.alpha);
            hi = std::max(hi, r.alpha);
        }
        const auto [a1, a2] = opts.compare_alphas.value_or(std::make_pair(lo, hi));
        std::vector<double> wanted{a1};
        if (a2 != a1) wanted.push_back(a2);

        std::string csv = "dataset,task_kind,alpha,macro_f1\n";
        std::vector<svg::Bar> bars;
        for (const auto& r : rows) {
            for (double a : wanted) {
                if (std::abs(r.alpha - a) > 1e-12) continue;
                csv += csv_field(r.dataset) + "," + csv_field(r.task_kind) + "," + fmt_num(r.alpha) +
                       "," + fmt_num(r.macro_f1) + "\n";
                svg::Bar bar;
                bar.label = "alpha=" + fmt_num(r.alpha);
                if (!r.dataset.empty() || rows.size() > wanted.size()) {
                    bar.label = series_name(r) + " " + bar.label;
                }
                bar.value = r.macro_f1;
                bar.title = "alpha=" + fmt_num(r.alpha) + " macro_f1=" + fmt_num(r.macro_f1);
                bars.push_back(std::move(bar));
            }
        }
        if (!bars.empty()) {
            emit(out_dir / "f1_comparison.csv", csv);
            emit(out_dir / "f1_comparison.svg",
                 svg::bar_chart("Macro-F1 comparison", "macro-F1", bars));
        }
    }

    return written;
}

}  // namespace mergeval::report
