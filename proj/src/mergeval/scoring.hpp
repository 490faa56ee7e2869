#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mergeval::scoring {

enum class TaskKind {
    Common,
    Scientific,
    Combined,
    ClosedSet,
    BinaryChoice,
};

std::string_view task_kind_name(TaskKind k);
TaskKind parse_task_kind(std::string_view s);

// Closed-set kinds require the ground truth to appear among the classes.
bool is_closed_set(TaskKind k);

struct LabelSet {
    std::vector<std::string> classes;  // order breaks distance ties
    TaskKind kind = TaskKind::ClosedSet;

    // throws InvalidLabelSet when empty or non-unique after normalization
    void validate() const;
};

// Unit-cost edit distance over Unicode scalar values. Invalid UTF-8 bytes are
// mapped to lone surrogate codepoints so the metric stays total.
int levenshtein(std::string_view a, std::string_view b);

// Trims surrounding whitespace, collapses inner whitespace runs to one
// space, strips one pair of surrounding quotes and one trailing period.
// Case is preserved; the distance threshold absorbs small deviations.
std::string normalize(std::string_view text);

// Peels the formulaic answer prefix "The common/scientific name for the
// focal species in the audio is ..." when present. With an ", also known as"
// clause, both the leading capture and the full remainder are candidates.
std::vector<std::string> extract_answer(std::string_view text, TaskKind kind);

enum class Category {
    Correct,
    InSetConfusion,
    OutOfSet,
    Abstention,
};

std::string_view category_name(Category c);
Category parse_category(std::string_view s);

struct ScoredOutput {
    std::string sample_id;
    std::string truth;  // normalized ground truth, kept for aggregation
    std::optional<std::string> matched_class;
    std::optional<int> distance;
    Category category = Category::Abstention;
    bool tie_broken = false;  // nearest class decided by label order
};

struct JudgeOptions {
    int threshold = 5;  // prediction counts as a hit when distance < threshold
    // Case-insensitive substring patterns; an output that normalizes to the
    // empty string always abstains, patterns or not.
    std::vector<std::string> abstention_patterns = {"I don't know", "cannot", "unable to"};
};

ScoredOutput judge(const std::string& sample_id, std::string_view output, std::string_view truth,
                   const LabelSet& labels, const JudgeOptions& opts = {});

std::string combined_target(std::string_view scientific, std::string_view common);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int support = 0;
};

struct MetricsReport {
    double alpha = 0.0;
    int n = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::map<Category, double> category_rates;
    std::map<std::string, ClassMetrics> per_class;
};

// Out-of-set and abstention rows count as predictions of a synthetic invalid
// class: they harm the true class's recall and no real class's precision.
// macro_f1 averages classes with support > 0.
MetricsReport aggregate(const std::vector<ScoredOutput>& scored, const LabelSet& labels,
                        double alpha = 0.0);

// External scoring-input row (line-delimited JSON).
struct ScoreRow {
    std::string sample_id;
    std::string output_text;
    std::string truth;
    double alpha = 0.0;
    TaskKind kind = TaskKind::ClosedSet;
    std::string dataset;  // optional
};

}  // namespace mergeval::scoring
