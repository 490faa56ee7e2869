#include "mergeval/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "mergeval/errors.hpp"

namespace mergeval::scoring {

namespace {

bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

char ascii_lower(char c) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

bool iequals_prefix(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) return false;
    for (size_t i = 0; i < prefix.size(); ++i) {
        if (ascii_lower(text[i]) != ascii_lower(prefix[i])) return false;
    }
    return true;
}

size_t ifind(std::string_view haystack, std::string_view needle) {
    if (needle.empty() || haystack.size() < needle.size()) return std::string_view::npos;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        if (iequals_prefix(haystack.substr(i), needle)) return i;
    }
    return std::string_view::npos;
}

std::vector<char32_t> to_codepoints(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        uint32_t cp = 0;
        size_t len = 0;
        if (c < 0x80) {
            cp = c;
            len = 1;
        } else if ((c & 0xE0) == 0xC0) {
            cp = c & 0x1F;
            len = 2;
        } else if ((c & 0xF0) == 0xE0) {
            cp = c & 0x0F;
            len = 3;
        } else if ((c & 0xF8) == 0xF0) {
            cp = c & 0x07;
            len = 4;
        } else {
            out.push_back(0xDC00 | c);  // invalid lead byte, keep it distinguishable
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xDC00 | c);
            ++i;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; ++k) {
            const unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok) {
            out.push_back(0xDC00 | c);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

}  // namespace

std::string_view task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Common: return "COMMON";
        case TaskKind::Scientific: return "SCIENTIFIC";
        case TaskKind::Combined: return "COMBINED";
        case TaskKind::ClosedSet: return "CLOSED_SET";
        case TaskKind::BinaryChoice: return "BINARY_CHOICE";
    }
    return "?";
}

TaskKind parse_task_kind(std::string_view s) {
    if (s == "COMMON") return TaskKind::Common;
    if (s == "SCIENTIFIC") return TaskKind::Scientific;
    if (s == "COMBINED") return TaskKind::Combined;
    if (s == "CLOSED_SET") return TaskKind::ClosedSet;
    if (s == "BINARY_CHOICE") return TaskKind::BinaryChoice;
    throw ConfigError("unknown task kind: '" + std::string(s) + "'");
}

bool is_closed_set(TaskKind k) {
    return k == TaskKind::ClosedSet || k == TaskKind::BinaryChoice;
}

void LabelSet::validate() const {
    if (classes.empty()) throw InvalidLabelSet("label set has no classes");
    std::set<std::string> seen;
    for (const auto& c : classes) {
        if (!seen.insert(normalize(c)).second) {
            throw InvalidLabelSet("label set classes are not unique after normalization: '" + c + "'");
        }
    }
}

int levenshtein(std::string_view a, std::string_view b) {
    const auto ca = to_codepoints(a);
    const auto cb = to_codepoints(b);
    if (ca.empty()) return static_cast<int>(cb.size());
    if (cb.empty()) return static_cast<int>(ca.size());
    std::vector<int> prev(cb.size() + 1), cur(cb.size() + 1);
    for (size_t j = 0; j <= cb.size(); ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= ca.size(); ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= cb.size(); ++j) {
            const int sub = prev[j - 1] + (ca[i - 1] == cb[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[cb.size()];
}

std::string normalize(std::string_view text) {
    // trim + collapse whitespace
    std::string s;
    s.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_ws(c)) {
            if (!s.empty()) pending_space = true;
        } else {
            if (pending_space) s += ' ';
            pending_space = false;
            s += c;
        }
    }
    // one pair of surrounding quotes
    if (s.size() >= 2 && (s.front() == '\'' || s.front() == '"') && s.back() == s.front()) {
        s = s.substr(1, s.size() - 2);
    }
    // one trailing period
    if (!s.empty() && s.back() == '.') s.pop_back();
    // quote/period stripping can re-expose edge whitespace
    size_t lo = 0, hi = s.size();
    while (lo < hi && is_ws(s[lo])) ++lo;
    while (hi > lo && is_ws(s[hi - 1])) --hi;
    return s.substr(lo, hi - lo);
}

std::vector<std::string> extract_answer(std::string_view text, TaskKind kind) {
    (void)kind;  // both formulaic patterns are checked regardless of the task
    const std::string norm = normalize(text);
    static constexpr std::string_view kPrefixes[] = {
        "The common name for the focal species in the audio is ",
        "The scientific name for the focal species in the audio is ",
    };
    static constexpr std::string_view kAlsoKnown = ", also known as ";
    for (const auto& prefix : kPrefixes) {
        if (!iequals_prefix(norm, prefix)) continue;
        const std::string remainder = normalize(norm.substr(prefix.size()));
        if (remainder.empty()) break;
        const size_t aka = ifind(remainder, kAlsoKnown);
        if (aka != std::string_view::npos) {
            return {normalize(std::string_view(remainder).substr(0, aka)), remainder};
        }
        return {remainder};
    }
    return {norm};
}

std::string_view category_name(Category c) {
    switch (c) {
        case Category::Correct: return "CORRECT";
        case Category::InSetConfusion: return "IN_SET_CONFUSION";
        case Category::OutOfSet: return "OUT_OF_SET";
        case Category::Abstention: return "ABSTENTION";
    }
    return "?";
}

Category parse_category(std::string_view s) {
    if (s == "CORRECT") return Category::Correct;
    if (s == "IN_SET_CONFUSION") return Category::InSetConfusion;
    if (s == "OUT_OF_SET") return Category::OutOfSet;
    if (s == "ABSTENTION") return Category::Abstention;
    throw ConfigError("unknown category: '" + std::string(s) + "'");
}

ScoredOutput judge(const std::string& sample_id, std::string_view output, std::string_view truth,
                   const LabelSet& labels, const JudgeOptions& opts) {
    if (opts.threshold < 1) throw ConfigError("distance threshold must be >= 1");
    labels.validate();
    const std::string norm_truth = normalize(truth);
    if (is_closed_set(labels.kind)) {
        bool found = false;
        for (const auto& c : labels.classes) {
            if (normalize(c) == norm_truth) {
                found = true;
                break;
            }
        }
        if (!found) {
            throw TruthNotInLabelSet("sample '" + sample_id + "': truth '" + norm_truth +
                                     "' is not in the label set");
        }
    }

    ScoredOutput result;
    result.sample_id = sample_id;
    result.truth = norm_truth;

    // empty output abstains unconditionally; patterns match as substrings
    const std::string norm_output = normalize(output);
    bool abstained = norm_output.empty();
    for (const auto& pattern : opts.abstention_patterns) {
        if (abstained) break;
        if (!pattern.empty() && ifind(norm_output, pattern) != std::string_view::npos) {
            abstained = true;
        }
    }
    if (abstained) {
        result.category = Category::Abstention;
        return result;
    }

    const auto candidates = extract_answer(norm_output, labels.kind);
    int best_dist = -1;
    size_t best_class = 0;
    bool tie = false;
    for (size_t ci = 0; ci < labels.classes.size(); ++ci) {
        const std::string norm_class = normalize(labels.classes[ci]);
        int class_dist = -1;
        for (const auto& cand : candidates) {
            const int d = levenshtein(cand, norm_class);
            if (class_dist < 0 || d < class_dist) class_dist = d;
        }
        if (best_dist < 0 || class_dist < best_dist) {
            best_dist = class_dist;
            best_class = ci;
            tie = false;
        } else if (class_dist == best_dist) {
            tie = true;  // earliest class wins
        }
    }

    result.matched_class = normalize(labels.classes[best_class]);
    result.distance = best_dist;
    result.tie_broken = tie;
    if (best_dist < opts.threshold) {
        result.category = *result.matched_class == norm_truth ? Category::Correct
                                                              : Category::InSetConfusion;
    } else {
        result.category = Category::OutOfSet;
    }
    return result;
}

std::string combined_target(std::string_view scientific, std::string_view common) {
    std::string out(scientific);
    out += ": ";
    out += common;
    return out;
}

MetricsReport aggregate(const std::vector<ScoredOutput>& scored, const LabelSet& labels,
                        double alpha) {
    labels.validate();
    std::set<std::string> ids;
    for (const auto& s : scored) {
        if (!ids.insert(s.sample_id).second) {
            throw DuplicateSample("duplicate sample_id: '" + s.sample_id + "'");
        }
    }

    MetricsReport report;
    report.alpha = alpha;
    report.n = static_cast<int>(scored.size());
    for (Category c : {Category::Correct, Category::InSetConfusion, Category::OutOfSet,
                       Category::Abstention}) {
        report.category_rates[c] = 0.0;
    }

    std::map<std::string, int> tp, fp, fn, support;
    std::vector<std::string> norm_classes;
    for (const auto& c : labels.classes) {
        const std::string nc = normalize(c);
        norm_classes.push_back(nc);
        tp[nc] = fp[nc] = fn[nc] = support[nc] = 0;
    }

    int correct = 0;
    std::map<Category, int> counts;
    for (const auto& s : scored) {
        counts[s.category] += 1;
        if (s.category == Category::Correct) ++correct;
        if (support.count(s.truth)) support[s.truth] += 1;

        // effective prediction: matched class when distance beat the
        // threshold, otherwise the synthetic invalid class
        const bool valid_pred =
            s.category == Category::Correct || s.category == Category::InSetConfusion;
        if (valid_pred) {
            const std::string& pred = *s.matched_class;
            if (pred == s.truth) {
                if (tp.count(pred)) tp[pred] += 1;
            } else {
                if (fp.count(pred)) fp[pred] += 1;
                if (fn.count(s.truth)) fn[s.truth] += 1;
            }
        } else {
            if (fn.count(s.truth)) fn[s.truth] += 1;
        }
    }

    const double n = static_cast<double>(report.n);
    for (auto& [cat, rate] : report.category_rates) {
        rate = n > 0 ? counts[cat] / n : 0.0;
    }
    report.accuracy = report.category_rates[Category::Correct];

    double f1_sum = 0.0;
    int f1_classes = 0;
    for (const auto& nc : norm_classes) {
        ClassMetrics m;
        m.support = support[nc];
        const int denom_p = tp[nc] + fp[nc];
        const int denom_r = tp[nc] + fn[nc];
        m.precision = denom_p > 0 ? static_cast<double>(tp[nc]) / denom_p : 0.0;
        m.recall = denom_r > 0 ? static_cast<double>(tp[nc]) / denom_r : 0.0;
        m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                            : 0.0;
        if (m.support > 0) {
            f1_sum += m.f1;
            ++f1_classes;
        }
        report.per_class[nc] = m;
    }
    report.macro_f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;
    return report;
}

}  // namespace mergeval::scoring
