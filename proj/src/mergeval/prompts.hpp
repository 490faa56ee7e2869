#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mergeval/scoring.hpp"

namespace mergeval::prompts {

enum class PromptKind {
    Common,
    Scientific,
    Combined,
    ClosedSet,
    ZfOriginal,
    ZfReversed,
    ZfNoClass,
    IclK,
};

std::string_view prompt_kind_name(PromptKind k);
PromptKind parse_prompt_kind(std::string_view s);

// Scoring kind a run of this template is judged under.
scoring::TaskKind scoring_kind(PromptKind k);

struct PromptTemplate {
    PromptKind kind = PromptKind::Common;
    std::string body;  // may contain {species_list}, {audio}, {examples}
};

// The eight built-in template bodies.
PromptTemplate builtin_template(PromptKind k);

struct PoolItem {
    std::string sample_id;
    std::string audio_ref;
    std::string label;
};

struct FewShotSpec {
    int k = 0;  // examples per class
    std::vector<PoolItem> pool;
    uint64_t master_seed = 0;
};

struct EvalSample {
    std::string sample_id;
    std::string dataset;
    std::optional<std::string> common_name;
    std::optional<std::string> scientific_name;
    std::string audio_ref;
    std::map<std::string, std::string> extra_labels;
};

struct RenderedPrompt {
    std::string text;
    uint64_t permutation_seed = 0;
};

// 64-bit FNV-1a over the little-endian bytes of master_seed followed by the
// sample id; drives the per-sample example permutation.
uint64_t derive_seed(uint64_t master_seed, std::string_view sample_id);

// Fisher-Yates driven by a splitmix64 stream over the derived seed.
std::vector<std::string> permute_examples(std::vector<std::string> blocks, std::string_view sample_id,
                                          uint64_t master_seed);

std::string audio_marker(std::string_view audio_ref);

RenderedPrompt render_prompt(const EvalSample& sample, const PromptTemplate& tmpl,
                             const scoring::LabelSet& labels,
                             const std::optional<FewShotSpec>& fewshot = std::nullopt);

}  // namespace mergeval::prompts
