#include "mergeval/prompts.hpp"

#include <algorithm>
#include <map>

#include "mergeval/errors.hpp"

namespace mergeval::prompts {

namespace {

void replace_all(std::string& s, std::string_view what, std::string_view with) {
    size_t pos = 0;
    while ((pos = s.find(what, pos)) != std::string::npos) {
        s.replace(pos, what.size(), with);
        pos += with.size();
    }
}

uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string species_list(const scoring::LabelSet& labels) {
    std::string out;
    for (size_t i = 0; i < labels.classes.size(); ++i) {
        if (i) out += ", ";
        out += labels.classes[i];
    }
    return out;
}

}  // namespace

std::string_view prompt_kind_name(PromptKind k) {
    switch (k) {
        case PromptKind::Common: return "COMMON";
        case PromptKind::Scientific: return "SCIENTIFIC";
        case PromptKind::Combined: return "COMBINED";
        case PromptKind::ClosedSet: return "CLOSED_SET";
        case PromptKind::ZfOriginal: return "ZF_ORIGINAL";
        case PromptKind::ZfReversed: return "ZF_REVERSED";
        case PromptKind::ZfNoClass: return "ZF_NOCLASS";
        case PromptKind::IclK: return "ICL_K";
    }
    return "?";
}

PromptKind parse_prompt_kind(std::string_view s) {
    if (s == "COMMON") return PromptKind::Common;
    if (s == "SCIENTIFIC") return PromptKind::Scientific;
    if (s == "COMBINED") return PromptKind::Combined;
    if (s == "CLOSED_SET") return PromptKind::ClosedSet;
    if (s == "ZF_ORIGINAL") return PromptKind::ZfOriginal;
    if (s == "ZF_REVERSED") return PromptKind::ZfReversed;
    if (s == "ZF_NOCLASS") return PromptKind::ZfNoClass;
    if (s == "ICL_K") return PromptKind::IclK;
    throw ConfigError("unknown prompt kind: '" + std::string(s) + "'");
}

scoring::TaskKind scoring_kind(PromptKind k) {
    switch (k) {
        case PromptKind::Common: return scoring::TaskKind::Common;
        case PromptKind::Scientific: return scoring::TaskKind::Scientific;
        case PromptKind::Combined: return scoring::TaskKind::Combined;
        case PromptKind::ClosedSet:
        case PromptKind::IclK: return scoring::TaskKind::ClosedSet;
        case PromptKind::ZfOriginal:
        case PromptKind::ZfReversed:
        case PromptKind::ZfNoClass: return scoring::TaskKind::BinaryChoice;
    }
    return scoring::TaskKind::ClosedSet;
}

PromptTemplate builtin_template(PromptKind k) {
    PromptTemplate t;
    t.kind = k;
    switch (k) {
        case PromptKind::Common:
            t.body = "What is the common name for the focal species in the audio?";
            break;
        case PromptKind::Scientific:
            t.body = "What is the scientific name for the focal species in the audio?";
            break;
        case PromptKind::Combined:
            t.body =
                "Identify the focal species in the audio and provide its scientific name, "
                "followed by a colon and its common name.";
            break;
        case PromptKind::ClosedSet:
            t.body =
                "What is the common name for the focal species in the audio? "
                "Output exactly one of: {species_list}";
            break;
        case PromptKind::ZfOriginal:
            t.body = "Is there only one bird in the audio, or more? Reply with 'One' or 'More'.";
            break;
        case PromptKind::ZfReversed:
            t.body = "Is there more than one bird in the audio, or just one? Reply with 'More' or 'One'.";
            break;
        case PromptKind::ZfNoClass:
            t.body = "How many birds are there in the audio?";
            break;
        case PromptKind::IclK:
            t.body =
                "Identify the common name for the focal species in the audio. "
                "Output exactly one of: {species_list}\n\n{examples}\n\nAudio: {audio}\nLabel:";
            break;
    }
    return t;
}

uint64_t derive_seed(uint64_t master_seed, std::string_view sample_id) {
    uint64_t h = 0xCBF29CE484222325ull;  // FNV offset basis
    auto mix = [&h](uint8_t byte) {
        h ^= byte;
        h *= 0x100000001B3ull;  // FNV prime
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<uint8_t>(master_seed >> (8 * i)));
    for (char c : sample_id) mix(static_cast<uint8_t>(c));
    return h;
}

std::vector<std::string> permute_examples(std::vector<std::string> blocks, std::string_view sample_id,
                                          uint64_t master_seed) {
    uint64_t state = derive_seed(master_seed, sample_id);
    for (size_t i = blocks.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(splitmix64(state) % i);
        std::swap(blocks[i - 1], blocks[j]);
    }
    return blocks;
}

std::string audio_marker(std::string_view audio_ref) {
    std::string out = "<Audio>";
    out += audio_ref;
    out += "</Audio>";
    return out;
}

RenderedPrompt render_prompt(const EvalSample& sample, const PromptTemplate& tmpl,
                             const scoring::LabelSet& labels,
                             const std::optional<FewShotSpec>& fewshot) {
    RenderedPrompt out;
    const uint64_t master_seed = fewshot ? fewshot->master_seed : 0;
    out.permutation_seed = derive_seed(master_seed, sample.sample_id);

    // k=0 in-context prompts collapse to the plain closed-set prompt
    if (tmpl.kind == PromptKind::IclK && (!fewshot || fewshot->k == 0)) {
        return render_prompt(sample, builtin_template(PromptKind::ClosedSet), labels, fewshot);
    }

    std::string text = tmpl.body;

    if (text.find("{species_list}") != std::string::npos) {
        labels.validate();
        replace_all(text, "{species_list}", species_list(labels));
    }

    if (text.find("{examples}") != std::string::npos) {
        if (!fewshot) {
            throw MissingField("template '" + std::string(prompt_kind_name(tmpl.kind)) +
                               "' needs a few-shot spec");
        }
        // one example block per class per round, then a per-sample shuffle
        std::map<std::string, std::vector<const PoolItem*>> by_label;
        for (const auto& item : fewshot->pool) by_label[item.label].push_back(&item);
        std::vector<std::string> blocks;
        for (int round = 0; round < fewshot->k; ++round) {
            for (const auto& cls : labels.classes) {
                const auto it = by_label.find(cls);
                if (it == by_label.end() || static_cast<size_t>(round) >= it->second.size()) {
                    throw PoolExhausted("few-shot pool has fewer than " + std::to_string(fewshot->k) +
                                        " examples for class '" + cls + "'");
                }
                blocks.push_back("Audio: " + audio_marker(it->second[round]->audio_ref) +
                                 "\nLabel: " + cls);
            }
        }
        blocks = permute_examples(std::move(blocks), sample.sample_id, fewshot->master_seed);
        std::string joined;
        for (size_t i = 0; i < blocks.size(); ++i) {
            if (i) joined += "\n\n";
            joined += blocks[i];
        }
        replace_all(text, "{examples}", joined);
    }

    if (text.find("{audio}") != std::string::npos) {
        if (sample.audio_ref.empty()) {
            throw MissingField("sample '" + sample.sample_id + "' has no audio_ref");
        }
        replace_all(text, "{audio}", audio_marker(sample.audio_ref));
    }

    out.text = std::move(text);
    return out;
}

}  // namespace mergeval::prompts
