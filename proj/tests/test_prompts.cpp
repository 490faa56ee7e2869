#include <algorithm>
#include <map>
#include <string>

#include "doctest.h"

#include "mergeval/errors.hpp"
#include "mergeval/prompts.hpp"

using namespace mergeval;
using namespace mergeval::prompts;

namespace {

scoring::LabelSet binary_labels() {
    scoring::LabelSet labels;
    labels.kind = scoring::TaskKind::ClosedSet;
    labels.classes = {"Dall's Porpoise", "Spotted Elachura"};
    return labels;
}

EvalSample sample(const std::string& id) {
    EvalSample s;
    s.sample_id = id;
    s.dataset = "unseen-family-cmn";
    s.common_name = "Dall's Porpoise";
    s.scientific_name = "Phocoenoides dalli";
    s.audio_ref = "audio/" + id + ".wav";
    return s;
}

FewShotSpec pool_spec(int k) {
    FewShotSpec spec;
    spec.k = k;
    spec.master_seed = 42;
    for (int i = 0; i < 5; ++i) {
        spec.pool.push_back({"pool-dp-" + std::to_string(i), "pool/dp" + std::to_string(i) + ".wav",
                             "Dall's Porpoise"});
        spec.pool.push_back({"pool-se-" + std::to_string(i), "pool/se" + std::to_string(i) + ".wav",
                             "Spotted Elachura"});
    }
    return spec;
}

}  // namespace

TEST_CASE("template texts match the studied prompts verbatim") {
    const auto labels = binary_labels();
    const auto s = sample("x1");
    CHECK(render_prompt(s, builtin_template(PromptKind::Common), labels).text ==
          "What is the common name for the focal species in the audio?");
    CHECK(render_prompt(s, builtin_template(PromptKind::Scientific), labels).text ==
          "What is the scientific name for the focal species in the audio?");
    CHECK(render_prompt(s, builtin_template(PromptKind::Combined), labels).text ==
          "Identify the focal species in the audio and provide its scientific name, followed by a "
          "colon and its common name.");
    CHECK(render_prompt(s, builtin_template(PromptKind::ZfOriginal), labels).text ==
          "Is there only one bird in the audio, or more? Reply with 'One' or 'More'.");
    CHECK(render_prompt(s, builtin_template(PromptKind::ZfReversed), labels).text ==
          "Is there more than one bird in the audio, or just one? Reply with 'More' or 'One'.");
    CHECK(render_prompt(s, builtin_template(PromptKind::ZfNoClass), labels).text ==
          "How many birds are there in the audio?");
}

TEST_CASE("closed-set prompt carries the label list in order") {
    const auto labels = binary_labels();
    const auto r = render_prompt(sample("x1"), builtin_template(PromptKind::ClosedSet), labels);
    CHECK(r.text ==
          "What is the common name for the focal species in the audio? "
          "Output exactly one of: Dall's Porpoise, Spotted Elachura");
}

TEST_CASE("k=0 in-context prompt is byte-identical to the closed-set prompt") {
    const auto labels = binary_labels();
    const auto s = sample("x2");
    const auto closed = render_prompt(s, builtin_template(PromptKind::ClosedSet), labels);
    const auto icl0 = render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(0));
    CHECK(icl0.text == closed.text);
    const auto icl_nospec = render_prompt(s, builtin_template(PromptKind::IclK), labels);
    CHECK(icl_nospec.text == closed.text);
}

TEST_CASE("one-shot prompt holds one block per class plus the trailing stub") {
    const auto labels = binary_labels();
    const auto s = sample("x3");
    const auto r = render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(1));

    size_t blocks = 0;
    size_t pos = 0;
    while ((pos = r.text.find("Label: ", pos)) != std::string::npos) {
        ++blocks;
        pos += 7;
    }
    CHECK(blocks == 2);  // k=1 over two classes
    CHECK(r.text.starts_with("Identify the common name for the focal species in the audio. "
                             "Output exactly one of: Dall's Porpoise, Spotted Elachura"));
    CHECK(r.text.ends_with("Audio: <Audio>audio/x3.wav</Audio>\nLabel:"));
    CHECK(r.text.find("<Audio>pool/dp0.wav</Audio>") != std::string::npos);
    CHECK(r.text.find("<Audio>pool/se0.wav</Audio>") != std::string::npos);

    const auto r5 = render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(5));
    size_t blocks5 = 0;
    pos = 0;
    while ((pos = r5.text.find("Audio: <Audio>pool/", pos)) != std::string::npos) {
        ++blocks5;
        pos += 10;
    }
    CHECK(blocks5 == 10);  // five rounds, two classes
}

TEST_CASE("pool exhaustion is an error") {
    const auto labels = binary_labels();
    auto spec = pool_spec(1);
    spec.k = 6;  // pool holds 5 per class
    CHECK_THROWS_AS(render_prompt(sample("x"), builtin_template(PromptKind::IclK), labels, spec),
                    PoolExhausted);
}

TEST_CASE("icl prompt without audio_ref is an error") {
    const auto labels = binary_labels();
    auto s = sample("x");
    s.audio_ref = "";
    CHECK_THROWS_AS(render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(1)),
                    MissingField);
}

TEST_CASE("rendering is deterministic") {
    const auto labels = binary_labels();
    const auto s = sample("det");
    const auto a = render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(5));
    const auto b = render_prompt(s, builtin_template(PromptKind::IclK), labels, pool_spec(5));
    CHECK(a.text == b.text);
    CHECK(a.permutation_seed == b.permutation_seed);
}

TEST_CASE("permute_examples is seeded per sample") {
    SUBCASE("single block unchanged") {
        const auto out = permute_examples({"only"}, "s1", 7);
        CHECK(out == std::vector<std::string>{"only"});
    }
    SUBCASE("same key gives the same order, most other keys differ somewhere") {
        const std::vector<std::string> blocks = {"a", "b", "c", "d", "e"};
        const auto first = permute_examples(blocks, "s1", 7);
        const auto second = permute_examples(blocks, "s1", 7);
        CHECK(first == second);
        int differing = 0;
        for (int i = 0; i < 20; ++i) {
            if (permute_examples(blocks, "s" + std::to_string(i + 100), 7) != first) ++differing;
        }
        CHECK(differing >= 15);
    }
    SUBCASE("permutation output is a permutation") {
        const std::vector<std::string> blocks = {"a", "b", "c", "d"};
        auto out = permute_examples(blocks, "sX", 3);
        std::sort(out.begin(), out.end());
        CHECK(out == blocks);
    }
}

TEST_CASE("two-block orders are near-uniform over many samples") {
    const std::vector<std::string> blocks = {"first", "second"};
    int kept = 0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
        const auto out = permute_examples(blocks, "sample-" + std::to_string(i), 2024);
        if (out[0] == "first") ++kept;
    }
    const double freq = static_cast<double>(kept) / n;
    CHECK(freq > 0.45);
    CHECK(freq < 0.55);
}

TEST_CASE("derived seeds differ across master seeds and ids") {
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("prompt and scoring kind names round trip") {
    for (const auto kind : {PromptKind::Common, PromptKind::Scientific, PromptKind::Combined,
                            PromptKind::ClosedSet, PromptKind::ZfOriginal, PromptKind::ZfReversed,
                            PromptKind::ZfNoClass, PromptKind::IclK}) {
        CHECK(parse_prompt_kind(prompt_kind_name(kind)) == kind);
    }
    CHECK(scoring_kind(PromptKind::IclK) == scoring::TaskKind::ClosedSet);
    CHECK(scoring_kind(PromptKind::ZfReversed) == scoring::TaskKind::BinaryChoice);
    CHECK_THROWS_AS(parse_prompt_kind("BOGUS"), ConfigError);
}
