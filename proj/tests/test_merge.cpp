#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"
#include "mergeval/merge.hpp"
#include "mergeval/sha256.hpp"

using namespace mergeval;
using namespace mergeval::merge;
using tensorstore::write_checkpoint;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / name;
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

Tensor make_tensor(std::vector<uint64_t> shape, std::vector<float> values) {
    Tensor t;
    t.shape = std::move(shape);
    t.values = std::move(values);
    return t;
}

Tensor random_tensor(std::mt19937_64& rng, std::vector<uint64_t> shape) {
    std::normal_distribution<float> dist(0.0f, 1.0f);
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.values) v = dist(rng);
    return t;
}

CheckpointFile write_and_open(const std::filesystem::path& path,
                              const std::vector<NamedTensor>& entries,
                              const std::map<std::string, std::string>& metadata = {}) {
    write_checkpoint(entries, metadata, path);
    return CheckpointFile::open(path);
}

NamedTensor named(const std::string& name, Tensor t, DType dt = DType::F32) {
    NamedTensor nt;
    nt.name = name;
    nt.tensor = std::move(t);
    nt.dtype = dt;
    return nt;
}

}  // namespace

TEST_CASE("sha256 matches FIPS test vectors") {
    CHECK(sha256_hex(std::string("")) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // incremental updates agree with one-shot hashing
    Sha256 h;
    h.update("ab", 2);
    h.update("c", 1);
    CHECK(h.hex_digest() == sha256_hex(std::string("abc")));
}

TEST_CASE("interpolate endpoints are bit-exact, midpoint is exact arithmetic") {
    TempDir dir("mergeval_test_interp");
    std::vector<float> base_vals = {0.0f, -0.0f, 1.5f, std::numeric_limits<float>::quiet_NaN(),
                                    std::numeric_limits<float>::infinity(), -3.25f};
    std::vector<float> ft_vals = {2.0f, 1.0f, -1.5f, std::numeric_limits<float>::quiet_NaN(),
                                  std::numeric_limits<float>::infinity(), 3.25f};
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w", make_tensor({6}, base_vals))});
    const auto ft = write_and_open(dir.path / "ft.safetensors",
                                   {named("w", make_tensor({6}, ft_vals))});

    SUBCASE("alpha 0 reproduces base bit-for-bit, nan and -0.0 included") {
        const auto out = interpolate(base, ft, 0.0);
        REQUIRE(out.size() == 1);
        for (size_t i = 0; i < base_vals.size(); ++i) {
            CHECK(std::bit_cast<uint32_t>(out[0].tensor.values[i]) ==
                  std::bit_cast<uint32_t>(base_vals[i]));
        }
    }
    SUBCASE("alpha 1 reproduces the fine-tune bit-for-bit") {
        const auto out = interpolate(base, ft, 1.0);
        for (size_t i = 0; i < ft_vals.size(); ++i) {
            CHECK(std::bit_cast<uint32_t>(out[0].tensor.values[i]) ==
                  std::bit_cast<uint32_t>(ft_vals[i]));
        }
    }
    SUBCASE("midpoint of 0 and 2 is 1") {
        const auto out = interpolate(base, ft, 0.5);
        CHECK(out[0].tensor.values[0] == 1.0f);
    }
    SUBCASE("alpha outside [0,1] is rejected") {
        CHECK_THROWS_AS(interpolate(base, ft, 1.5), InvalidMergeSpec);
        CHECK_THROWS_AS(interpolate(base, ft, -0.1), InvalidMergeSpec);
    }
}

TEST_CASE("interpolate contract errors carry the offending names") {
    TempDir dir("mergeval_test_contract");
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("a", make_tensor({2}, {1, 2})),
                                      named("only_base", make_tensor({1}, {0}))});
    const auto ft_names = write_and_open(dir.path / "ft1.safetensors",
                                         {named("a", make_tensor({2}, {1, 2})),
                                          named("only_ft", make_tensor({1}, {0}))});
    CHECK_THROWS_WITH_AS(interpolate(base, ft_names, 0.5),
                         doctest::Contains("only_base"), NameSetMismatch);
    CHECK_THROWS_WITH_AS(interpolate(base, ft_names, 0.5),
                         doctest::Contains("only_ft"), NameSetMismatch);

    const auto ft_shape = write_and_open(dir.path / "ft2.safetensors",
                                         {named("a", make_tensor({2, 1}, {1, 2})),
                                          named("only_base", make_tensor({1}, {0}))});
    CHECK_THROWS_AS(interpolate(base, ft_shape, 0.5), ShapeMismatch);
}

TEST_CASE("apply_lora single outer product") {
    TempDir dir("mergeval_test_lora");
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w", make_tensor({2, 2}, {0, 0, 0, 0}))});
    LoraAdapter adapter;
    LoraPair pair;
    pair.target = "w";
    pair.b = make_tensor({2, 1}, {1, 0});     // d_out x r
    pair.a = make_tensor({1, 2}, {0, 1});     // r x d_in
    pair.rank = 1;
    pair.scale_numerator = 1.0;  // = rank, so scale 1
    adapter.pairs.push_back(pair);

    SUBCASE("alpha 1 lands the outer product") {
        const auto out = apply_lora(base, adapter, 1.0);
        CHECK(out[0].tensor.values == std::vector<float>{0, 1, 0, 0});
    }
    SUBCASE("alpha 0 is the base, bit-exact") {
        const auto out = apply_lora(base, adapter, 0.0);
        CHECK(out[0].tensor.values == std::vector<float>{0, 0, 0, 0});
    }
    SUBCASE("alpha above 1 needs the extrapolation flag") {
        CHECK_THROWS_AS(apply_lora(base, adapter, 1.5), InvalidMergeSpec);
        MergeOptions opts;
        opts.extrapolate = true;
        const auto out = apply_lora(base, adapter, 1.5, opts);
        CHECK(out[0].tensor.values == std::vector<float>{0, 1.5f, 0, 0});
    }
    SUBCASE("unresolved target") {
        adapter.pairs[0].target = "nope";
        CHECK_THROWS_AS(apply_lora(base, adapter, 0.5), UnresolvedTarget);
    }
    SUBCASE("rank disagreement between A and B") {
        adapter.pairs[0].a = make_tensor({2, 2}, {0, 1, 0, 1});  // rank 2, B says 1
        CHECK_THROWS_AS(apply_lora(base, adapter, 0.5), RankMismatch);
    }
    SUBCASE("untouched tensors copy through") {
        const auto base2 = write_and_open(dir.path / "base2.safetensors",
                                          {named("w", make_tensor({2, 2}, {0, 0, 0, 0})),
                                           named("emb", make_tensor({3}, {9, 8, 7}))});
        const auto out = apply_lora(base2, adapter, 0.7);
        const auto emb = std::find_if(out.begin(), out.end(),
                                      [](const NamedTensor& t) { return t.name == "emb"; });
        REQUIRE(emb != out.end());
        CHECK(emb->tensor.values == std::vector<float>{9, 8, 7});
    }
}

TEST_CASE("path equivalence: interpolation equals lora rescaling within 1e-5") {
    TempDir dir("mergeval_test_equiv");
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 5; ++iter) {
        const uint64_t d_out = 8 + rng() % 57;  // up to 64
        const uint64_t d_in = 8 + rng() % 57;
        const uint64_t rank = 8;
        const auto base =
            write_and_open(dir.path / ("base" + std::to_string(iter) + ".safetensors"),
                           {named("w", random_tensor(rng, {d_out, d_in}))});
        LoraAdapter adapter;
        LoraPair pair;
        pair.target = "w";
        pair.b = random_tensor(rng, {d_out, rank});
        pair.a = random_tensor(rng, {rank, d_in});
        pair.rank = rank;
        pair.scale_numerator = 16.0;  // scale 2
        adapter.pairs.push_back(std::move(pair));

        // materialize the fine-tune at alpha=1 and re-open it
        const auto ft_path = dir.path / ("ft" + std::to_string(iter) + ".safetensors");
        write_checkpoint(apply_lora(base, adapter, 1.0), {}, ft_path);
        const auto ft = CheckpointFile::open(ft_path);

        const double alpha = 0.7;
        const auto via_interp = interpolate(base, ft, alpha);
        const auto via_lora = apply_lora(base, adapter, alpha);
        double max_abs = 0;
        for (size_t i = 0; i < via_interp[0].tensor.values.size(); ++i) {
            max_abs = std::max(max_abs,
                               std::abs(static_cast<double>(via_interp[0].tensor.values[i]) -
                                        static_cast<double>(via_lora[0].tensor.values[i])));
        }
        CHECK(max_abs <= 1e-5);
    }
}

TEST_CASE("delta linearity: merged(alpha) - base == alpha * (merged(1) - base)") {
    TempDir dir("mergeval_test_linearity");
    std::mt19937_64 rng(11);
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w", random_tensor(rng, {16, 16}))});
    LoraAdapter adapter;
    LoraPair pair;
    pair.target = "w";
    pair.b = random_tensor(rng, {16, 4});
    pair.a = random_tensor(rng, {4, 16});
    pair.rank = 4;
    pair.scale_numerator = 4.0;
    adapter.pairs.push_back(std::move(pair));

    const auto base_t = base.read("w");
    const auto full = apply_lora(base, adapter, 1.0);
    for (double alpha : {0.25, 0.5, 0.75}) {
        const auto part = apply_lora(base, adapter, alpha);
        for (size_t i = 0; i < base_t.values.size(); ++i) {
            const double delta_full = full[0].tensor.values[i] - base_t.values[i];
            const double delta_part = part[0].tensor.values[i] - base_t.values[i];
            CHECK(std::abs(delta_part - alpha * delta_full) <= 1e-5);
        }
    }
}

TEST_CASE("equivalence_report endpoints are exactly zero") {
    TempDir dir("mergeval_test_eqrep");
    std::mt19937_64 rng(13);
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w1", random_tensor(rng, {12, 10})),
                                      named("w2", random_tensor(rng, {10, 12}))});
    LoraAdapter adapter;
    for (const char* t : {"w1", "w2"}) {
        LoraPair pair;
        pair.target = t;
        const auto& shape = base.index().at(t).shape;
        pair.b = random_tensor(rng, {shape[0], 2});
        pair.a = random_tensor(rng, {2, shape[1]});
        pair.rank = 2;
        pair.scale_numerator = 2.0;
        adapter.pairs.push_back(std::move(pair));
    }
    const auto rows = equivalence_report(base, adapter, {0.0, 0.5, 1.0});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].max_abs == 0.0);  // both routes return the base
    CHECK(rows[0].rms == 0.0);
    CHECK(rows[2].max_abs == 0.0);  // same computation as materialization
    CHECK(rows[1].max_abs <= 1e-5);
    CHECK(rows[1].rms <= rows[1].max_abs);
    CHECK(!rows[1].worst_tensor.empty());
}

TEST_CASE("match_names binds adapter halves to base weights") {
    TempDir dir("mergeval_test_match");
    const auto base = write_and_open(
        dir.path / "base.safetensors",
        {named("model.layers.0.q.weight", make_tensor({4, 6}, std::vector<float>(24, 0.0f))),
         named("x.weight", make_tensor({2, 2}, {0, 0, 0, 0}))});

    SUBCASE("simple pair without prefix") {
        NameMapRule rule;
        rule.strip_prefix = "";
        const auto adapter_file = write_and_open(
            dir.path / "ad1.safetensors",
            {named("x.lora_A.weight", make_tensor({1, 2}, {0, 1})),
             named("x.lora_B.weight", make_tensor({2, 1}, {1, 0}))});
        const auto adapter = match_names(base.index(), adapter_file, rule);
        REQUIRE(adapter.pairs.size() == 1);
        CHECK(adapter.pairs[0].target == "x.weight");
        CHECK(adapter.pairs[0].rank == 1);
        CHECK(adapter.pairs[0].scale_numerator == 1.0);
    }
    SUBCASE("conventional prefix is stripped before resolution") {
        const auto adapter_file = write_and_open(
            dir.path / "ad2.safetensors",
            {named("base_model.model.model.layers.0.q.lora_A.weight",
                   make_tensor({2, 6}, std::vector<float>(12, 0.5f))),
             named("base_model.model.model.layers.0.q.lora_B.weight",
                   make_tensor({4, 2}, std::vector<float>(8, 0.5f)))});
        const auto adapter = match_names(base.index(), adapter_file, {});
        REQUIRE(adapter.pairs.size() == 1);
        CHECK(adapter.pairs[0].target == "model.layers.0.q.weight");
        CHECK(adapter.pairs[0].rank == 2);
    }
    SUBCASE("orphan half") {
        NameMapRule rule;
        rule.strip_prefix = "";
        const auto adapter_file = write_and_open(
            dir.path / "ad3.safetensors",
            {named("x.lora_A.weight", make_tensor({1, 2}, {0, 1}))});
        CHECK_THROWS_AS(match_names(base.index(), adapter_file, rule), OrphanHalf);
    }
    SUBCASE("unresolved module") {
        NameMapRule rule;
        rule.strip_prefix = "";
        const auto adapter_file = write_and_open(
            dir.path / "ad4.safetensors",
            {named("ghost.lora_A.weight", make_tensor({1, 2}, {0, 1})),
             named("ghost.lora_B.weight", make_tensor({2, 1}, {1, 0}))});
        CHECK_THROWS_AS(match_names(base.index(), adapter_file, rule), UnresolvedTarget);
    }
    SUBCASE("explicit scale numerator") {
        NameMapRule rule;
        rule.strip_prefix = "";
        rule.scale_numerator = 32.0;
        const auto adapter_file = write_and_open(
            dir.path / "ad5.safetensors",
            {named("x.lora_A.weight", make_tensor({1, 2}, {0, 1})),
             named("x.lora_B.weight", make_tensor({2, 1}, {1, 0}))});
        const auto adapter = match_names(base.index(), adapter_file, rule);
        CHECK(adapter.pairs[0].scale_numerator == 32.0);
    }
}

TEST_CASE("merge spec validation") {
    MergeSpec spec;
    spec.alphas = {};
    CHECK_THROWS_AS(spec.validate(), InvalidMergeSpec);
    spec.alphas = {0.5, 0.5};
    CHECK_THROWS_AS(spec.validate(), InvalidMergeSpec);
    spec.alphas = {0.0, 0.5, 1.2};
    CHECK_THROWS_AS(spec.validate(), InvalidMergeSpec);
    spec.alphas = {0.0, 0.5, 1.2};
    spec.extrapolate = true;
    CHECK_NOTHROW(spec.validate());
    spec.extrapolate = false;
    spec.alphas = {0.0, 0.5, 1.0};
    CHECK_NOTHROW(spec.validate());
    spec.output_naming = "no-placeholder.safetensors";
    CHECK_THROWS_AS(spec.validate(), InvalidMergeSpec);
}

TEST_CASE("sweep writes one checkpoint per alpha plus a manifest") {
    TempDir dir("mergeval_test_sweep");
    std::mt19937_64 rng(17);
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w", random_tensor(rng, {8, 8}))},
                                     {{"origin", "base"}});
    const auto ft = write_and_open(dir.path / "ft.safetensors",
                                   {named("w", random_tensor(rng, {8, 8}))});
    MergeSpec spec;
    spec.mode = MergeMode::Interpolate;
    spec.alphas = {0.0, 0.5, 1.0};

    const auto out_dir = dir.path / "sweep";
    const auto entries = sweep(base, &ft, nullptr, spec, out_dir);
    REQUIRE(entries.size() == 3);
    for (const auto& e : entries) {
        CHECK(std::filesystem::exists(e.path));
        CHECK(e.sha256 == file_sha256(e.path));
        CHECK(e.mode == "interpolate");
    }
    const auto manifest_lines = read_lines(out_dir / "manifest.jsonl");
    REQUIRE(manifest_lines.size() == 3);
    const auto row = nlohmann::json::parse(manifest_lines[1]);
    CHECK(row["alpha"] == 0.5);
    CHECK(row["sha256"] == entries[1].sha256);

    SUBCASE("rerun without overwrite refuses") {
        CHECK_THROWS_AS(sweep(base, &ft, nullptr, spec, out_dir), OutputExists);
    }
    SUBCASE("rerun with overwrite reproduces identical digests") {
        MergeSpec again = spec;
        again.overwrite = true;
        const auto second = sweep(base, &ft, nullptr, again, out_dir);
        for (size_t i = 0; i < entries.size(); ++i) {
            CHECK(second[i].sha256 == entries[i].sha256);
        }
    }
    SUBCASE("alpha 0 output equals the base file byte-for-byte") {
        // merged outputs carry the base metadata, so the files match exactly
        CHECK(entries[0].sha256 == file_sha256(dir.path / "base.safetensors"));
    }
}

TEST_CASE("sweep digests are independent of the worker count") {
    TempDir dir("mergeval_test_jobs");
    std::mt19937_64 rng(19);
    std::vector<NamedTensor> base_entries, ft_entries;
    for (int i = 0; i < 6; ++i) {
        base_entries.push_back(named("w" + std::to_string(i), random_tensor(rng, {16, 16})));
        ft_entries.push_back(named("w" + std::to_string(i), random_tensor(rng, {16, 16})));
    }
    const auto base = write_and_open(dir.path / "base.safetensors", base_entries);
    const auto ft = write_and_open(dir.path / "ft.safetensors", ft_entries);

    std::vector<std::vector<std::string>> digests;
    for (int jobs : {1, 4, 8}) {
        MergeSpec spec;
        spec.mode = MergeMode::Interpolate;
        spec.alphas = {0.25, 0.75};
        spec.jobs = jobs;
        spec.overwrite = true;
        const auto entries = sweep(base, &ft, nullptr, spec, dir.path / ("out" + std::to_string(jobs)));
        std::vector<std::string> d;
        for (const auto& e : entries) d.push_back(e.sha256);
        digests.push_back(std::move(d));
    }
    CHECK(digests[0] == digests[1]);
    CHECK(digests[0] == digests[2]);
}

TEST_CASE("recommended band alphas are accepted as-is") {
    MergeSpec spec;
    spec.alphas = {0.4, 0.6};
    CHECK_NOTHROW(spec.validate());
}

TEST_CASE("explicit output dtype quantizes merged tensors") {
    TempDir dir("mergeval_test_dtype_out");
    const auto base = write_and_open(dir.path / "base.safetensors",
                                     {named("w", make_tensor({2}, {1.0f, 0.1f}))});
    const auto ft = write_and_open(dir.path / "ft.safetensors",
                                   {named("w", make_tensor({2}, {3.0f, 0.3f}))});
    MergeOptions opts;
    opts.output_dtype = DType::BF16;
    const auto out = interpolate(base, ft, 0.5, opts);
    REQUIRE(out.size() == 1);
    CHECK(out[0].dtype == DType::BF16);

    const auto path = dir.path / "merged.safetensors";
    write_checkpoint(out, {}, path);
    const auto merged = CheckpointFile::open(path);
    CHECK(merged.index().at("w").dtype == DType::BF16);
    const auto values = merged.read("w").values;
    CHECK(values[0] == 2.0f);  // representable exactly in bf16
    // 0.2 is not representable; stored value must be its bf16 rounding
    using tensorstore::bf16_to_f32;
    using tensorstore::f32_to_bf16;
    CHECK(values[1] == bf16_to_f32(f32_to_bf16(0.5f * 0.1f + 0.5f * 0.3f)));
}
