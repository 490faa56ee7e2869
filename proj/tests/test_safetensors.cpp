#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "doctest.h"
#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"
#include "mergeval/safetensors.hpp"

using namespace mergeval;
using namespace mergeval::tensorstore;

namespace {

std::vector<std::byte> file_from_header(const std::string& header, size_t payload_bytes) {
    std::vector<std::byte> f(8 + header.size() + payload_bytes, std::byte{0});
    const uint64_t len = header.size();
    std::memcpy(f.data(), &len, 8);
    std::memcpy(f.data() + 8, header.data(), header.size());
    return f;
}

struct RandomCheckpoint {
    std::vector<NamedTensor> entries;
    std::map<std::string, std::string> metadata;
};

RandomCheckpoint random_checkpoint(std::mt19937_64& rng, int max_tensors = 8) {
    std::uniform_int_distribution<int> ntensors(0, max_tensors);
    std::uniform_int_distribution<int> ndims(0, 3);
    std::uniform_int_distribution<int> dim(0, 6);
    std::uniform_int_distribution<int> dt(0, 2);
    std::uniform_real_distribution<float> val(-4.0f, 4.0f);
    std::uniform_int_distribution<int> with_meta(0, 1);

    RandomCheckpoint cp;
    const int n = ntensors(rng);
    for (int i = 0; i < n; ++i) {
        NamedTensor nt;
        nt.name = "t" + std::to_string(i) + "." + std::to_string(rng() % 1000);
        nt.dtype = static_cast<DType>(dt(rng));
        std::vector<uint64_t> shape;
        const int d = ndims(rng);
        for (int k = 0; k < d; ++k) shape.push_back(static_cast<uint64_t>(dim(rng)));
        nt.tensor = Tensor::zeros(shape);
        for (auto& v : nt.tensor.values) v = val(rng);
        cp.entries.push_back(std::move(nt));
    }
    if (with_meta(rng)) {
        cp.metadata["format"] = "pt";
        cp.metadata["note"] = "fixture " + std::to_string(rng() % 100);
    }
    return cp;
}

}  // namespace

TEST_CASE("minimal well-formed file parses") {
    const std::string header = R"({"t":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})";
    const auto f = file_from_header(header, 8);
    const auto index = parse_header(f);
    REQUIRE(index.entries.size() == 1);
    CHECK(index.entries[0].name == "t");
    CHECK(index.entries[0].dtype == DType::F32);
    CHECK(index.entries[0].shape == std::vector<uint64_t>{2});
    CHECK(index.entries[0].begin == 0);
    CHECK(index.entries[0].end == 8);
    CHECK(index.header_len == header.size());
    CHECK(index.payload_origin == 8 + header.size());
    CHECK(index.payload_len == 8);
}

TEST_CASE("entry byte span must equal dtype times shape") {
    // shape [2,2] F32 needs 16 bytes, header declares 8
    const auto f = file_from_header(R"({"t":{"dtype":"F32","shape":[2,2],"data_offsets":[0,8]}})", 8);
    CHECK_THROWS_AS(parse_header(f), MalformedHeader);
}

TEST_CASE("header errors") {
    SUBCASE("file shorter than the length field") {
        std::vector<std::byte> tiny(4, std::byte{0});
        CHECK_THROWS_WITH_AS(parse_header(tiny), doctest::Contains("bytes 0-8"), MalformedHeader);
    }
    SUBCASE("declared length overruns the file") {
        std::vector<std::byte> f(16, std::byte{0});
        const uint64_t len = 1000;
        std::memcpy(f.data(), &len, 8);
        CHECK_THROWS_WITH_AS(parse_header(f), doctest::Contains("bytes 0-8"), MalformedHeader);
    }
    SUBCASE("invalid JSON") {
        const auto f = file_from_header("{not json", 0);
        CHECK_THROWS_AS(parse_header(f), MalformedHeader);
    }
    SUBCASE("non-object header") {
        const auto f = file_from_header("[1,2]", 0);
        CHECK_THROWS_AS(parse_header(f), MalformedHeader);
    }
    SUBCASE("unknown dtype string") {
        const auto f = file_from_header(R"({"t":{"dtype":"I64","shape":[1],"data_offsets":[0,8]}})", 8);
        CHECK_THROWS_AS(parse_header(f), MalformedHeader);
    }
    SUBCASE("negative shape entry") {
        const auto f = file_from_header(R"({"t":{"dtype":"F32","shape":[-1],"data_offsets":[0,4]}})", 4);
        CHECK_THROWS_AS(parse_header(f), MalformedHeader);
    }
    SUBCASE("duplicate tensor name") {
        const auto f = file_from_header(
            R"({"t":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"t":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
            8);
        CHECK_THROWS_AS(parse_header(f), DuplicateName);
    }
    SUBCASE("non-string metadata value") {
        const auto f = file_from_header(R"({"__metadata__":{"k":3}})", 0);
        CHECK_THROWS_AS(parse_header(f), MalformedHeader);
    }
}

TEST_CASE("overlap and gap validation") {
    SUBCASE("overlapping ranges") {
        const auto f = file_from_header(
            R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
            12);
        CHECK_THROWS_AS(parse_header(f), OverlapError);
    }
    SUBCASE("gap between tensors") {
        const auto f = file_from_header(
            R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},"b":{"dtype":"F32","shape":[1],"data_offsets":[8,12]}})",
            12);
        CHECK_THROWS_AS(parse_header(f), OverlapError);
        ParseOptions permissive;
        permissive.allow_gaps = true;
        CHECK_NOTHROW(parse_header(f, permissive));
    }
    SUBCASE("trailing uncovered payload") {
        const auto f = file_from_header(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]}})", 8);
        CHECK_THROWS_AS(parse_header(f), OverlapError);
        ParseOptions permissive;
        permissive.allow_gaps = true;
        CHECK_NOTHROW(parse_header(f, permissive));
    }
    SUBCASE("entries past the end of the payload") {
        const auto f = file_from_header(R"({"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", 8);
        CHECK_THROWS_AS(parse_header(f), OverlapError);
        ParseOptions permissive;
        permissive.allow_gaps = true;
        CHECK_THROWS_AS(parse_header(f, permissive), OverlapError);
    }
    SUBCASE("empty payload with zero tensors") {
        const auto f = file_from_header("{}", 0);
        const auto index = parse_header(f);
        CHECK(index.entries.empty());
    }
}

TEST_CASE("parse_header validates from the header alone") {
    // a file whose payload is a canary: parsing must succeed without ever
    // touching (or needing) those bytes beyond the length
    const std::string header = R"({"t":{"dtype":"BF16","shape":[3],"data_offsets":[0,6]}})";
    auto f = file_from_header(header, 6);
    const auto index = parse_header(std::span(f.data(), 8 + header.size()), f.size(), {});
    CHECK(index.entries.size() == 1);
    CHECK(index.payload_len == 6);
}

TEST_CASE("read_tensor decodes per dtype") {
    std::vector<NamedTensor> entries;
    NamedTensor a;
    a.name = "bf";
    a.dtype = DType::BF16;
    a.tensor.shape = {2};
    a.tensor.values = {1.0f, -2.0f};
    entries.push_back(a);
    NamedTensor b;
    b.name = "h";
    b.dtype = DType::F16;
    b.tensor.shape = {1};
    b.tensor.values = {1.0f};
    entries.push_back(b);
    const auto bytes = write_checkpoint(entries, {});
    const auto index = parse_header(bytes);

    const Tensor bf = read_tensor(index, "bf", bytes);
    CHECK(bf.values == std::vector<float>{1.0f, -2.0f});
    const Tensor h = read_tensor(index, "h", bytes);
    CHECK(h.values == std::vector<float>{1.0f});
    CHECK_THROWS_AS(read_tensor(index, "missing", bytes), UnknownTensor);

    // truncated source
    CHECK_THROWS_AS(read_tensor(index, "h", std::span(bytes).first(bytes.size() - 1)),
                    TruncatedPayload);
}

TEST_CASE("writer rejects duplicate and reserved names") {
    NamedTensor t;
    t.name = "x";
    t.tensor.shape = {1};
    t.tensor.values = {0.0f};
    CHECK_THROWS_AS(write_checkpoint({t, t}, {}), DuplicateName);
    NamedTensor m = t;
    m.name = "__metadata__";
    CHECK_THROWS_AS(write_checkpoint({m}, {}), DuplicateName);
}

TEST_CASE("empty checkpoint writes a bare header") {
    const auto bytes = write_checkpoint({}, {});
    uint64_t len = 0;
    std::memcpy(&len, bytes.data(), 8);
    CHECK(len == 2);
    CHECK(std::string(reinterpret_cast<const char*>(bytes.data()) + 8, 2) == "{}");
    const auto index = parse_header(bytes);
    CHECK(index.entries.empty());
    CHECK(index.metadata.empty());
}

TEST_CASE("canonical emission: identical input bytes, sorted header keys") {
    std::vector<NamedTensor> entries;
    for (const char* name : {"zz", "aa", "mm"}) {
        NamedTensor t;
        t.name = name;
        t.tensor.shape = {2};
        t.tensor.values = {1.0f, 2.0f};
        entries.push_back(t);
    }
    const auto once = write_checkpoint(entries, {{"k", "v"}});
    const auto twice = write_checkpoint(entries, {{"k", "v"}});
    CHECK(once == twice);

    uint64_t len = 0;
    std::memcpy(&len, once.data(), 8);
    const std::string header(reinterpret_cast<const char*>(once.data()) + 8, len);
    CHECK(header.find(' ') == std::string::npos);  // compact
    CHECK(header.find("__metadata__") < header.find("\"aa\""));
    CHECK(header.find("\"aa\"") < header.find("\"mm\""));
    CHECK(header.find("\"mm\"") < header.find("\"zz\""));
    // payload order stays the given entry order, not key order
    const auto index = parse_header(once);
    CHECK(index.at("zz").begin == 0);
    CHECK(index.at("aa").begin == 8);
}

TEST_CASE("write F32 1.0 as BF16 then read gives exactly 1.0") {
    NamedTensor t;
    t.name = "w";
    t.dtype = DType::BF16;
    t.tensor.shape = {1};
    t.tensor.values = {1.0f};
    const auto bytes = write_checkpoint({t}, {});
    const auto index = parse_header(bytes);
    CHECK(read_tensor(index, "w", bytes).values[0] == 1.0f);
}

TEST_CASE("zero-size shapes round trip") {
    NamedTensor scalar;
    scalar.name = "scalar";
    scalar.tensor.shape = {};  // empty shape = one element
    scalar.tensor.values = {7.5f};
    NamedTensor empty;
    empty.name = "empty";
    empty.tensor.shape = {0, 3};
    const auto bytes = write_checkpoint({scalar, empty}, {});
    const auto index = parse_header(bytes);
    CHECK(index.at("scalar").num_elements() == 1);
    CHECK(index.at("empty").num_elements() == 0);
    CHECK(read_tensor(index, "scalar", bytes).values == std::vector<float>{7.5f});
    CHECK(read_tensor(index, "empty", bytes).values.empty());
}

TEST_CASE("non-finite values pass through unchanged in F32") {
    NamedTensor t;
    t.name = "w";
    t.tensor.shape = {3};
    t.tensor.values = {std::numeric_limits<float>::quiet_NaN(),
                       std::numeric_limits<float>::infinity(), -0.0f};
    const auto bytes = write_checkpoint({t}, {});
    const auto index = parse_header(bytes);
    const auto back = read_tensor(index, "w", bytes);
    CHECK(std::isnan(back.values[0]));
    CHECK(std::isinf(back.values[1]));
    CHECK(std::signbit(back.values[2]));
    CHECK(back.values[2] == 0.0f);
}

TEST_CASE("round-trip property: write then parse reproduces entries, metadata, F32 payloads") {
    std::mt19937_64 rng(2024);
    for (int iter = 0; iter < 60; ++iter) {
        const auto cp = random_checkpoint(rng);
        const auto bytes = write_checkpoint(cp.entries, cp.metadata);
        const auto index = parse_header(bytes);
        REQUIRE(index.entries.size() == cp.entries.size());
        CHECK(index.metadata == cp.metadata);
        for (const auto& nt : cp.entries) {
            const auto& e = index.at(nt.name);
            CHECK(e.dtype == nt.dtype);
            CHECK(e.shape == nt.tensor.shape);
            const auto back = read_tensor(index, nt.name, bytes);
            REQUIRE(back.values.size() == nt.tensor.values.size());
            if (nt.dtype == DType::F32) {
                for (size_t i = 0; i < back.values.size(); ++i) {
                    CHECK(std::bit_cast<uint32_t>(back.values[i]) ==
                          std::bit_cast<uint32_t>(nt.tensor.values[i]));
                }
            } else {
                // 16-bit dtypes: reading back and re-encoding must be stable
                std::vector<std::byte> once(2 * back.values.size());
                encode_values(nt.dtype, back.values, once);
                std::vector<float> again(back.values.size());
                decode_values(nt.dtype, once, again);
                CHECK(again == back.values);
            }
        }
    }
}

TEST_CASE("CheckpointFile reads from disk") {
    const auto dir = std::filesystem::temp_directory_path() / "mergeval_test_store";
    std::filesystem::create_directories(dir);
    const auto path = dir / "small.safetensors";

    NamedTensor t;
    t.name = "layer.weight";
    t.tensor.shape = {2, 2};
    t.tensor.values = {1.0f, 2.0f, 3.0f, 4.0f};
    write_checkpoint({t}, {{"origin", "test"}}, path);

    const auto cf = CheckpointFile::open(path);
    CHECK(cf.index().metadata.at("origin") == "test");
    CHECK(cf.read("layer.weight").values == std::vector<float>{1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(cf.read_raw("layer.weight").size() == 16);
    CHECK_THROWS_AS(cf.read("nope"), UnknownTensor);
    std::filesystem::remove_all(dir);
}
