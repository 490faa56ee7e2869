#include "mergeval/safetensors.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"

#include "mergeval/errors.hpp"
#include "mergeval/io.hpp"

namespace mergeval::tensorstore {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kMetadataKey = "__metadata__";

// nlohmann's DOM parser silently keeps the last value for a duplicated key,
// so duplicate tensor names are caught with a dedicated SAX pass.
struct DuplicateKeySax : nlohmann::json_sax<nlohmann::json> {
    int depth = 0;
    std::set<std::string> top_level_keys;

    bool null() override { return true; }
    bool boolean(bool) override { return true; }
    bool number_integer(number_integer_t) override { return true; }
    bool number_unsigned(number_unsigned_t) override { return true; }
    bool number_float(number_float_t, const string_t&) override { return true; }
    bool string(string_t&) override { return true; }
    bool binary(binary_t&) override { return true; }
    bool start_object(std::size_t) override {
        ++depth;
        return true;
    }
    bool key(string_t& k) override {
        if (depth == 1 && !top_level_keys.insert(k).second) {
            throw DuplicateName("duplicate tensor name in header: '" + k + "'");
        }
        return true;
    }
    bool end_object() override {
        --depth;
        return true;
    }
    bool start_array(std::size_t) override { return true; }
    bool end_array() override { return true; }
    bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception& ex) override {
        throw MalformedHeader("header is not valid JSON at byte " + std::to_string(pos) + ": " + ex.what());
    }
};

uint64_t get_u64_field(const ordered_json& j, const std::string& tensor, const char* what) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<int64_t>() >= 0)) {
        throw MalformedHeader("tensor '" + tensor + "': " + what + " must be a non-negative integer");
    }
    return j.get<uint64_t>();
}

TensorEntry parse_entry(const std::string& name, const ordered_json& obj) {
    if (!obj.is_object()) {
        throw MalformedHeader("tensor '" + name + "': header value must be an object");
    }
    for (const auto& [k, v] : obj.items()) {
        (void)v;
        if (k != "dtype" && k != "shape" && k != "data_offsets") {
            throw MalformedHeader("tensor '" + name + "': unknown header field '" + k + "'");
        }
    }
    if (!obj.contains("dtype") || !obj.contains("shape") || !obj.contains("data_offsets")) {
        throw MalformedHeader("tensor '" + name + "': missing dtype/shape/data_offsets");
    }
    TensorEntry e;
    e.name = name;
    if (!obj["dtype"].is_string()) throw MalformedHeader("tensor '" + name + "': dtype must be a string");
    e.dtype = parse_dtype(obj["dtype"].get<std::string>());
    if (!obj["shape"].is_array()) throw MalformedHeader("tensor '" + name + "': shape must be an array");
    for (const auto& d : obj["shape"]) e.shape.push_back(get_u64_field(d, name, "shape entry"));
    const auto& off = obj["data_offsets"];
    if (!off.is_array() || off.size() != 2) {
        throw MalformedHeader("tensor '" + name + "': data_offsets must be [begin, end]");
    }
    e.begin = get_u64_field(off[0], name, "data_offsets begin");
    e.end = get_u64_field(off[1], name, "data_offsets end");
    if (e.begin > e.end) {
        throw MalformedHeader("tensor '" + name + "': data_offsets begin > end");
    }
    const uint64_t expected = byte_width(e.dtype) * e.num_elements();
    if (e.end - e.begin != expected) {
        throw MalformedHeader("tensor '" + name + "': data_offsets span " +
                              std::to_string(e.end - e.begin) + " bytes, dtype*shape requires " +
                              std::to_string(expected));
    }
    return e;
}

void validate_coverage(const CheckpointIndex& index, bool allow_gaps) {
    std::vector<const TensorEntry*> sorted;
    sorted.reserve(index.entries.size());
    for (const auto& e : index.entries) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(), [](const TensorEntry* a, const TensorEntry* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    uint64_t cursor = 0;
    for (const TensorEntry* e : sorted) {
        if (e->begin < cursor) {
            throw OverlapError("tensor '" + e->name + "' overlaps a previous byte range at offset " +
                               std::to_string(e->begin));
        }
        if (e->begin > cursor && !allow_gaps) {
            throw OverlapError("gap in payload coverage before tensor '" + e->name + "' (bytes " +
                               std::to_string(cursor) + ".." + std::to_string(e->begin) + ")");
        }
        cursor = e->end;
    }
    if (cursor > index.payload_len) {
        throw OverlapError("header declares " + std::to_string(cursor) +
                           " payload bytes but the file holds " + std::to_string(index.payload_len));
    }
    if (cursor < index.payload_len && !allow_gaps) {
        throw OverlapError("payload has " + std::to_string(index.payload_len - cursor) +
                           " trailing bytes not covered by any tensor");
    }
}

}  // namespace

const TensorEntry* CheckpointIndex::find(std::string_view name) const {
    // the lookup map is built once by parse_header; fall back to a scan for
    // hand-assembled indexes so concurrent readers never mutate shared state
    if (by_name_.size() == entries.size()) {
        auto it = by_name_.find(std::string(name));
        return it == by_name_.end() ? nullptr : &entries[it->second];
    }
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

const TensorEntry& CheckpointIndex::at(std::string_view name) const {
    const TensorEntry* e = find(name);
    if (!e) throw UnknownTensor("no tensor named '" + std::string(name) + "' in checkpoint");
    return *e;
}

void CheckpointIndex::rebuild_lookup() const {
    by_name_.clear();
    for (size_t i = 0; i < entries.size(); ++i) by_name_[entries[i].name] = i;
}

CheckpointIndex parse_header(std::span<const std::byte> file_bytes, const ParseOptions& opts) {
    return parse_header(file_bytes, file_bytes.size(), opts);
}

CheckpointIndex parse_header(std::span<const std::byte> file_bytes, uint64_t total_file_size,
                             const ParseOptions& opts) {
    if (total_file_size < 8 || file_bytes.size() < 8) {
        throw MalformedHeader("file too small: the header length field (bytes 0-8) is missing");
    }
    uint64_t header_len = 0;
    std::memcpy(&header_len, file_bytes.data(), 8);  // little-endian host assumed
    if (header_len == 0 || header_len > total_file_size - 8) {
        throw MalformedHeader("bad header length at bytes 0-8: " + std::to_string(header_len) +
                              " (file payload after prefix is " + std::to_string(total_file_size - 8) +
                              " bytes)");
    }
    if (file_bytes.size() < 8 + header_len) {
        throw MalformedHeader("header bytes are truncated: need " + std::to_string(8 + header_len) +
                              ", got " + std::to_string(file_bytes.size()));
    }
    const char* json_begin = reinterpret_cast<const char*>(file_bytes.data()) + 8;
    const char* json_end = json_begin + header_len;

    DuplicateKeySax sax;
    nlohmann::json::sax_parse(json_begin, json_end, &sax);

    ordered_json doc = ordered_json::parse(json_begin, json_end, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw MalformedHeader("header JSON must be an object");
    }

    CheckpointIndex index;
    index.header_len = header_len;
    index.payload_origin = 8 + header_len;
    index.payload_len = total_file_size - index.payload_origin;

    for (const auto& [key, value] : doc.items()) {
        if (key == kMetadataKey) {
            if (!value.is_object()) throw MalformedHeader("__metadata__ must be an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) {
                    throw MalformedHeader("__metadata__ values must be strings (key '" + mk + "')");
                }
                index.metadata[mk] = mv.get<std::string>();
            }
            continue;
        }
        index.entries.push_back(parse_entry(key, value));
    }

    validate_coverage(index, opts.allow_gaps);
    index.rebuild_lookup();
    return index;
}

Tensor read_tensor(const CheckpointIndex& index, std::string_view name,
                   std::span<const std::byte> file_bytes) {
    const TensorEntry& e = index.at(name);
    const uint64_t abs_begin = index.payload_origin + e.begin;
    const uint64_t abs_end = index.payload_origin + e.end;
    if (abs_end > file_bytes.size()) {
        throw TruncatedPayload("tensor '" + e.name + "' needs bytes up to " + std::to_string(abs_end) +
                               " but only " + std::to_string(file_bytes.size()) + " are available");
    }
    Tensor t;
    t.shape = e.shape;
    t.values.resize(e.num_elements());
    decode_values(e.dtype, file_bytes.subspan(abs_begin, e.num_bytes()), t.values);
    return t;
}

std::vector<std::byte> write_checkpoint(const std::vector<NamedTensor>& entries,
                                        const std::map<std::string, std::string>& metadata) {
    nlohmann::json header = nlohmann::json::object();  // plain json sorts keys: canonical emission
    if (!metadata.empty()) {
        header[std::string(kMetadataKey)] = metadata;
    }
    uint64_t offset = 0;
    for (const auto& nt : entries) {
        if (nt.name == kMetadataKey) {
            throw DuplicateName("'" + std::string(kMetadataKey) + "' is reserved and cannot name a tensor");
        }
        if (header.contains(nt.name)) {
            throw DuplicateName("duplicate tensor name: '" + nt.name + "'");
        }
        const uint64_t nbytes = byte_width(nt.dtype) * nt.tensor.num_elements();
        if (nt.tensor.values.size() != nt.tensor.num_elements()) {
            throw ShapeMismatch("tensor '" + nt.name + "': value count " +
                                std::to_string(nt.tensor.values.size()) + " does not match shape");
        }
        header[nt.name] = {
            {"dtype", std::string(dtype_name(nt.dtype))},
            {"shape", nt.tensor.shape},
            {"data_offsets", {offset, offset + nbytes}},
        };
        offset += nbytes;
    }
    const std::string header_str = header.dump();

    std::vector<std::byte> out;
    out.resize(8 + header_str.size() + offset);
    const uint64_t header_len = header_str.size();
    std::memcpy(out.data(), &header_len, 8);
    std::memcpy(out.data() + 8, header_str.data(), header_str.size());

    uint64_t cursor = 8 + header_str.size();
    for (const auto& nt : entries) {
        const uint64_t nbytes = byte_width(nt.dtype) * nt.tensor.num_elements();
        encode_values(nt.dtype, nt.tensor.values, std::span(out.data() + cursor, nbytes));
        cursor += nbytes;
    }
    return out;
}

void write_checkpoint(const std::vector<NamedTensor>& entries,
                      const std::map<std::string, std::string>& metadata,
                      const std::filesystem::path& path) {
    const auto bytes = write_checkpoint(entries, metadata);
    write_file(path, bytes);
}

CheckpointFile CheckpointFile::open(const std::filesystem::path& path, const ParseOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    in.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    if (file_size < 8) throw MalformedHeader("file too small: the header length field (bytes 0-8) is missing");
    std::vector<std::byte> head(8);
    in.read(reinterpret_cast<char*>(head.data()), 8);
    uint64_t header_len = 0;
    std::memcpy(&header_len, head.data(), 8);
    if (header_len == 0 || header_len > file_size - 8) {
        throw MalformedHeader("bad header length at bytes 0-8: " + std::to_string(header_len) +
                              " (file payload after prefix is " + std::to_string(file_size - 8) + " bytes)");
    }
    head.resize(8 + header_len);
    if (!in.read(reinterpret_cast<char*>(head.data()) + 8, static_cast<std::streamsize>(header_len))) {
        throw IoError("read failed: " + path.string());
    }

    CheckpointFile cf;
    cf.path_ = path;
    cf.index_ = parse_header(head, file_size, opts);
    return cf;
}

Tensor CheckpointFile::read(std::string_view name) const {
    const TensorEntry& e = index_.at(name);
    const auto raw = read_raw(name);
    Tensor t;
    t.shape = e.shape;
    t.values.resize(e.num_elements());
    decode_values(e.dtype, raw, t.values);
    return t;
}

std::vector<std::byte> CheckpointFile::read_raw(std::string_view name) const {
    const TensorEntry& e = index_.at(name);
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path_.string());
    in.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(in.tellg());
    const uint64_t abs_begin = index_.payload_origin + e.begin;
    if (abs_begin + e.num_bytes() > file_size) {
        throw TruncatedPayload("tensor '" + e.name + "' needs bytes up to " +
                               std::to_string(abs_begin + e.num_bytes()) + " but the file holds " +
                               std::to_string(file_size));
    }
    in.seekg(static_cast<std::streamoff>(abs_begin));
    std::vector<std::byte> raw(e.num_bytes());
    if (!raw.empty() && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw IoError("read failed: " + path_.string());
    }
    return raw;
}

}  // namespace mergeval::tensorstore
