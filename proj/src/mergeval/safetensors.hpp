#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mergeval/dtype.hpp"
#include "mergeval/tensor.hpp"

namespace mergeval::tensorstore {

struct TensorEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<uint64_t> shape;
    uint64_t begin = 0;  // payload-relative, half-open [begin, end)
    uint64_t end = 0;

    uint64_t num_elements() const {
        uint64_t n = 1;
        for (uint64_t d : shape) n *= d;
        return n;
    }
    uint64_t num_bytes() const { return end - begin; }
};

struct CheckpointIndex {
    std::vector<TensorEntry> entries;  // header order
    std::map<std::string, std::string> metadata;
    uint64_t header_len = 0;
    uint64_t payload_origin = 0;  // absolute offset of payload start (8 + header_len)
    uint64_t payload_len = 0;

    const TensorEntry* find(std::string_view name) const;
    const TensorEntry& at(std::string_view name) const;  // throws UnknownTensor

    // Builds the name lookup; parse_header calls it once. Hand-assembled
    // indexes may skip it, find() then falls back to a linear scan.
    void rebuild_lookup() const;

private:
    mutable std::unordered_map<std::string, size_t> by_name_;
};

struct ParseOptions {
    // Files this tool writes are always gap-free; third-party files may carry
    // unused payload bytes when this is set.
    bool allow_gaps = false;
};

// Validates the container header. Only the 8-byte length prefix and the JSON
// header bytes are inspected; the payload is never read.
CheckpointIndex parse_header(std::span<const std::byte> file_bytes,
                             const ParseOptions& opts = {});

// Same, for callers that hold only the header prefix of a larger file.
// header_bytes must cover at least the first 8 + header_len bytes.
CheckpointIndex parse_header(std::span<const std::byte> header_bytes, uint64_t total_file_size,
                             const ParseOptions& opts);

// Decodes one tensor from a whole-file byte buffer.
Tensor read_tensor(const CheckpointIndex& index, std::string_view name,
                   std::span<const std::byte> file_bytes);

struct NamedTensor {
    std::string name;
    Tensor tensor;
    DType dtype = DType::F32;
};

// Serializes a checkpoint: canonical header (sorted keys, compact JSON),
// payload laid out contiguously in the given entry order.
std::vector<std::byte> write_checkpoint(const std::vector<NamedTensor>& entries,
                                        const std::map<std::string, std::string>& metadata);
void write_checkpoint(const std::vector<NamedTensor>& entries,
                      const std::map<std::string, std::string>& metadata,
                      const std::filesystem::path& path);

// File-backed checkpoint. Tensors are decoded on demand; reads of distinct
// tensors are independent and may run concurrently.
class CheckpointFile {
public:
    static CheckpointFile open(const std::filesystem::path& path, const ParseOptions& opts = {});

    const CheckpointIndex& index() const { return index_; }
    const std::filesystem::path& path() const { return path_; }

    Tensor read(std::string_view name) const;
    std::vector<std::byte> read_raw(std::string_view name) const;

private:
    std::filesystem::path path_;
    CheckpointIndex index_;
};

}  // namespace mergeval::tensorstore
