#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace mergeval {

// FIPS 180-4 SHA-256, sufficient for content digests in sweep manifests.
class Sha256 {
public:
    Sha256();
    void update(std::span<const std::byte> data);
    void update(const void* data, size_t len);
    // Finalizes and returns the lowercase hex digest. update() must not be
    // called afterwards.
    std::string hex_digest();

private:
    void process_block(const uint8_t* block);

    uint32_t state_[8];
    uint64_t total_len_ = 0;
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
};

std::string sha256_hex(std::span<const std::byte> data);
std::string sha256_hex(const std::string& data);

}  // namespace mergeval
