#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mergeval::tensorstore {

enum class DType : uint8_t {
    F32,
    F16,
    BF16,
};

constexpr size_t byte_width(DType d) {
    return d == DType::F32 ? 4 : 2;
}

std::string_view dtype_name(DType d);

// Throws MalformedHeader on anything other than "F32"/"F16"/"BF16".
DType parse_dtype(std::string_view s);

// Scalar conversions. Decoding is exact; encoding rounds to nearest, ties to
// even, preserving NaN (with payload where it fits) and infinities.
float f16_to_f32(uint16_t h);
uint16_t f32_to_f16(float f);
float bf16_to_f32(uint16_t b);
uint16_t f32_to_bf16(float f);

// Bulk codecs between raw little-endian payload bytes and F32 working values.
// `bytes` must hold exactly byte_width(d) * values.size() bytes.
void decode_values(DType d, std::span<const std::byte> bytes, std::span<float> values);
void encode_values(DType d, std::span<const float> values, std::span<std::byte> bytes);

}  // namespace mergeval::tensorstore
