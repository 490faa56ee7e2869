#include "mergeval/dtype.hpp"

#include <bit>
#include <cassert>
#include <cstring>

#include "mergeval/errors.hpp"

namespace mergeval::tensorstore {

std::string_view dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
    }
    return "?";
}

DType parse_dtype(std::string_view s) {
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    throw MalformedHeader("unknown dtype string: '" + std::string(s) + "'");
}

float f16_to_f32(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    int exp = (h >> 10) & 0x1F;
    uint32_t man = h & 0x3FFu;
    uint32_t bits;
    if (exp == 31) {
        bits = sign | 0x7F800000u | (man << 13);  // inf / nan, payload kept
    } else if (exp == 0) {
        if (man == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((man & 0x400u) == 0) {
                man <<= 1;
                --exp;
            }
            man &= 0x3FFu;
            bits = sign | (static_cast<uint32_t>(exp) << 23) | (man << 13);
        }
    } else {
        bits = sign | (static_cast<uint32_t>(exp - 15 + 127) << 23) | (man << 13);
    }
    return std::bit_cast<float>(bits);
}

uint16_t f32_to_f16(float f) {
    const uint32_t x = std::bit_cast<uint32_t>(f);
    const uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
    const uint32_t absx = x & 0x7FFFFFFFu;

    if (absx >= 0x7F800000u) {
        if (absx > 0x7F800000u) {
            // nan: keep the top payload bits, force a nonzero mantissa
            uint16_t payload = static_cast<uint16_t>((x >> 13) & 0x3FFu);
            if (payload == 0) payload = 0x200;
            return static_cast<uint16_t>(sign | 0x7C00u | payload);
        }
        return static_cast<uint16_t>(sign | 0x7C00u);  // inf
    }
    // 0x477FF000 = 65520.0f, the midpoint above the largest finite half
    // (65504); at and beyond it RNE rounds to infinity.
    if (absx >= 0x477FF000u) {
        return static_cast<uint16_t>(sign | 0x7C00u);
    }

    int exp = static_cast<int>(absx >> 23) - 127 + 15;
    const uint32_t man = absx & 0x7FFFFFu;
    if (exp >= 1) {
        // normal target: drop 13 mantissa bits with round-to-nearest-even
        const uint32_t rounded = man + 0xFFFu + ((man >> 13) & 1u);
        uint32_t hman = rounded >> 13;
        if (hman == 0x400u) {
            hman = 0;
            ++exp;
        }
        if (exp >= 31) return static_cast<uint16_t>(sign | 0x7C00u);
        return static_cast<uint16_t>(sign | (exp << 10) | hman);
    }
    // subnormal target: shift the full significand right, RNE on dropped bits
    const int shift = 14 - exp;  // exp <= 0, so shift >= 14
    if (shift > 24) return sign; // below half of the smallest subnormal
    const uint32_t m = man | 0x800000u;
    const uint32_t dropped = m & ((1u << shift) - 1u);
    uint32_t hman = m >> shift;
    const uint32_t halfway = 1u << (shift - 1);
    if (dropped > halfway || (dropped == halfway && (hman & 1u))) ++hman;
    return static_cast<uint16_t>(sign | hman);  // hman may carry into exponent bit 0x400: smallest normal
}

float bf16_to_f32(uint16_t b) {
    return std::bit_cast<float>(static_cast<uint32_t>(b) << 16);
}

uint16_t f32_to_bf16(float f) {
    const uint32_t x = std::bit_cast<uint32_t>(f);
    if ((x & 0x7F800000u) == 0x7F800000u) {
        // inf / nan: truncate, but never let a nan collapse to an infinity
        uint16_t top = static_cast<uint16_t>(x >> 16);
        if ((x & 0x7FFFFFu) != 0 && (top & 0x7Fu) == 0) top |= 0x40;
        return top;
    }
    const uint32_t rounded = x + 0x7FFFu + ((x >> 16) & 1u);
    return static_cast<uint16_t>(rounded >> 16);
}

namespace {

uint16_t load_le16(const std::byte* p) {
    return static_cast<uint16_t>(std::to_integer<uint16_t>(p[0]) |
                                 (std::to_integer<uint16_t>(p[1]) << 8));
}

void store_le16(std::byte* p, uint16_t v) {
    p[0] = static_cast<std::byte>(v & 0xFF);
    p[1] = static_cast<std::byte>(v >> 8);
}

}  // namespace

void decode_values(DType d, std::span<const std::byte> bytes, std::span<float> values) {
    assert(bytes.size() == byte_width(d) * values.size());
    switch (d) {
        case DType::F32: {
            for (size_t i = 0; i < values.size(); ++i) {
                uint32_t u = 0;
                std::memcpy(&u, bytes.data() + 4 * i, 4);  // little-endian host assumed
                values[i] = std::bit_cast<float>(u);
            }
            break;
        }
        case DType::F16:
            for (size_t i = 0; i < values.size(); ++i) {
                values[i] = f16_to_f32(load_le16(bytes.data() + 2 * i));
            }
            break;
        case DType::BF16:
            for (size_t i = 0; i < values.size(); ++i) {
                values[i] = bf16_to_f32(load_le16(bytes.data() + 2 * i));
            }
            break;
    }
}

void encode_values(DType d, std::span<const float> values, std::span<std::byte> bytes) {
    assert(bytes.size() == byte_width(d) * values.size());
    switch (d) {
        case DType::F32: {
            for (size_t i = 0; i < values.size(); ++i) {
                const uint32_t u = std::bit_cast<uint32_t>(values[i]);
                std::memcpy(bytes.data() + 4 * i, &u, 4);
            }
            break;
        }
        case DType::F16:
            for (size_t i = 0; i < values.size(); ++i) {
                store_le16(bytes.data() + 2 * i, f32_to_f16(values[i]));
            }
            break;
        case DType::BF16:
            for (size_t i = 0; i < values.size(); ++i) {
                store_le16(bytes.data() + 2 * i, f32_to_bf16(values[i]));
            }
            break;
    }
}

}  // namespace mergeval::tensorstore
