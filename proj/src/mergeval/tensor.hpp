#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace mergeval::tensorstore {

// Row-major tensor in working precision (F32 values).
struct Tensor {
    std::vector<uint64_t> shape;
    std::vector<float> values;

    uint64_t num_elements() const {
        uint64_t n = 1;
        for (uint64_t d : shape) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<uint64_t> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.values.assign(t.num_elements(), 0.0f);
        return t;
    }
};

}  // namespace mergeval::tensorstore
