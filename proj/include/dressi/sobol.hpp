#pragma once

#include <cstdint>

namespace dressi {

// Two-dimensional Sobol sequence, 32-bit direction vectors.
// Dimension 0 is the van der Corput sequence in base 2; dimension 1 uses the
// primitive polynomial x+1 with m1=1 (the standard second Sobol dimension).
class Sobol2D {
public:
    Sobol2D() {
        for (int i = 0; i < 32; ++i) v0_[i] = 1u << (31 - i);
        v1_[0] = 1u << 31;
        for (int i = 1; i < 32; ++i) v1_[i] = v1_[i - 1] ^ (v1_[i - 1] >> 1);
    }

    // Point i of the sequence, components in [0,1).
    void sample(uint32_t index, double& x, double& y) const {
        uint32_t a = 0, b = 0;
        for (uint32_t i = index, bit = 0; i; i >>= 1, ++bit) {
            if (i & 1u) {
                a ^= v0_[bit];
                b ^= v1_[bit];
            }
        }
        constexpr double inv = 1.0 / 4294967296.0;
        x = a * inv;
        y = b * inv;
    }

private:
    uint32_t v0_[32];
    uint32_t v1_[32];
};

}  // namespace dressi
