#pragma once

#include <cstdint>
#include <initializer_list>

namespace tom {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen for cross-language
// bit-reproducibility: the whole pipeline derives every random draw
// from this generator in a fixed order.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 mantissa bits.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Uniform in [-1, 1).
    double symmetric() { return 2.0 * next_double() - 1.0; }

private:
    uint64_t state_;
};

// Stateless finalizer used for seed derivation.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Folds any number of words into one seed. Left fold, order-sensitive.
inline uint64_t mix_seed(std::initializer_list<uint64_t> words) {
    uint64_t h = 0x243F6A8885A308D3ULL;  // pi fraction, arbitrary fixed start
    for (uint64_t w : words) h = mix64(h ^ mix64(w));
    return h;
}

}  // namespace tom
