#pragma once

#include <cstdint>
#include <random>

namespace ivgen {

// Derives independent child seeds from a base seed and a stream id, so that
// per-clip / per-worker generators never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(rng);
}

template <typename T>
inline T gaussian(Rng& rng, T mean = T(0), T stddev = T(1)) {
    std::normal_distribution<T> d(mean, stddev);
    return d(rng);
}

}  // namespace ivgen
