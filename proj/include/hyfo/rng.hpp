#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hyfo {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Independent generator for one entity (a forecaster, an IFP, a replicate).
/// Streams are keyed by (seed, tag, index), so draws for one entity never
/// depend on how many draws another entity consumed.
inline Rng substream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ fnv1a64(tag));
    k = splitmix64(k ^ index);
    std::seed_seq seq{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    return Rng(seq);
}

/// Uniform [0,1) keyed purely on its inputs; no generator state.
inline double hashed_uniform(std::uint64_t seed, std::string_view key) {
    const std::uint64_t h = splitmix64(splitmix64(seed) ^ fnv1a64(key));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace hyfo
