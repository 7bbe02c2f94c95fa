#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace polyalign {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

using Rng = std::mt19937_64;

/// Derives an independent generator for a named purpose ("corpus", "init",
/// "plan", ...) from one run seed, so consumers never share a stream.
inline Rng named_stream(std::uint64_t seed, std::string_view name) {
    return Rng(splitmix64(seed ^ splitmix64(fnv1a64(name))));
}

} // namespace polyalign
