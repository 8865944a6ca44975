#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace faceval {

// FNV-1a, 64 bit. Stable across platforms and runs; used for ids, cache keys and seeds.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::string_view label) noexcept {
    return mix_seed(a, fnv1a64(label));
}

std::string to_hex(std::uint64_t value, int digits = 16);

/// Uniform integer in [0, n). Rejection sampling over mt19937_64 so results
/// do not depend on the standard library's distribution implementations.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

/// Uniform real in [0, 1) with 53 bits of precision.
double uniform_unit(std::mt19937_64& rng);

}  // namespace faceval
