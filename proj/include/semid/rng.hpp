#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace semid {

inline constexpr const char* kRngId = "mt19937_64+splitmix64/v1";

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent engine for (seed, stream); streams separate the uses of one
/// seed (parameter init, input signal, noise, ...).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return std::mt19937_64(splitmix64(splitmix64(seed) ^ (0xd1b54a32d192ed03ULL * (stream + 1))));
}

namespace stream {
inline constexpr std::uint64_t params = 1;
inline constexpr std::uint64_t input = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t input_noise = 4;
} // namespace stream

} // namespace semid
