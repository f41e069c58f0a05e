#pragma once

#include <cstdint>
#include <random>

namespace gradselect {

// splitmix64, used to derive independent seeds from a base seed plus a
// stream tag so that unrelated random decisions never share a stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(splitmix64(base) ^ (0x6a09e667f3bcc909ULL + stream));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(seed);
}

}  // namespace gradselect
