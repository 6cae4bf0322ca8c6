#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace vispe {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream for (seed, tag); streams for different tags do not
// depend on the order in which they are created.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(seed ^ splitmix64(tag));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag) {
    return Rng(derive_seed(seed, tag));
}

// Full engine state as text, for checkpoints.
std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace vispe
