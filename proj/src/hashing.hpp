#pragma once

#include <cstdint>

namespace mates::hashing {

// splitmix64 finalizer; the common mixing step for every hashed-feature
// scheme so unrelated modules never disagree on bucket placement.
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace mates::hashing
