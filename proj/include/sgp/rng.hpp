#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sgp {

// splitmix64 finalizer; used to turn (root seed, purpose tag) into
// independent engine seeds so that all consumers draw from disjoint streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a child seed from a root seed and a textual purpose tag
// (e.g. "init", "data", "shuffle"). Same inputs always give the same seed,
// so paired runs that differ only in projection math share every stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a over the tag
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return mix_seed(root ^ mix_seed(h ^ mix_seed(index)));
}

inline std::mt19937_64 make_engine(std::uint64_t root, std::string_view tag,
                                   std::uint64_t index = 0) {
    return std::mt19937_64(derive_seed(root, tag, index));
}

} // namespace sgp
