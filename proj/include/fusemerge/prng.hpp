#pragma once

#include <cstdint>
#include <string_view>

namespace fusemerge {

// FNV-1a, 64-bit.
struct Fnv1a64 {
    std::uint64_t state = 0xcbf29ce484222325ull;

    void feed(std::uint8_t byte) {
        state ^= byte;
        state *= 0x100000001b3ull;
    }
    void feed_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) feed(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void feed_bytes(std::string_view s) {
        for (char c : s) feed(static_cast<std::uint8_t>(c));
    }
};

struct SplitMix64 {
    std::uint64_t state = 0;

    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Top 53 bits over 2^53.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

// One deterministic uniform draw per (seed, target index, tensor name, flat
// index): splitmix64 seeded with the FNV-1a hash of the little-endian key
// bytes. Bit-exact across platforms.
inline double keyed_unit_draw(std::uint64_t seed, std::uint64_t target_index,
                              std::string_view tensor_name, std::uint64_t flat_index) {
    Fnv1a64 h;
    h.feed_u64(seed);
    h.feed_u64(target_index);
    h.feed_bytes(tensor_name);
    h.feed_u64(flat_index);
    SplitMix64 rng{h.state};
    return rng.next_unit();
}

}  // namespace fusemerge
