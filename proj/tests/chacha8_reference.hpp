#pragma once

// Independent ChaCha/8 reference used only as a test oracle. Written from
// the cipher definition (array state, explicit quarter-round function,
// byte-at-a-time serialization) and deliberately kept structurally
// different from the production implementation.

#include <array>
#include <cstdint>
#include <cstddef>
#include <vector>

namespace chacha8_ref {

inline std::uint32_t rotl32(std::uint32_t v, int n) {
    return (v << n) | (v >> (32 - n));
}

inline void quarter_round(std::array<std::uint32_t, 16>& s, int a, int b, int c, int d) {
    s[a] += s[b]; s[d] ^= s[a]; s[d] = rotl32(s[d], 16);
    s[c] += s[d]; s[b] ^= s[c]; s[b] = rotl32(s[b], 12);
    s[a] += s[b]; s[d] ^= s[a]; s[d] = rotl32(s[d], 8);
    s[c] += s[d]; s[b] ^= s[c]; s[b] = rotl32(s[b], 7);
}

inline std::array<std::uint8_t, 64> block(const std::array<std::uint8_t, 32>& key,
                                          std::uint32_t counter,
                                          const std::array<std::uint8_t, 12>& nonce) {
    std::array<std::uint32_t, 16> state{};
    state[0] = 0x61707865u;
    state[1] = 0x3320646eu;
    state[2] = 0x79622d32u;
    state[3] = 0x6b206574u;
    for (int i = 0; i < 8; ++i) {
        state[4 + i] = static_cast<std::uint32_t>(key[4 * i]) |
                       (static_cast<std::uint32_t>(key[4 * i + 1]) << 8) |
                       (static_cast<std::uint32_t>(key[4 * i + 2]) << 16) |
                       (static_cast<std::uint32_t>(key[4 * i + 3]) << 24);
    }
    state[12] = counter;
    for (int i = 0; i < 3; ++i) {
        state[13 + i] = static_cast<std::uint32_t>(nonce[4 * i]) |
                        (static_cast<std::uint32_t>(nonce[4 * i + 1]) << 8) |
                        (static_cast<std::uint32_t>(nonce[4 * i + 2]) << 16) |
                        (static_cast<std::uint32_t>(nonce[4 * i + 3]) << 24);
    }

    std::array<std::uint32_t, 16> working = state;
    for (int round = 0; round < 4; ++round) {  // 4 double rounds = 8 rounds
        quarter_round(working, 0, 4, 8, 12);
        quarter_round(working, 1, 5, 9, 13);
        quarter_round(working, 2, 6, 10, 14);
        quarter_round(working, 3, 7, 11, 15);
        quarter_round(working, 0, 5, 10, 15);
        quarter_round(working, 1, 6, 11, 12);
        quarter_round(working, 2, 7, 8, 13);
        quarter_round(working, 3, 4, 9, 14);
    }

    std::array<std::uint8_t, 64> out{};
    for (int i = 0; i < 16; ++i) {
        std::uint32_t word = working[i] + state[i];
        out[4 * i] = static_cast<std::uint8_t>(word & 0xff);
        out[4 * i + 1] = static_cast<std::uint8_t>((word >> 8) & 0xff);
        out[4 * i + 2] = static_cast<std::uint8_t>((word >> 16) & 0xff);
        out[4 * i + 3] = static_cast<std::uint8_t>((word >> 24) & 0xff);
    }
    return out;
}

// Keystream bytes [offset, offset + n) of the stream that starts at block 0.
inline std::vector<std::uint8_t> keystream(const std::array<std::uint8_t, 32>& key,
                                           const std::array<std::uint8_t, 12>& nonce,
                                           std::uint64_t offset, std::size_t n) {
    std::vector<std::uint8_t> out;
    out.reserve(n);
    std::uint64_t pos = offset - offset % 64;
    while (out.size() < n) {
        auto blk = block(key, static_cast<std::uint32_t>(pos / 64), nonce);
        for (std::size_t i = 0; i < 64 && out.size() < n; ++i, ++pos) {
            if (pos >= offset) out.push_back(blk[i]);
        }
    }
    return out;
}

}  // namespace chacha8_ref
