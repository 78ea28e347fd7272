#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "padlock/error.hpp"

namespace padlock {

// Byte-stream source consumed by the randomization step. Single-owner:
// each protected interval draws from its own stream position.
class RandomSource {
public:
    virtual ~RandomSource() = default;
    virtual void fill(std::uint8_t* out, std::size_t n) = 0;
};

// ChaCha stream cipher with 8 rounds, used as a deterministic, seedable
// CSPRNG: 32-byte key, 12-byte nonce, 32-bit block counter. The same seed
// always produces the same stream. Output is buffered in 64-byte blocks;
// the buffer is drained before the next block is generated.
//
// Caveats: no entropy-pool management and no fork safety — a forked child
// must reseed itself.
class ChaCha8Rng final : public RandomSource {
public:
    static constexpr std::size_t kKeyBytes = 32;
    static constexpr std::size_t kNonceBytes = 12;
    static constexpr int kRounds = 8;

    ChaCha8Rng(std::span<const std::uint8_t, kKeyBytes> key,
               std::span<const std::uint8_t, kNonceBytes> nonce);

    // Production seeding from the platform secure source (getentropy).
    static ChaCha8Rng from_system_entropy();

    // Next n keystream bytes. Throws ReseedRequiredError once the 32-bit
    // block counter is exhausted (after 2^32 blocks of one seed).
    void fill(std::uint8_t* out, std::size_t n) override;
    std::vector<std::uint8_t> next_bytes(std::size_t n);

    // Repositions the block counter and discards buffered output. Intended
    // for tests (counter-exhaustion paths) — block counters must never be
    // reused under one (key, nonce).
    void seek_block(std::uint32_t block);

    std::uint32_t block_counter() const { return counter_; }

private:
    void refill_();

    std::array<std::uint32_t, 8> key_words_{};
    std::array<std::uint32_t, 3> nonce_words_{};
    std::uint32_t counter_ = 0;
    bool exhausted_ = false;
    std::array<std::uint8_t, 64> buf_{};
    std::size_t buf_pos_ = 64;
};

}  // namespace padlock
