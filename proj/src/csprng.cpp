#include "padlock/csprng.hpp"

#include <bit>
#include <cstring>

#include <unistd.h>

namespace padlock {

namespace {

inline std::uint32_t load_le32(const std::uint8_t* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    return v;
}

inline void store_le32(std::uint8_t* p, std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    std::memcpy(p, &v, 4);
}

#define PADLOCK_QUARTER_ROUND(a, b, c, d) \
    a += b; d ^= a; d = std::rotl(d, 16);  \
    c += d; b ^= c; b = std::rotl(b, 12);  \
    a += b; d ^= a; d = std::rotl(d, 8);   \
    c += d; b ^= c; b = std::rotl(b, 7);

void chacha8_block(const std::array<std::uint32_t, 8>& key,
                   std::uint32_t counter,
                   const std::array<std::uint32_t, 3>& nonce,
                   std::uint8_t out[64]) {
    // "expand 32-byte k"
    const std::uint32_t c0 = 0x61707865, c1 = 0x3320646e, c2 = 0x79622d32, c3 = 0x6b206574;

    std::uint32_t x0 = c0, x1 = c1, x2 = c2, x3 = c3;
    std::uint32_t x4 = key[0], x5 = key[1], x6 = key[2], x7 = key[3];
    std::uint32_t x8 = key[4], x9 = key[5], x10 = key[6], x11 = key[7];
    std::uint32_t x12 = counter, x13 = nonce[0], x14 = nonce[1], x15 = nonce[2];

    for (int i = 0; i < ChaCha8Rng::kRounds; i += 2) {
        PADLOCK_QUARTER_ROUND(x0, x4, x8, x12)
        PADLOCK_QUARTER_ROUND(x1, x5, x9, x13)
        PADLOCK_QUARTER_ROUND(x2, x6, x10, x14)
        PADLOCK_QUARTER_ROUND(x3, x7, x11, x15)
        PADLOCK_QUARTER_ROUND(x0, x5, x10, x15)
        PADLOCK_QUARTER_ROUND(x1, x6, x11, x12)
        PADLOCK_QUARTER_ROUND(x2, x7, x8, x13)
        PADLOCK_QUARTER_ROUND(x3, x4, x9, x14)
    }

    store_le32(out + 0, x0 + c0);
    store_le32(out + 4, x1 + c1);
    store_le32(out + 8, x2 + c2);
    store_le32(out + 12, x3 + c3);
    store_le32(out + 16, x4 + key[0]);
    store_le32(out + 20, x5 + key[1]);
    store_le32(out + 24, x6 + key[2]);
    store_le32(out + 28, x7 + key[3]);
    store_le32(out + 32, x8 + key[4]);
    store_le32(out + 36, x9 + key[5]);
    store_le32(out + 40, x10 + key[6]);
    store_le32(out + 44, x11 + key[7]);
    store_le32(out + 48, x12 + counter);
    store_le32(out + 52, x13 + nonce[0]);
    store_le32(out + 56, x14 + nonce[1]);
    store_le32(out + 60, x15 + nonce[2]);
}

#undef PADLOCK_QUARTER_ROUND

}  // namespace

ChaCha8Rng::ChaCha8Rng(std::span<const std::uint8_t, kKeyBytes> key,
                       std::span<const std::uint8_t, kNonceBytes> nonce) {
    for (std::size_t i = 0; i < 8; ++i) key_words_[i] = load_le32(key.data() + 4 * i);
    for (std::size_t i = 0; i < 3; ++i) nonce_words_[i] = load_le32(nonce.data() + 4 * i);
}

ChaCha8Rng ChaCha8Rng::from_system_entropy() {
    std::array<std::uint8_t, kKeyBytes> key{};
    std::array<std::uint8_t, kNonceBytes> nonce{};
    if (::getentropy(key.data(), key.size()) != 0 ||
        ::getentropy(nonce.data(), nonce.size()) != 0)
        throw Error("getentropy failed");
    return ChaCha8Rng(key, nonce);
}

void ChaCha8Rng::refill_() {
    if (exhausted_)
        throw ReseedRequiredError("chacha8: block counter exhausted; reseed with a fresh (key, nonce)");
    chacha8_block(key_words_, counter_, nonce_words_, buf_.data());
    if (counter_ == UINT32_MAX)
        exhausted_ = true;
    else
        ++counter_;
    buf_pos_ = 0;
}

void ChaCha8Rng::fill(std::uint8_t* out, std::size_t n) {
    while (n > 0) {
        if (buf_pos_ == buf_.size()) refill_();
        std::size_t take = std::min(n, buf_.size() - buf_pos_);
        std::memcpy(out, buf_.data() + buf_pos_, take);
        buf_pos_ += take;
        out += take;
        n -= take;
    }
}

std::vector<std::uint8_t> ChaCha8Rng::next_bytes(std::size_t n) {
    std::vector<std::uint8_t> out(n);
    fill(out.data(), n);
    return out;
}

void ChaCha8Rng::seek_block(std::uint32_t block) {
    counter_ = block;
    exhausted_ = false;
    buf_pos_ = buf_.size();
}

}  // namespace padlock
