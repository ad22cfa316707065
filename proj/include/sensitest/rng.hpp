#pragma once

// Counter-based random streams. A stream is addressed by (seed, stream id);
// its position is a plain counter, so the full generator state is three
// integers and any replicate can be regenerated in isolation.

#include <array>
#include <cstdint>
#include <string_view>

#include "sensitest/normal.hpp"

namespace sensitest {

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
struct Philox4x32 {
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) noexcept {
        constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
        constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = std::uint64_t{M0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{M1} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }
};

class RandomStream {
public:
    RandomStream() = default;
    RandomStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t position = 0) noexcept
        : seed_(seed), stream_(stream), position_(position) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    /// Number of 64-bit words consumed so far.
    std::uint64_t position() const noexcept { return position_; }

    std::uint64_t next_u64() noexcept {
        const std::uint64_t block = position_ >> 1;
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
                                      static_cast<std::uint32_t>(stream_),
                                      static_cast<std::uint32_t>(stream_ >> 32)};
        const Philox4x32::Key key{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)};
        const auto out = Philox4x32::generate(ctr, key);
        const bool hi = (position_ & 1u) != 0;
        ++position_;
        return hi ? (std::uint64_t{out[3]} << 32 | out[2]) : (std::uint64_t{out[1]} << 32 | out[0]);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double open_uniform() noexcept { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    bool bernoulli(double prob) noexcept { return uniform() < prob; }

    double standard_normal() { return normal::quantile(open_uniform()); }

    friend bool operator==(const RandomStream&, const RandomStream&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t position_ = 0;
};

/// 64-bit FNV-1a, used to derive stable stream ids from labels.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// SplitMix64 finalizer for combining seeds.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace sensitest
