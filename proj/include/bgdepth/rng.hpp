#pragma once

#include <cstdint>
#include <string_view>

namespace bgdepth {

// Counter-based pseudo-random generator. State is a (key, counter) pair of
// 64-bit words; output i of a stream is a pure function mix(key, i), so the
// state serializes to two integers and any position can be reproduced
// exactly on any platform. Streams are split by deriving a child key from
// the parent key and a lane index, never by sharing the counter.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(derive_key(seed)), counter_(0) {}
    Rng(std::uint64_t key, std::uint64_t counter, bool raw) : key_(key), counter_(counter) { (void)raw; }

    std::uint64_t next_u64();

    // Uniform in [0, 1), 53-bit resolution.
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);
    // Standard normal via Box-Muller; consumes exactly two draws.
    double normal();

    // Independent child stream for the given lane.
    Rng split(std::uint64_t lane) const;
    Rng split(std::string_view label) const;

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    static std::uint64_t derive_key(std::uint64_t seed);

    std::uint64_t key_;
    std::uint64_t counter_;
};

// Deterministic in-place Fisher-Yates shuffle.
template <typename T>
void shuffle(T* begin, std::size_t n, Rng& rng) {
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
        T tmp = begin[i - 1];
        begin[i - 1] = begin[j];
        begin[j] = tmp;
    }
}

}  // namespace bgdepth
