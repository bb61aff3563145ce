#include "bgdepth/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace bgdepth {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t key, std::uint64_t counter) {
    return splitmix64(splitmix64(counter) ^ key);
}

}  // namespace

std::uint64_t Rng::derive_key(std::uint64_t seed) {
    return splitmix64(seed ^ 0xA0761D6478BD642Full);
}

std::uint64_t Rng::next_u64() {
    return mix(key_, counter_++);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    // Rejection sampling keeps the distribution exact for any n.
    const std::uint64_t limit = ~0ull - (~0ull % n + 1) % n;
    std::uint64_t v = next_u64();
    while (v > limit) v = next_u64();
    return v % n;
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Rng Rng::split(std::uint64_t lane) const {
    return Rng(mix(key_ ^ 0x6A09E667F3BCC909ull, lane), 0, true);
}

Rng Rng::split(std::string_view label) const {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return split(h);
}

}  // namespace bgdepth
