#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace rft {

/// SplitMix64 finalizer; used to fan one user seed out into independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t s = mix64(seed);
    for (auto p : path) s = mix64(s ^ mix64(p + 0x632BE59BD9B4E019ULL));
    return s;
}

/// FNV-1a; stable stream ids for named streams (tensor names, purposes).
constexpr std::uint64_t hash_name(std::string_view name) noexcept
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Stream ids for the single `seed` fan-out.
namespace streams {
inline constexpr std::uint64_t init = hash_name("init");
inline constexpr std::uint64_t dropout = hash_name("dropout");
inline constexpr std::uint64_t mask = hash_name("mask");
inline constexpr std::uint64_t shuffle = hash_name("shuffle");
inline constexpr std::uint64_t bootstrap = hash_name("bootstrap");
} // namespace streams

/// mt19937_64 with hand-rolled conversions, so draws are identical on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

} // namespace rft
