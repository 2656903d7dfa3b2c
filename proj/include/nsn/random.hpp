#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nsn {

/// 64-bit FNV-1a; stable across platforms and runs.
constexpr std::uint64_t stable_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) {
    return mix_seed(seed ^ stable_hash(key));
}

/// Seeded stream with portable distributions (std distributions are implementation-defined).
/// Counts the raw draws so records can state the stream position.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() {
        ++draws_;
        return engine_();
    }

    /// Uniform integer in [lo, hi], by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return lo + static_cast<std::int64_t>(next());
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
        std::uint64_t v;
        do v = next();
        while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t draws() const { return draws_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
};

}  // namespace nsn
