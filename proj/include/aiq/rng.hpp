#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace aiq {

/// Counter-based seed derivation. The result depends only on the values and
/// their order, never on scheduling, so any task can recompute its seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
    return h;
}

/// Roles mixed into derived seeds so that streams for different purposes
/// never coincide.
enum class SeedRole : std::uint64_t {
    program = 0x70726f67,
    environment = 0x656e7669,
    agent = 0x6167656e,
    dry_run = 0x64727972,
    synthetic = 0x73796e74,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedRole role) {
    return derive_seed({base, static_cast<std::uint64_t>(role)});
}

/// mt19937_64 with distribution code that is identical on every standard
/// library, so seeds reproduce results across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        // Rejection keeps the draw exactly uniform.
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n + 1) % n;
        std::uint64_t x = engine_();
        while (x > limit) x = engine_();
        return x % n;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool coin() { return (engine_() >> 63) != 0; }

private:
    std::mt19937_64 engine_;
};

}  // namespace aiq
